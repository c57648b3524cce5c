#include "run_config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace netconv::cli {

ingest::ProtocolSpecOptions SynthSection::options() const {
  ingest::ProtocolSpecOptions o;
  o.num_classes = classes;
  o.per_class = per_class;
  o.packets_per_flow = packets_per_flow;
  o.tokens_per_packet = tokens_per_packet;
  o.min_packets = min_packets;
  o.field_variants = field_variants;
  o.template_seed = template_seed;
  return o;
}

void RunConfig::apply_seed() {
  pretrain.seed = seed;
  finetune.seed = seed;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"threads", c.threads},
       {"model", c.model},
       {"pretrain", c.pretrain},
       {"finetune", c.finetune},
       {"ingest",
        {{"packets_per_flow", c.ingest.packets_per_flow},
         {"bytes_per_packet", c.ingest.bytes_per_packet},
         {"idle_timeout_s", c.ingest.idle_timeout_s},
         {"labels_from_dirs", c.ingest.labels_from_dirs}}},
       {"synth",
        {{"classes", c.synth.classes},
         {"per_class", c.synth.per_class},
         {"packets_per_flow", c.synth.packets_per_flow},
         {"tokens_per_packet", c.synth.tokens_per_packet},
         {"min_packets", c.synth.min_packets},
         {"field_variants", c.synth.field_variants},
         {"template_seed", c.synth.template_seed}}},
       {"bench",
        {{"batch_sizes", c.bench.batch_sizes},
         {"warmup", c.bench.warmup},
         {"iters", c.bench.iters},
         {"lengths", c.bench.lengths},
         {"scaling_d_model", c.bench.scaling_d_model},
         {"repeats", c.bench.repeats}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::set<std::string> known{"seed",     "threads", "model",  "pretrain",
                                           "finetune", "ingest",  "synth",  "bench"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown config section '" + key + "'");
  }
  const RunConfig d;
  c.seed = j.value("seed", d.seed);
  c.threads = j.value("threads", d.threads);
  if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("pretrain")) c.pretrain = j.at("pretrain").get<pretrain::PretrainConfig>();
  if (j.contains("finetune")) c.finetune = j.at("finetune").get<finetune::FinetuneConfig>();
  const auto in = j.value("ingest", nlohmann::json::object());
  c.ingest.packets_per_flow = in.value("packets_per_flow", d.ingest.packets_per_flow);
  c.ingest.bytes_per_packet = in.value("bytes_per_packet", d.ingest.bytes_per_packet);
  c.ingest.idle_timeout_s = in.value("idle_timeout_s", d.ingest.idle_timeout_s);
  c.ingest.labels_from_dirs = in.value("labels_from_dirs", d.ingest.labels_from_dirs);
  const auto sy = j.value("synth", nlohmann::json::object());
  c.synth.classes = sy.value("classes", d.synth.classes);
  c.synth.per_class = sy.value("per_class", d.synth.per_class);
  c.synth.packets_per_flow = sy.value("packets_per_flow", d.synth.packets_per_flow);
  c.synth.tokens_per_packet = sy.value("tokens_per_packet", d.synth.tokens_per_packet);
  c.synth.min_packets = sy.value("min_packets", d.synth.min_packets);
  c.synth.field_variants = sy.value("field_variants", d.synth.field_variants);
  c.synth.template_seed = sy.value("template_seed", d.synth.template_seed);
  const auto be = j.value("bench", nlohmann::json::object());
  c.bench.batch_sizes = be.value("batch_sizes", d.bench.batch_sizes);
  c.bench.warmup = be.value("warmup", d.bench.warmup);
  c.bench.iters = be.value("iters", d.bench.iters);
  c.bench.lengths = be.value("lengths", d.bench.lengths);
  c.bench.scaling_d_model = be.value("scaling_d_model", d.bench.scaling_d_model);
  c.bench.repeats = be.value("repeats", d.bench.repeats);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid config " + path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void write_resolved_config(const RunConfig& c, const std::filesystem::path& output) {
  const std::filesystem::path path = output.string() + ".config.json";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json(c).dump(2) << '\n';
}

}  // namespace netconv::cli
