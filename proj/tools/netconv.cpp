#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "netconv/common/logging.hpp"
#include "netconv/ingest/corpus.hpp"
#include "netconv/model/checkpoint.hpp"
#include "netconv/model/netconv.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace netconv;
using nlohmann::json;

namespace {

struct Paths {
  std::vector<fs::path> inputs;
  fs::path corpus, checkpoint, out, report, log, resume;
  std::string mask_mode, gate_mode, pool_mode, bench_mode = "all";
  std::vector<std::size_t> shots{1, 5, 10, 20, 50};
  std::vector<std::size_t> lengths{finetune::kScalabilityLengths};
  std::size_t source_packets = 5;
  bool freeze = false, no_wbs = false;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void require_file(const fs::path& path, const char* what) {
  if (path.empty()) throw std::runtime_error(std::string("missing ") + what);
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " not found: " + path.string());
}

std::size_t threads_or(const cli::RunConfig& rc, std::size_t fallback) {
  return rc.threads ? rc.threads : std::max<std::size_t>(fallback, 1);
}

json finetune_report(const finetune::FinetuneResult& r) {
  json history = json::array();
  for (const auto& h : r.history) {
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_macro_f1", h.val_macro_f1}});
  }
  return {{"history", history}, {"validation", r.val_report}, {"test", r.test_report}, {"warnings", r.warnings}};
}

int run_ingest(cli::RunConfig& rc, const Paths& p) {
  if (p.inputs.empty()) throw std::runtime_error("missing input captures");
  for (const auto& in : p.inputs) require_file(in, "input");
  std::vector<std::string> classes;
  auto captures = ingest::discover_captures(p.inputs, rc.ingest.labels_from_dirs, &classes);
  ingest::IngestOptions opt;
  opt.layout = {rc.ingest.packets_per_flow, rc.ingest.bytes_per_packet};
  opt.idle_timeout_s = rc.ingest.idle_timeout_s;
  opt.threads = threads_or(rc, std::thread::hardware_concurrency());
  const auto summary = ingest::ingest_captures(std::move(captures), opt);
  ingest::write_corpus(p.out, summary.records, static_cast<std::uint32_t>(opt.layout.tokens_per_record()));
  write_json(p.out.string() + ".summary.json", {{"files", summary.files},
                                                {"packets", summary.packets},
                                                {"flows", summary.flows},
                                                {"records", summary.records.size()},
                                                {"truncated_records", summary.truncated_records},
                                                {"classes", classes}});
  cli::write_resolved_config(rc, p.out);
  log().info("ingest: {} files, {} flows -> {}", summary.files, summary.flows, p.out.string());
  return 0;
}

int run_synth(cli::RunConfig& rc, const Paths& p) {
  const auto records = ingest::synthesize_corpus(ingest::protocol_like_spec(rc.synth.options()), rc.seed);
  ingest::write_corpus(p.out, records);
  cli::write_resolved_config(rc, p.out);
  log().info("synth: {} records -> {}", records.size(), p.out.string());
  return 0;
}

int run_pretrain(cli::RunConfig& rc, const Paths& p) {
  require_file(p.corpus, "corpus");
  const fs::path log_path = p.log.empty() ? fs::path(p.out.string() + ".csv") : p.log;
  std::optional<fs::path> resume;
  if (!p.resume.empty()) {
    require_file(p.resume, "resume checkpoint");
    resume = p.resume;
  }
  cli::write_resolved_config(rc, p.out);
  const auto result = pretrain::run_pretraining(rc.pretrain, rc.model, p.corpus, {p.out, log_path}, resume);
  log().info("pretrain: {} steps -> {}", result.final_step, p.out.string());
  return 0;
}

int run_finetune(cli::RunConfig& rc, const Paths& p) {
  require_file(p.checkpoint, "checkpoint");
  require_file(p.corpus, "corpus");
  const auto pretrained = model::load_checkpoint(p.checkpoint);
  const auto records = ingest::read_corpus(p.corpus);
  const auto result = finetune::finetune(pretrained, records, rc.finetune);
  model::save_checkpoint(p.out, finetune::to_checkpoint(result, rc.finetune));
  write_json(p.report.empty() ? fs::path(p.out.string() + ".report.json") : p.report, finetune_report(result));
  cli::write_resolved_config(rc, p.out);
  return 0;
}

int run_eval(cli::RunConfig& rc, const Paths& p) {
  require_file(p.checkpoint, "checkpoint");
  require_file(p.corpus, "corpus");
  const auto report = finetune::evaluate(model::load_checkpoint(p.checkpoint), ingest::read_corpus(p.corpus));
  write_json(p.out, report);
  cli::write_resolved_config(rc, p.out);
  return 0;
}

int run_fewshot(cli::RunConfig& rc, const Paths& p) {
  require_file(p.checkpoint, "checkpoint");
  require_file(p.corpus, "corpus");
  const auto pretrained = model::load_checkpoint(p.checkpoint);
  const auto records = ingest::read_corpus(p.corpus);
  ingest::require_labeled(records);
  const auto split = finetune::stratified_split(records, rc.finetune);
  const auto train = finetune::select(records, split.train);
  const auto val = finetune::select(records, split.val);
  const auto test = finetune::select(records, split.test);
  std::string csv = "shots,train_records,macro_f1,accuracy\n";
  for (const auto shots : p.shots) {
    std::vector<std::string> warnings;
    const auto subset = finetune::few_shot_subset(train, shots, rc.seed, &warnings);
    for (const auto& w : warnings) log().warn("{}", w);
    const auto r = finetune::finetune(pretrained, subset, val, test, rc.finetune);
    csv += fmt::format("{},{},{:.6f},{:.6f}\n", shots, subset.size(), r.test_report.macro_f1,
                       r.test_report.accuracy);
  }
  write_text(p.out, csv);
  cli::write_resolved_config(rc, p.out);
  return 0;
}

int run_scalability(cli::RunConfig& rc, const Paths& p) {
  require_file(p.checkpoint, "checkpoint");
  require_file(p.corpus, "corpus");
  const auto pretrained = model::load_checkpoint(p.checkpoint);
  const auto records = ingest::read_corpus(p.corpus);
  if (records.empty()) throw std::runtime_error("corpus is empty");
  const std::size_t len = records.front().tokens.size();
  if (p.source_packets == 0 || len % p.source_packets) {
    throw std::runtime_error("record length " + std::to_string(len) + " is not a multiple of --packets");
  }
  const auto rows = finetune::scalability_run(pretrained, records, len / p.source_packets, rc.finetune, p.lengths);
  write_text(p.out, finetune::scalability_csv(rows));
  cli::write_resolved_config(rc, p.out);
  return 0;
}

int run_bench(cli::RunConfig& rc, const Paths& p) {
  if (p.bench_mode != "all" && p.bench_mode != "throughput" && p.bench_mode != "scaling") {
    throw std::runtime_error("unknown bench mode '" + p.bench_mode + "'");
  }
  if (p.bench_mode != "scaling") {
    model::Checkpoint ck;
    if (!p.checkpoint.empty()) {
      require_file(p.checkpoint, "checkpoint");
      ck = model::load_checkpoint(p.checkpoint);
    } else {
      ck.config = rc.model;
      ck.params = model::init_model<float>(rc.model, rc.seed);
    }
    std::vector<ingest::TokenSequence> records;
    if (!p.corpus.empty()) {
      require_file(p.corpus, "corpus");
      records = ingest::read_corpus(p.corpus);
    } else {
      records = ingest::synthesize_corpus(ingest::protocol_like_spec(rc.synth.options()), rc.seed);
    }
    for (auto& r : records)
      for (auto& t : r.tokens) {
        if (t >= ck.config.vocab_size) throw std::runtime_error("corpus token outside the model vocabulary");
      }
    bench::ThroughputConfig tc;
    tc.batch_sizes = rc.bench.batch_sizes;
    tc.warmup = rc.bench.warmup;
    tc.iters = rc.bench.iters;
    tc.threads = threads_or(rc, 1);
    const auto rep = bench::measure_throughput(ck.params, ck.config, records, tc);
    write_text(p.out.string() + ".throughput.csv", bench::throughput_csv(rep));
    write_json(p.out.string() + ".throughput.json", rep);
  }
  if (p.bench_mode != "throughput") {
    bench::ScalingConfig sc;
    sc.lengths = rc.bench.lengths;
    sc.d_model = rc.bench.scaling_d_model;
    sc.repeats = rc.bench.repeats;
    sc.seed = rc.seed;
    const auto rep = bench::scaling_curve(sc);
    write_text(p.out.string() + ".scaling.csv", bench::scaling_csv(rep));
    write_json(p.out.string() + ".scaling.json", rep);
  }
  cli::write_resolved_config(rc, p.out);
  return 0;
}

std::optional<fs::path> config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return fs::path(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return fs::path(a.substr(9));
  }
  return std::nullopt;
}

void model_flags(CLI::App* app, cli::RunConfig& rc, Paths& p) {
  app->add_option("--vocab-size", rc.model.vocab_size, "Vocabulary size including PAD and MASK");
  app->add_option("--d-model", rc.model.d_model, "Hidden width");
  app->add_option("--layers", rc.model.num_layers, "Number of traffic convolution layers");
  app->add_option("--kernel", rc.model.kernel_size, "Convolution kernel size");
  app->add_flag("--no-wbs", p.no_wbs, "Disable window-wise softmax scoring of the kernels");
  app->add_option("--gate", p.gate_mode, "Gate: sbg, relu, gelu or none");
}

void finetune_flags(CLI::App* app, cli::RunConfig& rc, Paths& p) {
  app->add_option("--epochs", rc.finetune.epochs, "Fine-tuning epochs");
  app->add_option("--lr", rc.finetune.lr, "Learning rate");
  app->add_option("--batch-size", rc.finetune.batch_size, "Batch size");
  app->add_option("--num-classes", rc.finetune.num_classes, "Classes (0: infer from labels)");
  app->add_option("--pool", p.pool_mode, "Pooling override: max or mean");
  app->add_flag("--freeze-encoder", p.freeze, "Train only the classification head");
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  cli::RunConfig rc;
  Paths p;
  try {
    if (const auto cfg = config_path(argc, argv)) rc = cli::load_run_config(*cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"netconv: traffic representation learning with convolutional encoders"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_file;
  app.add_option("--config", config_file, "JSON run configuration; flags override its values");
  app.add_option("--seed", rc.seed, "Seed for every random choice of the run");
  app.add_option("--threads", rc.threads, "Worker threads (default: cores for ingest, 1 otherwise)");

  auto* ing = app.add_subcommand("ingest", "Turn pcap/pcapng captures into a token corpus");
  ing->add_option("inputs", p.inputs, "Capture files or directories")->required();
  ing->add_option("--out", p.out, "Output corpus")->required();
  ing->add_flag("--labels-from-dirs", rc.ingest.labels_from_dirs, "Label captures by their parent directory");
  ing->add_option("--packets", rc.ingest.packets_per_flow, "Packets per flow record");
  ing->add_option("--bytes-per-packet", rc.ingest.bytes_per_packet, "Bytes kept per packet");
  ing->add_option("--idle-timeout", rc.ingest.idle_timeout_s, "Flow idle timeout in seconds");

  auto* syn = app.add_subcommand("synth", "Generate a labelled synthetic corpus");
  syn->add_option("--out", p.out, "Output corpus")->required();
  syn->add_option("--classes", rc.synth.classes, "Number of classes");
  syn->add_option("--per-class", rc.synth.per_class, "Records per class");
  syn->add_option("--packets", rc.synth.packets_per_flow, "Packets per record");
  syn->add_option("--tokens-per-packet", rc.synth.tokens_per_packet, "Tokens per packet");
  syn->add_option("--min-packets", rc.synth.min_packets, "Fewest packets a record keeps");
  syn->add_option("--variants", rc.synth.field_variants, "Values per class field");

  auto* pre = app.add_subcommand("pretrain", "Masked-token pre-training of an encoder");
  pre->add_option("--corpus", p.corpus, "Training corpus")->required();
  pre->add_option("--out", p.out, "Output checkpoint")->required();
  pre->add_option("--log", p.log, "CSV log (default <out>.csv)");
  pre->add_option("--resume", p.resume, "Continue from a checkpoint");
  pre->add_option("--steps", rc.pretrain.steps, "Optimizer steps");
  pre->add_option("--batch-size", rc.pretrain.batch_size, "Records per step");
  pre->add_option("--lr", rc.pretrain.lr, "Peak learning rate");
  pre->add_option("--mask-rate", rc.pretrain.mask.rate, "Fraction of valid tokens to mask");
  pre->add_option("--mask-mode", p.mask_mode, "span or random");
  pre->add_option("--log-interval", rc.pretrain.log_interval, "Steps per log row");
  pre->add_option("--checkpoint-interval", rc.pretrain.checkpoint_interval, "Steps between checkpoints (0: final)");
  model_flags(pre, rc, p);

  auto* fin = app.add_subcommand("finetune", "Fine-tune a classifier on a labelled corpus");
  fin->add_option("--checkpoint", p.checkpoint, "Pre-trained checkpoint")->required();
  fin->add_option("--corpus", p.corpus, "Labelled corpus")->required();
  fin->add_option("--out", p.out, "Output checkpoint")->required();
  fin->add_option("--report", p.report, "JSON report (default <out>.report.json)");
  finetune_flags(fin, rc, p);

  auto* ev = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  ev->add_option("--checkpoint", p.checkpoint, "Fine-tuned checkpoint")->required();
  ev->add_option("--corpus", p.corpus, "Labelled corpus")->required();
  ev->add_option("--out", p.out, "JSON report")->required();

  auto* few = app.add_subcommand("fewshot", "Fine-tune on X labelled records per class");
  few->add_option("--checkpoint", p.checkpoint, "Pre-trained checkpoint")->required();
  few->add_option("--corpus", p.corpus, "Labelled corpus")->required();
  few->add_option("--out", p.out, "CSV report")->required();
  few->add_option("--shots", p.shots, "Records per class, one run each")->delimiter(',');
  finetune_flags(few, rc, p);

  auto* sca = app.add_subcommand("scalability", "Fine-tune at every extended packet length");
  sca->add_option("--checkpoint", p.checkpoint, "Pre-trained checkpoint")->required();
  sca->add_option("--corpus", p.corpus, "Labelled corpus at the longest layout")->required();
  sca->add_option("--out", p.out, "CSV report")->required();
  sca->add_option("--packets", p.source_packets, "Packets per record in the corpus");
  sca->add_option("--lengths", p.lengths, "Tokens per packet to evaluate")->delimiter(',');
  finetune_flags(sca, rc, p);

  auto* ben = app.add_subcommand("bench", "Throughput and complexity-scaling benchmarks");
  ben->add_option("--out", p.out, "Output prefix")->required();
  ben->add_option("--mode", p.bench_mode, "throughput, scaling or all");
  ben->add_option("--checkpoint", p.checkpoint, "Model to time (default: fresh from config)");
  ben->add_option("--corpus", p.corpus, "Records to feed (default: synthetic)");
  ben->add_option("--batch-sizes", rc.bench.batch_sizes, "Throughput batch sizes")->delimiter(',');
  ben->add_option("--warmup", rc.bench.warmup, "Untimed batches per size");
  ben->add_option("--iters", rc.bench.iters, "Timed batches per size");
  ben->add_option("--lengths", rc.bench.lengths, "Scaling sequence lengths")->delimiter(',');
  ben->add_option("--repeats", rc.bench.repeats, "Scaling repeats per length");
  model_flags(ben, rc, p);

  for (auto* sub : app.get_subcommands({})) {
    sub->footer("Global flags (before or after the subcommand): --config FILE, --seed N, --threads N");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    if (p.no_wbs) rc.model.use_wbs = false;
    if (!p.gate_mode.empty()) rc.model.gate_mode = model::parse_gate_mode(p.gate_mode);
    if (!p.pool_mode.empty()) rc.finetune.pool_mode = model::parse_pool_mode(p.pool_mode);
    if (p.freeze) rc.finetune.freeze_encoder = true;
    if (!p.mask_mode.empty()) {
      if (p.mask_mode != "span" && p.mask_mode != "random") throw std::invalid_argument("unknown mask mode '" + p.mask_mode + "'");
      rc.pretrain.mask.mode = p.mask_mode == "span" ? pretrain::MaskMode::span : pretrain::MaskMode::random;
    }
    rc.apply_seed();
    rc.model.validate();
    rc.pretrain.validate();
    rc.finetune.validate();

    if (ing->parsed()) return run_ingest(rc, p);
    if (syn->parsed()) return run_synth(rc, p);
    if (pre->parsed()) return run_pretrain(rc, p);
    if (fin->parsed()) return run_finetune(rc, p);
    if (ev->parsed()) return run_eval(rc, p);
    if (few->parsed()) return run_fewshot(rc, p);
    if (sca->parsed()) return run_scalability(rc, p);
    if (ben->parsed()) return run_bench(rc, p);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
