#include "netconv/finetune/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "netconv/common/logging.hpp"
#include "netconv/common/random.hpp"
#include "netconv/ingest/corpus.hpp"
#include "netconv/pretrain/adam.hpp"

namespace netconv::finetune {

using model::ParameterStore;
using tensor::Tape;

void FinetuneConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
  for (const double f : {train_fraction, val_fraction, test_fraction}) {
    if (f < 0 || f > 1) throw std::invalid_argument("split fractions must lie in [0, 1]");
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
  if (num_classes == 1) throw std::invalid_argument("num_classes must be >= 2");
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"num_classes", c.num_classes},
                     {"freeze_encoder", c.freeze_encoder},
                     {"seed", c.seed},
                     {"train_fraction", c.train_fraction},
                     {"val_fraction", c.val_fraction},
                     {"test_fraction", c.test_fraction}};
  j["pool_mode"] = c.pool_mode ? nlohmann::json(model::to_string(*c.pool_mode)) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  const FinetuneConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.freeze_encoder = j.value("freeze_encoder", d.freeze_encoder);
  c.seed = j.value("seed", d.seed);
  c.train_fraction = j.value("train_fraction", d.train_fraction);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.test_fraction = j.value("test_fraction", d.test_fraction);
  c.pool_mode.reset();
  if (j.contains("pool_mode") && !j.at("pool_mode").is_null()) {
    c.pool_mode = model::parse_pool_mode(j.at("pool_mode").get<std::string>());
  }
  c.validate();
}

namespace {

std::map<std::uint32_t, std::vector<std::size_t>> by_label(std::span<const ingest::TokenSequence> records) {
  ingest::require_labeled(records);
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[*records[i].label].push_back(i);
  return groups;
}

std::size_t infer_classes(const FinetuneConfig& cfg, std::initializer_list<std::span<const ingest::TokenSequence>> sets) {
  std::uint32_t top = 0;
  for (const auto& s : sets) {
    ingest::require_labeled(s);
    if (!s.empty()) top = std::max(top, ingest::max_label(s));
  }
  const std::size_t k = cfg.num_classes ? cfg.num_classes : std::max<std::size_t>(2, top + 1);
  if (top >= k) {
    throw std::out_of_range(fmt::format("label {} out of range for {} classes", top, k));
  }
  return k;
}

struct Batch {
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint32_t> labels;
  std::size_t seq_len = 0;
};

Batch gather(std::span<const ingest::TokenSequence> records, std::span<const std::size_t> idx) {
  Batch b;
  b.seq_len = records[idx.front()].tokens.size();
  for (const auto i : idx) {
    const auto& r = records[i];
    if (r.tokens.size() != b.seq_len) throw std::invalid_argument("records in a batch must share one length");
    b.tokens.insert(b.tokens.end(), r.tokens.begin(), r.tokens.end());
    b.labels.push_back(r.label.value_or(0));
  }
  return b;
}

std::vector<std::uint32_t> labels_of(std::span<const ingest::TokenSequence> records) {
  std::vector<std::uint32_t> out;
  for (const auto& r : records) out.push_back(*r.label);
  return out;
}

}  // namespace

Split stratified_split(std::span<const ingest::TokenSequence> records, const FinetuneConfig& cfg) {
  cfg.validate();
  Split s;
  for (auto& [label, idx] : by_label(records)) {
    Rng rng = make_rng(cfg.seed, {0x5B117, label});
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    const auto n_train = std::min(idx.size(), static_cast<std::size_t>(std::llround(n * cfg.train_fraction)));
    const auto n_val =
        std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(n * cfg.val_fraction)));
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.insert(s.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

std::vector<ingest::TokenSequence> select(std::span<const ingest::TokenSequence> records,
                                          std::span<const std::size_t> indices) {
  std::vector<ingest::TokenSequence> out;
  out.reserve(indices.size());
  for (const auto i : indices) out.push_back(records[i]);
  return out;
}

std::vector<std::uint32_t> predict(const ParameterStore<float>& params, const model::ModelConfig& config,
                                   std::span<const ingest::TokenSequence> records, std::size_t batch_size) {
  if (!params.contains("head.fc2.bias")) throw std::invalid_argument("checkpoint has no classification head");
  std::vector<std::uint32_t> out;
  out.reserve(records.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    idx.resize(std::min(batch_size, records.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto b = gather(records, idx);
    Tape<float> tape(false);
    const auto logits = model::classify(tape, config, params, model::encode(tape, config, params, {b.tokens, b.seq_len}));
    const auto& lv = logits.value();
    for (std::size_t r = 0; r < lv.rows(); ++r) {
      const auto row = lv.row(r);
      out.push_back(static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

EvalReport evaluate(const ParameterStore<float>& params, const model::ModelConfig& config,
                    std::span<const ingest::TokenSequence> records) {
  ingest::require_labeled(records);
  const std::size_t k = params.contains("head.fc2.bias") ? params.at("head.fc2.bias").value().size() : 0;
  if (k == 0) throw std::invalid_argument("checkpoint has no classification head");
  const auto truth = labels_of(records);
  for (const auto t : truth) {
    if (t >= k) throw std::out_of_range(fmt::format("label {} out of range for {} classes", t, k));
  }
  return make_report(truth, predict(params, config, records), k);
}

EvalReport evaluate(const model::Checkpoint& checkpoint, std::span<const ingest::TokenSequence> records) {
  return evaluate(checkpoint.params, checkpoint.config, records);
}

FinetuneResult finetune(const model::Checkpoint& pretrained, std::span<const ingest::TokenSequence> train,
                        std::span<const ingest::TokenSequence> val, std::span<const ingest::TokenSequence> test,
                        const FinetuneConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("training split is empty");
  const std::size_t k = infer_classes(cfg, {train, val, test});

  FinetuneResult res;
  res.config = pretrained.config;
  if (cfg.pool_mode) res.config.pool_mode = *cfg.pool_mode;
  res.params = pretrained.params.clone();
  model::init_classifier_head(res.params, res.config, k, cfg.seed);
  res.params.set_requires_grad("", !cfg.freeze_encoder);
  res.params.set_requires_grad("head.", true);
  res.params.remove_prefix("mlm.");

  std::vector<std::size_t> seen(k, 0);
  for (const auto& r : train) ++seen[*r.label];
  for (std::size_t c = 0; c < k; ++c) {
    if (seen[c] == 0) {
      res.warnings.push_back(fmt::format("class {} has no training records", c));
      log().warn("{}", res.warnings.back());
    }
  }

  auto val_f1 = [&] { return val.empty() ? 0.0 : evaluate(res.params, res.config, val).macro_f1; };
  res.history.push_back({0, 0.0, val_f1()});

  pretrain::Adam opt({.lr = cfg.lr});
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(cfg.seed, {0xF1E, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const auto b = gather(train, idx);
      Tape<float> tape;
      const auto enc = model::encode(tape, res.config, res.params, {b.tokens, b.seq_len});
      const auto loss = tensor::cross_entropy(tape, model::classify(tape, res.config, res.params, enc), b.labels);
      if (!std::isfinite(loss.value().item())) {
        throw std::runtime_error(fmt::format("non-finite fine-tuning loss in epoch {}", epoch));
      }
      tape.backward(loss);
      opt.step(res.params);
      res.params.zero_grad();
      loss_total += loss.value().item();
      ++batches;
    }
    res.history.push_back({epoch, loss_total / static_cast<double>(batches), val_f1()});
    log().info("finetune epoch {} loss {:.4f} val macro F1 {:.4f}", epoch, res.history.back().train_loss,
               res.history.back().val_macro_f1);
  }
  res.params.set_requires_grad("", true);
  if (!val.empty()) res.val_report = evaluate(res.params, res.config, val);
  if (!test.empty()) res.test_report = evaluate(res.params, res.config, test);
  return res;
}

FinetuneResult finetune(const model::Checkpoint& pretrained, std::span<const ingest::TokenSequence> records,
                        const FinetuneConfig& cfg) {
  const auto split = stratified_split(records, cfg);
  return finetune(pretrained, select(records, split.train), select(records, split.val), select(records, split.test),
                  cfg);
}

model::Checkpoint to_checkpoint(const FinetuneResult& result, const FinetuneConfig& cfg) {
  model::Checkpoint ck;
  ck.config = result.config;
  ck.params = result.params.clone();
  ck.meta = {{"kind", "finetune"},
             {"num_classes", result.params.at("head.fc2.bias").value().size()},
             {"finetune", cfg}};
  return ck;
}

std::vector<ingest::TokenSequence> few_shot_subset(std::span<const ingest::TokenSequence> records,
                                                   std::size_t shots, std::uint64_t seed,
                                                   std::vector<std::string>* warnings) {
  std::vector<std::size_t> chosen;
  for (auto& [label, idx] : by_label(records)) {
    if (idx.size() < shots) {
      const auto msg = fmt::format("class {} has only {} records (< {} shots); taking all", label, idx.size(), shots);
      log().warn("{}", msg);
      if (warnings) warnings->push_back(msg);
      chosen.insert(chosen.end(), idx.begin(), idx.end());
      continue;
    }
    Rng rng = make_rng(seed, {0xFE5, label});
    std::vector<std::size_t> pick;
    std::sample(idx.begin(), idx.end(), std::back_inserter(pick), shots, rng);
    chosen.insert(chosen.end(), pick.begin(), pick.end());
  }
  std::sort(chosen.begin(), chosen.end());
  return select(records, chosen);
}

std::vector<ScalabilityRow> scalability_run(const model::Checkpoint& pretrained,
                                            std::span<const ingest::TokenSequence> records,
                                            std::size_t source_tokens_per_packet, const FinetuneConfig& cfg,
                                            std::span<const std::size_t> lengths) {
  const auto split = stratified_split(records, cfg);
  std::vector<ScalabilityRow> rows;
  for (const auto tpp : lengths) {
    if (tpp > source_tokens_per_packet) {
      throw std::invalid_argument(fmt::format("length {} exceeds the source layout ({} tokens per packet)", tpp,
                                              source_tokens_per_packet));
    }
    std::vector<ingest::TokenSequence> cut;
    cut.reserve(records.size());
    for (const auto& r : records) cut.push_back(ingest::truncate_packets(r, source_tokens_per_packet, tpp));
    const auto res = finetune(pretrained, select(cut, split.train), select(cut, split.val), select(cut, split.test), cfg);
    std::size_t encoder_params = 0;
    for (const auto& [name, v] : res.params) {
      if (!name.starts_with("head.")) encoder_params += v.value().size();
    }
    rows.push_back({tpp, 2 * tpp, res.test_report.macro_f1, encoder_params});
    log().info("scalability {} tokens/packet: macro F1 {:.4f}", tpp, rows.back().macro_f1);
  }
  return rows;
}

std::string scalability_csv(std::span<const ScalabilityRow> rows) {
  std::string out = "tokens_per_packet,bytes_per_packet,macro_f1,param_count\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.6f},{}\n", r.tokens_per_packet, r.bytes_per_packet, r.macro_f1, r.param_count);
  }
  return out;
}

}  // namespace netconv::finetune
