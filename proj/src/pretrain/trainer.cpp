#include "netconv/pretrain/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "netconv/common/logging.hpp"
#include "netconv/ingest/corpus.hpp"

namespace netconv::pretrain {

using model::ParameterStore;
using tensor::Tape;

AdamConfig PretrainConfig::adam() const {
  AdamConfig a;
  a.lr = lr;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.eps = eps;
  a.warmup_steps = static_cast<std::uint64_t>(std::ceil(warmup_fraction * static_cast<double>(steps)));
  return a;
}

void PretrainConfig::validate() const {
  mask.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
  if (warmup_fraction < 0 || warmup_fraction > 1) throw std::invalid_argument("warmup_fraction must be in [0, 1]");
  if (log_interval < 1) throw std::invalid_argument("log_interval must be >= 1");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"mask_rate", c.mask.rate},
                     {"geometric_p", c.mask.geometric_p},
                     {"max_span", c.mask.max_span},
                     {"mask_mode", c.mask.mode == MaskMode::span ? "span" : "random"},
                     {"steps", c.steps},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"warmup_fraction", c.warmup_fraction},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"seed", c.seed},
                     {"log_interval", c.log_interval},
                     {"checkpoint_interval", c.checkpoint_interval}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  const PretrainConfig d;
  c.mask.rate = j.value("mask_rate", d.mask.rate);
  c.mask.geometric_p = j.value("geometric_p", d.mask.geometric_p);
  c.mask.max_span = j.value("max_span", d.mask.max_span);
  const auto mode = j.value("mask_mode", std::string("span"));
  if (mode != "span" && mode != "random") throw std::invalid_argument("unknown mask mode '" + mode + "'");
  c.mask.mode = mode == "span" ? MaskMode::span : MaskMode::random;
  c.steps = j.value("steps", d.steps);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.seed = j.value("seed", d.seed);
  c.log_interval = j.value("log_interval", d.log_interval);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  c.validate();
}

MlmBatch make_mlm_batch(std::span<const ingest::TokenSequence> records, std::span<const std::size_t> indices,
                        const model::ModelConfig& model_cfg, const MaskConfig& mask, std::uint64_t seed,
                        std::uint64_t epoch) {
  MlmBatch b;
  if (indices.empty()) return b;
  b.seq_len = records[indices.front()].tokens.size();
  for (const auto r : indices) {
    const auto& tokens = records[r].tokens;
    if (tokens.size() != b.seq_len) throw std::invalid_argument("records in a batch must share one length");
    Rng rng = make_rng(seed, {r, epoch});
    const auto masked = apply_mask(tokens, sample_mask_plan(tokens, model_cfg.pad_id(), mask, rng),
                                   model_cfg.mask_id());
    const std::size_t base = b.tokens.size();
    b.tokens.insert(b.tokens.end(), masked.tokens.begin(), masked.tokens.end());
    for (const auto p : masked.positions) b.positions.push_back(base + p);
    b.targets.insert(b.targets.end(), masked.targets.begin(), masked.targets.end());
  }
  return b;
}

BatchSchedule::BatchSchedule(std::size_t num_records, std::size_t batch_size, std::uint64_t seed)
    : n_(num_records), batch_(batch_size), seed_(seed) {
  if (n_ == 0) throw std::invalid_argument("cannot schedule batches over an empty corpus");
}

const std::vector<std::size_t>& BatchSchedule::permutation(std::uint64_t epoch) {
  if (epoch != cached_epoch_) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    Rng rng = make_rng(seed_, {0x5C4ED, epoch});
    std::shuffle(perm_.begin(), perm_.end(), rng);
    cached_epoch_ = epoch;
  }
  return perm_;
}

std::vector<BatchSchedule::Slot> BatchSchedule::batch(std::uint64_t step) {
  std::vector<Slot> out;
  for (std::size_t j = 0; j < batch_; ++j) {
    const std::uint64_t q = step * batch_ + j;
    const std::uint64_t epoch = q / n_;
    out.push_back({permutation(epoch)[q % n_], epoch});
  }
  return out;
}

namespace {

std::size_t count_correct(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> targets) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) hits += predicted[i] == targets[i];
  return hits;
}

}  // namespace

StepStats pretrain_step(ParameterStore<float>& params, const model::ModelConfig& model_cfg, const MlmBatch& batch,
                        Adam& opt) {
  if (batch.positions.empty()) throw std::invalid_argument("batch has no masked positions");
  Tape<float> tape;
  const auto enc = model::encode(tape, model_cfg, params, {batch.tokens, batch.seq_len});
  std::vector<std::uint32_t> predicted;
  const auto loss = model::mlm_loss(tape, model_cfg, params, enc.hidden, batch.positions, batch.targets, &predicted);

  StepStats s;
  s.loss_mean = loss.value().item();
  s.masked = batch.positions.size();
  s.loss_sum = s.loss_mean * static_cast<double>(s.masked);
  s.correct = count_correct(predicted, batch.targets);
  s.tokens = batch.tokens.size();
  if (!std::isfinite(s.loss_mean)) return s;
  tape.backward(loss);
  opt.step(params);
  params.zero_grad();
  return s;
}

StepStats evaluate_mlm(const ParameterStore<float>& params, const model::ModelConfig& model_cfg,
                       std::span<const ingest::TokenSequence> records, const MaskConfig& mask, std::uint64_t seed,
                       std::size_t batch_size) {
  StepStats total;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    idx.clear();
    for (std::size_t r = start; r < std::min(records.size(), start + batch_size); ++r) idx.push_back(r);
    const auto b = make_mlm_batch(records, idx, model_cfg, mask, seed, 0);
    if (b.positions.empty()) continue;
    Tape<float> tape(false);
    const auto enc = model::encode(tape, model_cfg, params, {b.tokens, b.seq_len});
    std::vector<std::uint32_t> predicted;
    const double loss =
        model::mlm_loss(tape, model_cfg, params, enc.hidden, b.positions, b.targets, &predicted).value().item();
    total.loss_sum += loss * static_cast<double>(b.positions.size());
    total.masked += b.positions.size();
    total.correct += count_correct(predicted, b.targets);
    total.tokens += b.tokens.size();
  }
  if (total.masked) total.loss_mean = total.loss_sum / static_cast<double>(total.masked);
  return total;
}

std::filesystem::path periodic_checkpoint_path(const std::filesystem::path& final_path, std::uint64_t step) {
  auto p = final_path;
  p.replace_filename(final_path.stem().string() + "-step" + std::to_string(step) + final_path.extension().string());
  return p;
}

namespace {

void save(const std::filesystem::path& path, const PretrainConfig& cfg, const model::ModelConfig& model_cfg,
          const ParameterStore<float>& params, const Adam& opt) {
  model::Checkpoint ck;
  ck.config = model_cfg;
  ck.meta = {{"kind", "pretrain"}, {"step", opt.steps()}, {"pretrain", cfg}};
  ck.params = params.clone();
  opt.save(ck);
  model::save_checkpoint(path, ck);
}

}  // namespace

PretrainResult run_pretraining(const PretrainConfig& cfg, const model::ModelConfig& model_cfg,
                               std::span<const ingest::TokenSequence> records, const PretrainPaths& paths,
                               const std::optional<std::filesystem::path>& resume) {
  cfg.validate();
  model_cfg.validate();
  if (records.empty()) throw std::invalid_argument("pre-training corpus is empty");

  Adam opt(cfg.adam());
  ParameterStore<float> params;
  if (resume) {
    auto ck = model::load_checkpoint(*resume);
    if (!(ck.config == model_cfg)) throw TrainingError("resume checkpoint was trained with a different model config");
    params = std::move(ck.params);
    params.remove_prefix("head.");
    opt.load(ck, ck.meta.value("step", std::uint64_t{0}));
  } else {
    params = model::init_model<float>(model_cfg, cfg.seed);
  }

  const bool append = resume && std::filesystem::exists(paths.log);
  if (paths.log.has_parent_path()) std::filesystem::create_directories(paths.log.parent_path());
  std::ofstream csv(paths.log, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write training log " + paths.log.string());
  if (!append) csv << "step,loss_mean,loss_sum,masked_acc,tokens_per_s\n";

  BatchSchedule schedule(records.size(), cfg.batch_size, cfg.seed);
  PretrainResult result;
  StepStats window;
  std::uint64_t window_steps = 0;
  auto window_start = std::chrono::steady_clock::now();
  std::vector<std::size_t> idx;

  for (std::uint64_t step = opt.steps(); step < cfg.steps; ++step) {
    const auto slots = schedule.batch(step);
    MlmBatch batch;
    // Records from two epochs can share a batch at the boundary; each keeps
    // its own epoch's mask stream.
    for (const auto& s : slots) {
      idx.assign(1, s.record);
      auto one = make_mlm_batch(records, idx, model_cfg, cfg.mask, cfg.seed, s.epoch);
      const std::size_t base = batch.tokens.size();
      batch.seq_len = one.seq_len;
      batch.tokens.insert(batch.tokens.end(), one.tokens.begin(), one.tokens.end());
      for (const auto p : one.positions) batch.positions.push_back(base + p);
      batch.targets.insert(batch.targets.end(), one.targets.begin(), one.targets.end());
    }
    const auto stats = pretrain_step(params, model_cfg, batch, opt);
    if (!std::isfinite(stats.loss_mean)) {
      throw TrainingError(fmt::format("non-finite loss at step {} (lr {:.3g}, {} masked positions)", step + 1,
                                      opt.current_lr(), stats.masked));
    }
    result.last = stats;
    window.loss_mean += stats.loss_mean;
    window.loss_sum += stats.loss_sum;
    window.masked += stats.masked;
    window.correct += stats.correct;
    window.tokens += stats.tokens;
    ++window_steps;

    const std::uint64_t done = step + 1;
    if (done % cfg.log_interval == 0) {
      const auto now = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(now - window_start).count();
      LogRow row{done, window.loss_mean / static_cast<double>(window_steps),
                 window.loss_sum / static_cast<double>(window_steps),
                 static_cast<double>(window.correct) / static_cast<double>(std::max<std::size_t>(1, window.masked)),
                 secs > 0 ? static_cast<double>(window.tokens) / secs : 0.0};
      csv << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.1f}\n", row.step, row.loss_mean, row.loss_sum, row.masked_acc,
                         row.tokens_per_s);
      csv.flush();
      log().info("pretrain step {} loss {:.4f} acc {:.4f} {:.0f} tok/s", row.step, row.loss_mean, row.masked_acc,
               row.tokens_per_s);
      result.rows.push_back(row);
      window = {};
      window_steps = 0;
      window_start = now;
    }
    if (cfg.checkpoint_interval && done % cfg.checkpoint_interval == 0 && done != cfg.steps) {
      save(periodic_checkpoint_path(paths.checkpoint, done), cfg, model_cfg, params, opt);
    }
  }
  save(paths.checkpoint, cfg, model_cfg, params, opt);
  result.final_step = opt.steps();
  return result;
}

PretrainResult run_pretraining(const PretrainConfig& cfg, const model::ModelConfig& model_cfg,
                               const std::filesystem::path& corpus, const PretrainPaths& paths,
                               const std::optional<std::filesystem::path>& resume) {
  const auto records = ingest::read_corpus(corpus);
  return run_pretraining(cfg, model_cfg, records, paths, resume);
}

}  // namespace netconv::pretrain
