#include "netconv/pretrain/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace netconv::pretrain {

void MaskConfig::validate() const {
  if (!(rate > 0.0 && rate < 1.0)) throw std::invalid_argument("mask rate must be in (0, 1)");
  if (!(geometric_p > 0.0 && geometric_p <= 1.0)) throw std::invalid_argument("geometric_p must be in (0, 1]");
  if (max_span < 1) throw std::invalid_argument("max_span must be >= 1");
}

namespace {

// P(l) for l = 1..max_span, the last bucket carrying the clipped tail.
std::vector<double> clipped_geometric_pmf(double p, std::size_t max_span) {
  std::vector<double> pmf(max_span);
  double tail = 1.0;
  for (std::size_t l = 1; l < max_span; ++l) {
    pmf[l - 1] = tail * p;
    tail *= 1.0 - p;
  }
  pmf[max_span - 1] = tail;
  return pmf;
}

std::vector<std::size_t> runs_to_positions(const std::vector<MaskSpan>& spans) {
  std::vector<std::size_t> out;
  for (const auto& s : spans)
    for (std::size_t i = s.start; i <= s.end; ++i) out.push_back(i);
  return out;
}

MaskPlan sample_span_plan(std::span<const std::uint32_t> tokens, std::uint32_t pad_id, const MaskConfig& cfg,
                          std::size_t non_pad, Rng& rng) {
  const std::size_t n = tokens.size();
  const double budget = cfg.rate * static_cast<double>(non_pad) - expected_overshoot(cfg.geometric_p, cfg.max_span);
  std::geometric_distribution<std::size_t> geo(cfg.geometric_p);
  std::vector<std::uint8_t> masked(n, 0);
  // free_run[i]: how many consecutive positions from i may start or extend a span.
  std::vector<std::size_t> free_run(n + 1, 0);
  std::vector<std::size_t> starts;
  MaskPlan plan;
  std::size_t count = 0;

  auto refresh = [&] {
    for (std::size_t i = n; i-- > 0;) {
      const bool usable = tokens[i] != pad_id && !masked[i];
      free_run[i] = usable ? free_run[i + 1] + 1 : 0;
    }
  };
  refresh();
  while (plan.spans.empty() || static_cast<double>(count) < budget) {
    std::size_t len = std::min<std::size_t>(geo(rng) + 1, cfg.max_span);
    // A start is valid when the span fits in free territory and leaves a
    // gap to any existing span, so masked runs stay exactly the spans.
    auto collect = [&](std::size_t l) {
      starts.clear();
      for (std::size_t s = 0; s + l <= n; ++s) {
        if (free_run[s] < l) continue;
        if (s > 0 && masked[s - 1]) continue;
        if (s + l < n && masked[s + l]) continue;
        starts.push_back(s);
      }
    };
    collect(len);
    while (starts.empty() && len > 1) collect(--len);
    if (starts.empty()) break;
    const std::size_t s = starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
    for (std::size_t i = s; i < s + len; ++i) masked[i] = 1;
    plan.spans.push_back({s, s + len - 1});
    count += len;
    refresh();
  }
  std::sort(plan.spans.begin(), plan.spans.end(), [](const MaskSpan& a, const MaskSpan& b) { return a.start < b.start; });
  plan.masked_positions = runs_to_positions(plan.spans);
  return plan;
}

MaskPlan sample_random_plan(std::span<const std::uint32_t> tokens, std::uint32_t pad_id, const MaskConfig& cfg,
                            std::size_t non_pad, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] != pad_id) candidates.push_back(i);
  const auto want = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.rate * static_cast<double>(non_pad))), 1, non_pad);
  std::vector<std::size_t> chosen;
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(chosen), want, rng);
  MaskPlan plan;
  for (const auto i : chosen) {
    if (!plan.spans.empty() && plan.spans.back().end + 1 == i) {
      plan.spans.back().end = i;
    } else {
      plan.spans.push_back({i, i});
    }
  }
  plan.masked_positions = std::move(chosen);
  return plan;
}

}  // namespace

double clipped_geometric_mean(double p, std::size_t max_span) {
  const auto pmf = clipped_geometric_pmf(p, max_span);
  double m = 0;
  for (std::size_t l = 1; l <= max_span; ++l) m += static_cast<double>(l) * pmf[l - 1];
  return m;
}

double expected_overshoot(double p, std::size_t max_span) {
  const auto pmf = clipped_geometric_pmf(p, max_span);
  double m1 = 0, m2 = 0;
  for (std::size_t l = 1; l <= max_span; ++l) {
    m1 += static_cast<double>(l) * pmf[l - 1];
    m2 += static_cast<double>(l * l) * pmf[l - 1];
  }
  return (m2 / m1 - 1.0) / 2.0;
}

MaskPlan sample_mask_plan(std::span<const std::uint32_t> tokens, std::uint32_t pad_id, const MaskConfig& cfg,
                          Rng& rng) {
  cfg.validate();
  const auto non_pad = static_cast<std::size_t>(std::count_if(tokens.begin(), tokens.end(),
                                                              [&](std::uint32_t t) { return t != pad_id; }));
  if (non_pad == 0) return {};
  return cfg.mode == MaskMode::span ? sample_span_plan(tokens, pad_id, cfg, non_pad, rng)
                                    : sample_random_plan(tokens, pad_id, cfg, non_pad, rng);
}

MaskedSequence apply_mask(std::span<const std::uint32_t> tokens, const MaskPlan& plan, std::uint32_t mask_id) {
  MaskedSequence out;
  out.tokens.assign(tokens.begin(), tokens.end());
  for (const auto i : plan.masked_positions) {
    if (i >= tokens.size()) {
      throw std::invalid_argument("mask plan position " + std::to_string(i) + " outside sequence of length " +
                                  std::to_string(tokens.size()));
    }
    out.positions.push_back(i);
    out.targets.push_back(tokens[i]);
    out.tokens[i] = mask_id;
  }
  return out;
}

}  // namespace netconv::pretrain
