#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "netconv/common/random.hpp"

namespace netconv::pretrain {

enum class MaskMode { span, random };

struct MaskConfig {
  double rate = 0.15;
  double geometric_p = 0.2;
  std::size_t max_span = 10;
  MaskMode mode = MaskMode::span;

  void validate() const;
};

struct MaskSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::size_t length() const { return end - start + 1; }
  bool operator==(const MaskSpan&) const = default;
};

struct MaskPlan {
  std::vector<MaskSpan> spans;               // sorted by start, separated by >= 1 unmasked token
  std::vector<std::size_t> masked_positions;  // sorted union of span members
};

// Mean of Geometric(p) on {1, 2, ...} clipped at max_span, and the expected
// amount by which a run of such draws overshoots a fixed budget.
double clipped_geometric_mean(double p, std::size_t max_span);
double expected_overshoot(double p, std::size_t max_span);

// Span mode: draw l ~ Geometric(p) clipped to [1, max_span], then a start
// uniformly among positions where the whole span covers non-PAD, unmasked
// tokens without touching an existing span; repeat until the budget is met.
// Random mode: the same budget as independent uniform positions.
// A sequence with any non-PAD token always gets at least one masked position.
MaskPlan sample_mask_plan(std::span<const std::uint32_t> tokens, std::uint32_t pad_id, const MaskConfig& cfg,
                          Rng& rng);

struct MaskedSequence {
  std::vector<std::uint32_t> tokens;
  std::vector<std::size_t> positions;
  std::vector<std::uint32_t> targets;  // original ids at `positions`
};

MaskedSequence apply_mask(std::span<const std::uint32_t> tokens, const MaskPlan& plan, std::uint32_t mask_id);

}  // namespace netconv::pretrain
