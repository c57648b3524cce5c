#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace netconv::finetune {

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::uint64_t support = 0;
};

// Everything derives from the integer confusion matrix (rows: true class,
// columns: predicted class). Macro averages run over classes with support > 0.
struct EvalReport {
  std::size_t num_classes = 0;
  std::vector<std::vector<std::uint64_t>> confusion;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  double accuracy = 0;
};

EvalReport make_report(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> predicted,
                       std::size_t num_classes);
EvalReport report_from_confusion(std::vector<std::vector<std::uint64_t>> confusion);

void to_json(nlohmann::json& j, const EvalReport& r);

}  // namespace netconv::finetune
