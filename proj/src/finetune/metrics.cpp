#include "netconv/finetune/metrics.hpp"

#include <stdexcept>
#include <string>

namespace netconv::finetune {

EvalReport make_report(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> predicted,
                       std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("truth and prediction counts differ");
  std::vector<std::vector<std::uint64_t>> confusion(num_classes, std::vector<std::uint64_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw std::out_of_range("label " + std::to_string(std::max(truth[i], predicted[i])) + " outside " +
                              std::to_string(num_classes) + " classes");
    }
    ++confusion[truth[i]][predicted[i]];
  }
  return report_from_confusion(std::move(confusion));
}

EvalReport report_from_confusion(std::vector<std::vector<std::uint64_t>> confusion) {
  EvalReport r;
  r.num_classes = confusion.size();
  r.per_class.resize(r.num_classes);
  std::uint64_t total = 0, hits = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    if (confusion[c].size() != r.num_classes) throw std::invalid_argument("confusion matrix must be square");
    std::uint64_t tp = confusion[c][c], row = 0, col = 0;
    for (std::size_t k = 0; k < r.num_classes; ++k) {
      row += confusion[c][k];
      col += confusion[k][c];
    }
    auto& m = r.per_class[c];
    m.support = row;
    m.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    total += row;
    hits += tp;
    if (row > 0) {
      ++present;
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
    }
  }
  if (present) {
    r.macro_precision /= static_cast<double>(present);
    r.macro_recall /= static_cast<double>(present);
    r.macro_f1 /= static_cast<double>(present);
  }
  r.accuracy = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  r.confusion = std::move(confusion);
  return r;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  auto classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    classes.push_back(
        {{"class", c}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
  }
  j = nlohmann::json{{"num_classes", r.num_classes},
                     {"macro_precision", r.macro_precision},
                     {"macro_recall", r.macro_recall},
                     {"macro_f1", r.macro_f1},
                     {"accuracy", r.accuracy},
                     {"per_class", classes},
                     {"confusion", r.confusion}};
}

}  // namespace netconv::finetune
