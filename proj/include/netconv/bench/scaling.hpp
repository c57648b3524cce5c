#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace netconv::bench {

struct ScalingConfig {
  std::vector<std::size_t> lengths{256, 512, 1024, 2048, 4096};
  std::size_t d_model = 64;
  std::size_t kernel_size = 4;
  std::size_t repeats = 3;
  // Each measurement repeats the forward pass until at least this much time
  // has elapsed, so short runs stay well above the clock resolution.
  double min_measure_s = 0.02;
  std::uint64_t seed = 0;
};

struct ScalingPoint {
  std::string variant;
  std::size_t length = 0;
  double mean_s = 0;
  std::size_t repeats = 0;
};

struct PowerFit {
  std::string variant;
  double exponent = 0;   // b in time ~ a * N^b
  double log_coef = 0;   // ln a
  double r2 = 0;
  double residual = 0;   // RMS of log-space residuals
};

struct ScalingReport {
  std::vector<ScalingPoint> points;
  std::vector<PowerFit> fits;
};

// Least squares on (ln N, ln t); needs at least 4 points.
PowerFit fit_power_law(const std::string& variant, const std::vector<double>& n, const std::vector<double>& t);

// Times one traffic convolution layer and one reference attention layer on
// (N x d) inputs for every length.
ScalingReport scaling_curve(const ScalingConfig& cfg);

void to_json(nlohmann::json& j, const ScalingReport& r);
std::string scaling_csv(const ScalingReport& r);

}  // namespace netconv::bench
