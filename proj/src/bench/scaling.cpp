#include "netconv/bench/scaling.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "netconv/bench/attention.hpp"
#include "netconv/common/random.hpp"
#include "netconv/model/netconv.hpp"

namespace netconv::bench {

namespace {

using Clock = std::chrono::steady_clock;

// Mean seconds per call; calls are repeated until min_s has elapsed.
template <typename Fn>
double time_call(Fn&& fn, double min_s) {
  fn();
  std::size_t calls = 0;
  const auto start = Clock::now();
  double elapsed = 0;
  do {
    fn();
    ++calls;
    elapsed = std::chrono::duration<double>(Clock::now() - start).count();
  } while (elapsed < min_s);
  return elapsed / static_cast<double>(calls);
}

}  // namespace

PowerFit fit_power_law(const std::string& variant, const std::vector<double>& n, const std::vector<double>& t) {
  if (n.size() != t.size() || n.size() < 4) throw std::invalid_argument("power-law fit needs at least 4 points");
  const double m = static_cast<double>(n.size());
  double sx = 0, sy = 0;
  std::vector<double> x(n.size()), y(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n[i] <= 0 || t[i] <= 0) throw std::invalid_argument("power-law fit needs positive values");
    x[i] = std::log(n[i]);
    y[i] = std::log(t[i]);
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw std::invalid_argument("power-law fit needs distinct lengths");
  PowerFit fit;
  fit.variant = variant;
  fit.exponent = sxy / sxx;
  fit.log_coef = my - fit.exponent * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double r = y[i] - (fit.log_coef + fit.exponent * x[i]);
    sse += r * r;
  }
  fit.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  fit.residual = std::sqrt(sse / m);
  return fit;
}

ScalingReport scaling_curve(const ScalingConfig& cfg) {
  if (cfg.lengths.size() < 4) throw std::invalid_argument("scaling curve needs at least 4 lengths");
  for (std::size_t i = 1; i < cfg.lengths.size(); ++i) {
    if (cfg.lengths[i] <= cfg.lengths[i - 1]) throw std::invalid_argument("scaling lengths must be strictly increasing");
  }
  if (cfg.repeats == 0) throw std::invalid_argument("scaling curve needs at least one repeat");
  const std::size_t d = cfg.d_model;

  model::ModelConfig mc;
  mc.vocab_size = 8;
  mc.d_model = d;
  mc.num_layers = 1;
  mc.kernel_size = cfg.kernel_size;
  const auto params = model::init_model<float>(mc, cfg.seed);
  const auto attn = init_attention<float>(d, cfg.seed);

  ScalingReport report;
  std::vector<double> ns;
  std::vector<double> conv_t, attn_t;
  Rng rng = make_rng(cfg.seed, {0x5CA1});
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (const std::size_t n : cfg.lengths) {
    tensor::Tensor<float> x({n, d});
    for (auto& v : x.storage()) v = normal(rng);
    const std::vector<std::uint8_t> valid(n, 1);
    const auto xv = tensor::Var<float>::constant(x);
    float sink = 0;
    auto conv = [&] {
      model::Tape<float> tape(false);
      sink += model::traffic_conv_layer(tape, mc, params, 0, xv, valid, n).value()[0];
    };
    auto att = [&] { sink += reference_attention_forward(x, attn)[0]; };
    double c = 0, a = 0;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      c += time_call(conv, cfg.min_measure_s);
      a += time_call(att, cfg.min_measure_s);
    }
    c /= static_cast<double>(cfg.repeats);
    a /= static_cast<double>(cfg.repeats);
    if (!std::isfinite(sink)) throw std::runtime_error("scaling curve: non-finite output");
    report.points.push_back({"netconv", n, c, cfg.repeats});
    report.points.push_back({"attention", n, a, cfg.repeats});
    ns.push_back(static_cast<double>(n));
    conv_t.push_back(c);
    attn_t.push_back(a);
  }
  report.fits.push_back(fit_power_law("netconv", ns, conv_t));
  report.fits.push_back(fit_power_law("attention", ns, attn_t));
  return report;
}

void to_json(nlohmann::json& j, const ScalingReport& r) {
  j = {{"points", nlohmann::json::array()}, {"fits", nlohmann::json::array()}};
  for (const auto& p : r.points) {
    j["points"].push_back({{"variant", p.variant}, {"length", p.length}, {"mean_s", p.mean_s}, {"repeats", p.repeats}});
  }
  for (const auto& f : r.fits) {
    j["fits"].push_back({{"variant", f.variant},
                         {"exponent", f.exponent},
                         {"log_coef", f.log_coef},
                         {"r2", f.r2},
                         {"residual", f.residual}});
  }
}

std::string scaling_csv(const ScalingReport& r) {
  std::string out = "variant,length,mean_s,repeats\n";
  for (const auto& p : r.points) out += fmt::format("{},{},{:.9f},{}\n", p.variant, p.length, p.mean_s, p.repeats);
  return out;
}

}  // namespace netconv::bench
