#include "verify/oracles.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "util/error.hpp"

namespace depthforge {

Metrics reference_metrics(const DepthPairs& pairs) {
  const std::size_t n = pairs.gt.size();
  if (n == 0 || pairs.pred.size() != n) throw InvalidArgument("reference_metrics: bad pair lists");
  Metrics m;
  m.count = n;

  long double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double d = static_cast<long double>(pairs.pred[i]) - pairs.gt[i];
    s += d * d;
  }
  m.rmse = static_cast<double>(std::sqrt(s / n));

  s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double d = std::log(static_cast<long double>(pairs.pred[i])) - std::log(static_cast<long double>(pairs.gt[i]));
    s += d * d;
  }
  m.rmse_log = static_cast<double>(std::sqrt(s / n));

  s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s += std::fabs(static_cast<long double>(pairs.pred[i]) - pairs.gt[i]) / pairs.gt[i];
  }
  m.ard = static_cast<double>(s / n);

  s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double d = static_cast<long double>(pairs.pred[i]) - pairs.gt[i];
    s += d * d / pairs.gt[i];
  }
  m.srd = static_cast<double>(s / n);

  double* acc[3] = {&m.acc1, &m.acc2, &m.acc3};
  double thr = 1.0;
  for (int k = 0; k < 3; ++k) {
    thr *= 1.25;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pairs.pred[i], z = pairs.gt[i];
      const double r = p / z > z / p ? p / z : z / p;
      if (r < thr) ++hits;
    }
    *acc[k] = static_cast<double>(hits) / static_cast<double>(n);
  }
  return m;
}

DepthPairs random_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> logu(std::log(0.5), std::log(100.0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DepthPairs p;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = std::exp(logu(rng));
    const double pred = u(rng) < 0.5 ? z * std::exp(0.8 * (u(rng) - 0.5)) : std::exp(logu(rng));
    p.gt.push_back(z);
    p.pred.push_back(pred);
  }
  return p;
}

double metrics_max_difference(const Metrics& a, const Metrics& b) {
  if (a.count != b.count) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (auto [x, y] : {std::pair{a.rmse, b.rmse}, {a.rmse_log, b.rmse_log}, {a.ard, b.ard}, {a.srd, b.srd},
                      {a.acc1, b.acc1}, {a.acc2, b.acc2}, {a.acc3, b.acc3}}) {
    worst = std::max(worst, std::fabs(x - y) / std::max(1.0, std::fabs(y)));
  }
  return worst;
}

}  // namespace depthforge
