#include "autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "util/error.hpp"

namespace depthforge::ad {
namespace {

double evaluate(const ScalarFn& f, const ParamTensors& params) {
  Tape tape;
  ParamVars vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.parameter(name, value));
  const Var out = f(tape, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
  return out.value()[0];
}

std::vector<std::size_t> pick_coords(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= size) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::pair<double, Gradients> value_and_grad(const ScalarFn& f, const ParamTensors& params) {
  Tape tape;
  ParamVars vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.parameter(name, value));
  const Var out = f(tape, vars);
  const double v = out.value().size() == 1 ? out.value()[0] : 0.0;
  return {v, tape.backward(out)};
}

GradReport grad_check(const ScalarFn& f, const ParamTensors& params, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw InvalidArgument("grad_check: eps must be positive");
  const auto [base, analytic] = value_and_grad(f, params);
  if (!std::isfinite(base)) throw NumericError("grad_check: function value is not finite at the base point");

  GradReport report;
  report.tol = options.tol;
  std::mt19937_64 rng(options.seed);
  ParamTensors probe = params;
  for (const auto& [name, value] : params) {
    ParamGradError err;
    err.name = name;
    const Tensor& grad = analytic.at(name);
    Tensor& p = probe.at(name);
    for (std::size_t i : pick_coords(value.size(), options.max_coords_per_param, rng)) {
      const double original = p[i];
      auto central = [&](double h) {
        double plus = 0.0, minus = 0.0;
        try {
          p[i] = original + h;
          plus = evaluate(f, probe);
          p[i] = original - h;
          minus = evaluate(f, probe);
        } catch (const NumericError& e) {
          p[i] = original;
          throw NumericError("grad_check: parameter '" + name + "' coordinate " + std::to_string(i) + ": " + e.what());
        }
        p[i] = original;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
          throw NumericError("grad_check: non-finite function value perturbing parameter '" + name +
                             "' coordinate " + std::to_string(i));
        }
        return (plus - minus) / (2.0 * h);
      };
      const double numeric = central(options.eps);
      if (options.kink_guard) {
        const double half = central(0.5 * options.eps);
        if (relative_error(numeric, half) > 0.25 * options.tol) {
          ++err.coords_skipped;
          continue;
        }
      }
      const double abs_err = std::abs(grad[i] - numeric);
      const double rel_err = relative_error(grad[i], numeric);
      ++err.coords_checked;
      err.max_abs_error = std::max(err.max_abs_error, abs_err);
      if (rel_err > err.max_rel_error || err.coords_checked == 1) {
        err.max_rel_error = std::max(err.max_rel_error, rel_err);
        err.worst_index = i;
        err.analytic = grad[i];
        err.numeric = numeric;
      }
    }
    report.max_abs_error = std::max(report.max_abs_error, err.max_abs_error);
    report.coords_checked += err.coords_checked;
    report.coords_skipped += err.coords_skipped;
    if (err.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = err.max_rel_error;
      report.worst_param = name;
      report.worst_index = err.worst_index;
    }
    report.params.push_back(std::move(err));
  }
  const double drawn = static_cast<double>(report.coords_checked + report.coords_skipped);
  report.passed = report.max_rel_error < options.tol &&
                  static_cast<double>(report.coords_skipped) <= options.max_skip_fraction * drawn;
  return report;
}

std::string format_report(const GradReport& report) {
  std::ostringstream os;
  os << (report.passed ? "PASS" : "FAIL") << " max_rel=" << report.max_rel_error << " max_abs=" << report.max_abs_error
     << " tol=" << report.tol;
  if (report.coords_skipped) os << " skipped=" << report.coords_skipped << "/" << report.coords_checked + report.coords_skipped;
  if (!report.passed) os << " worst=" << report.worst_param << "[" << report.worst_index << "]";
  return os.str();
}

}  // namespace depthforge::ad
