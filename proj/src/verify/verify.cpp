#include "verify/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "autodiff/ops.hpp"
#include "data/scene.hpp"
#include "eval/metrics.hpp"
#include "geometry/stereo.hpp"
#include "loss/loss.hpp"
#include "net/network.hpp"
#include "train/objective.hpp"
#include "train/trainer.hpp"
#include "verify/oracles.hpp"

namespace depthforge {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

template <typename Fn>
CheckResult timed(const std::string& name, Fn&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = name;
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

bool VerifyReport::passed() const {
  for (const auto& c : checks) {
    if (!c.passed) return false;
  }
  return true;
}

CheckResult check_primitive_gradients() {
  return timed("autodiff.primitive_gradients", [](CheckResult& r) {
    std::mt19937_64 rng(17);
    ad::ParamTensors p;
    p["x"] = random_tensor({2, 3, 5, 6}, rng);
    p["w"] = random_tensor({4, 3, 3, 3}, rng);
    p["b"] = random_tensor({4}, rng);
    p["g"] = random_tensor({4}, rng, 0.5, 1.5);
    p["beta"] = random_tensor({4}, rng);
    const Tensor mix = random_tensor({2, 4, 3, 3}, rng);
    const ConvSpec spec{3, 2, 3, 4};
    ad::ScalarFn f = [&](ad::Tape&, const ad::ParamVars& v) {
      // Bias-free conv before BN (a bias there has an exactly zero gradient).
      ad::Var y = ad::conv2d(v.at("x"), v.at("w"), std::nullopt, spec);
      y = ad::softplus(ad::batch_norm_train(y, v.at("g"), v.at("beta"), nullptr));
      const ad::Var z = ad::softplus(ad::conv2d(v.at("x"), v.at("w"), v.at("b"), spec));
      return ad::add(ad::sum(ad::mask_multiply(y, mix)), ad::sum(ad::mask_multiply(z, mix)));
    };
    ad::GradCheckOptions o;
    o.eps = 1e-5;
    o.tol = 1e-6;
    const ad::GradReport g = ad::grad_check(f, p, o);
    r.passed = g.passed;
    r.detail = "conv+bn+softplus max rel " + fmt("%.2e", g.max_rel_error);
  });
}

CheckResult check_warping(std::size_t scenes) {
  return timed("geometry.warping_oracle", [scenes](CheckResult& r) {
    SceneConfig cfg;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < scenes; ++k) {
      const StereoSample s = gen_scene(cfg, 4000 + k);
      const auto right = reconstruct_view(s.left, s.true_rho_right, s.calib, -1);
      const auto left = reconstruct_view(s.right, s.true_rho_left, s.calib, +1);
      const Tensor mr = s.truth->exact_mask(View::kRight, 0, s.calib.fb());
      const Tensor ml = s.truth->exact_mask(View::kLeft, 0, s.calib.fb());
      for (std::size_t i = 0; i < mr.size(); ++i) {
        if (mr[i] != 0.0) {
          worst = std::max(worst, std::fabs(right.values[i] - s.right[i]));
          ++checked;
        }
        if (ml[i] != 0.0) {
          worst = std::max(worst, std::fabs(left.values[i] - s.left[i]));
          ++checked;
        }
      }
    }
    // Round trip of a single coordinate.
    const Calib c = Calib::make(72.0, 0.5);
    const PixelCoord x{20.25, 3.0};
    const PixelCoord there = warp_coord(x, 0.1, c, +1);
    const PixelCoord back = warp_coord(there, 0.1, c, -1);
    const bool coord_ok = std::fabs(back.col - x.col) < 1e-12 && there.col < x.col;
    r.passed = checked > 0 && worst < 1e-9 && coord_ok;
    r.detail = "max |I - warp(I)| " + fmt("%.2e", worst) + " over " + std::to_string(checked) + " exact pixels" +
               (coord_ok ? "" : "; coordinate round trip or direction wrong");
  });
}

CheckResult check_alignment_oracle(std::size_t scenes) {
  return timed("loss.alignment_oracle", [scenes](CheckResult& r) {
    SceneConfig cfg;
    LossOptions opt;
    opt.sigma = 1.0;
    opt.normalize_terms = false;
    const std::size_t margin = 3;
    double worst_truth = 0.0, worst_ratio = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (std::size_t k = 0; k < scenes; ++k) {
      const StereoSample s = gen_scene(cfg, 5000 + k);
      const Tensor ml = s.truth->exact_mask(View::kLeft, margin, s.calib.fb());
      const Tensor mr = s.truth->exact_mask(View::kRight, margin, s.calib.fb());
      const double count = sum(ml) + sum(mr);
      if (count < 100.0) {
        ok = false;
        continue;
      }
      auto per_pixel = [&](double f) {
        return unsupervised_loss(s.left, s.right, scaled(s.true_rho_left, f), scaled(s.true_rho_right, f), {s.calib},
                                 opt, &ml, &mr) /
               count;
      };
      const double at_truth = per_pixel(1.0);
      worst_truth = std::max(worst_truth, at_truth);
      for (double f : {0.9, 1.1}) {
        const double off = per_pixel(f);
        const double ratio = off / std::max(at_truth, 1e-300);
        worst_ratio = std::min(worst_ratio, ratio);
        if (!(off >= 10.0 * at_truth) || !(off > 1e-4)) ok = false;
      }
      if (!(at_truth < 1e-6)) ok = false;
    }
    r.passed = ok;
    r.detail = "max per-pixel L_U at truth " + fmt("%.2e", worst_truth) + ", min off/truth ratio " +
               fmt("%.3g", worst_ratio) + " over " + std::to_string(scenes) + " scenes";
  });
}

CheckResult check_berhu(std::size_t cases) {
  return timed("loss.berhu_properties", [cases](CheckResult& r) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> logu(std::log(1e-3), std::log(1e3));
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    double worst_cont = 0.0, worst_c1 = 0.0, worst_lin = 0.0;
    for (std::size_t k = 0; k < cases; ++k) {
      const double delta = std::exp(logu(rng));
      const double h = 1e-9 * delta;
      for (double sgn : {-1.0, 1.0}) {
        const double at = sgn * delta;
        const double inside = berhu(sgn * (delta - h), delta), outside = berhu(sgn * (delta + h), delta);
        worst_cont = std::max(worst_cont, std::fabs(outside - inside) / delta);
        const double d_in = berhu_derivative(sgn * (delta - h), delta);
        const double d_out = berhu_derivative(sgn * (delta + h), delta);
        worst_c1 = std::max(worst_c1, std::fabs(d_out - d_in));
        worst_cont = std::max(worst_cont, std::fabs(berhu(at, delta) - delta) / delta);
      }
      const double d = u(rng) * delta;
      if (std::fabs(d) <= delta) worst_lin = std::max(worst_lin, std::fabs(berhu(d, delta) - std::fabs(d)));
      const double big = (1.0 + std::fabs(u(rng))) * delta * (d < 0 ? -1.0 : 1.0);
      const double quad = (big * big + delta * delta) / (2.0 * delta);
      worst_lin = std::max(worst_lin, std::fabs(berhu(big, delta) - quad) / std::max(1.0, quad));
    }
    r.passed = worst_cont < 1e-6 && worst_c1 < 1e-6 && worst_lin < 1e-12;
    r.detail = "continuity " + fmt("%.1e", worst_cont) + ", C1 " + fmt("%.1e", worst_c1) + ", branch values " +
               fmt("%.1e", worst_lin) + " over " + std::to_string(cases) + " cases";
  });
}

CheckResult check_schedule() {
  return timed("loss.fade_in_schedule", [](CheckResult& r) {
    const double beta = 1.7;
    double worst = 0.0;
    for (std::int64_t t : {1, 10, 100}) {
      worst = std::max(worst, std::fabs(lambda_schedule(t, beta) - beta * std::exp(-10.0 / static_cast<double>(t))));
    }
    bool monotone = true;
    double prev = 0.0;
    for (std::int64_t t = 1; t <= 100000; ++t) {
      const double l = lambda_schedule(t, beta);
      if (l < prev) monotone = false;
      prev = l;
    }
    r.passed = worst < 1e-12 && monotone;
    r.detail = "max deviation " + fmt("%.1e", worst) + (monotone ? ", nondecreasing" : ", NOT monotone");
  });
}

CheckResult check_loss_gradients() {
  return timed("loss.term_gradients", [](CheckResult& r) {
    std::mt19937_64 rng(31);
    const std::size_t H = 8, W = 16;
    StereoBatch b;
    b.left = random_tensor({1, 1, H, W}, rng, 0.0, 1.0);
    b.right = random_tensor({1, 1, H, W}, rng, 0.0, 1.0);
    Tensor zl = random_tensor({1, 1, H, W}, rng, 5.0, 30.0), zr = random_tensor({1, 1, H, W}, rng, 5.0, 30.0);
    b.depth_left = DepthMap::dense(zl);
    b.depth_right = DepthMap::dense(zr);
    b.calib = {Calib::make(20.0, 0.5)};
    ad::ParamTensors p;
    p["rho_l"] = random_tensor({1, 1, H, W}, rng, 0.05, 0.2);
    p["rho_r"] = random_tensor({1, 1, H, W}, rng, 0.05, 0.2);
    LossOptions opt;
    opt.fixed_delta = 2.0;
    ad::GradCheckOptions o;
    o.eps = 1e-7;
    o.tol = 1e-4;
    double worst = 0.0;
    bool ok = true;
    std::string parts;
    const std::vector<std::pair<std::string, std::function<ad::Var(const ad::Var&, const ad::Var&)>>> terms = {
        {"L_S", [&](const ad::Var& a, const ad::Var& c) {
           return ad::supervised_loss(a, c, b.depth_left, b.depth_right, opt);
         }},
        {"L_U", [&](const ad::Var& a, const ad::Var& c) {
           return ad::unsupervised_loss(b.left, b.right, a, c, b.calib, opt);
         }},
        {"L_R", [&](const ad::Var& a, const ad::Var& c) {
           return ad::regularization_loss(b.left, b.right, a, c, opt);
         }},
    };
    for (const auto& [name, term] : terms) {
      ad::ScalarFn f = [&](ad::Tape&, const ad::ParamVars& v) { return term(v.at("rho_l"), v.at("rho_r")); };
      const ad::GradReport g = ad::grad_check(f, p, o);
      worst = std::max(worst, g.max_rel_error);
      ok = ok && g.passed;
      parts += (parts.empty() ? "" : ", ") + name + " " + fmt("%.1e", g.max_rel_error);
    }
    r.passed = ok;
    r.detail = "max rel error " + parts;
  });
}

CheckResult check_weight_decay() {
  return timed("trainer.weight_decay", [](CheckResult& r) {
    NetConfig nc;
    nc.width_multiplier = 1.0 / 8.0;
    nc.blocks_per_stage = {1, 1};
    Network net(nc);
    net.init_params(3);
    ParamStore params = net.params();
    const ParamStore before = params;
    ad::Gradients zero;
    for (const auto& [k, v] : params) zero.emplace(k, Tensor::zeros_like(v));
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.01;
    TrainState st;
    sgd_step(params, zero, st, cfg);
    const double factor = 1.0 - cfg.lr * cfg.weight_decay;
    double worst = 0.0;
    std::size_t decayed = 0;
    for (const auto& [k, v] : params) {
      const Tensor& b0 = before.at(k);
      const double f = Network::decays(k) ? factor : 1.0;
      if (Network::decays(k)) ++decayed;
      for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::fabs(v[i] - f * b0[i]));
    }
    r.passed = worst < 1e-15 && decayed > 0 && st.t == 2;
    r.detail = std::to_string(decayed) + " decayed tensors, max deviation from (1 - lr w_d) theta " +
               fmt("%.1e", worst);
  });
}

CheckResult check_metric_oracle(std::size_t sets) {
  return timed("evalkit.metric_oracle", [sets](CheckResult& r) {
    std::mt19937_64 rng(41);
    double worst = 0.0;
    for (std::size_t k = 0; k < sets; ++k) {
      const std::size_t n = 1 + rng() % 1000;
      const DepthPairs p = random_pairs(n, 100 + k);
      worst = std::max(worst, metrics_max_difference(compute_metrics(p), reference_metrics(p)));
    }
    r.passed = worst < 1e-12;
    r.detail = "max scaled difference " + fmt("%.1e", worst) + " over " + std::to_string(sets) + " sets";
  });
}

CheckResult check_protocols() {
  return timed("evalkit.protocols", [](CheckResult& r) {
    auto one = [](double pred, double gt, const Protocol& p) {
      Tensor pd({1, 1, 1, 1}, pred);
      return apply_protocol(pd, DepthMap::dense(Tensor({1, 1, 1, 1}, gt)), p, true);
    };
    bool ok = true;
    std::string why;
    auto expect = [&](bool c, const char* what) {
      if (!c) {
        ok = false;
        why += std::string(why.empty() ? "" : "; ") + what;
      }
    };
    const DepthPairs g1 = one(0.4, 10.0, Protocol::garg50({0, 1, 0, 1}));
    expect(g1.size() == 1 && g1.pred[0] == 1.0, "garg50 low clamp");
    const DepthPairs g2 = one(70.0, 10.0, Protocol::garg50({0, 1, 0, 1}));
    expect(g2.size() == 1 && g2.pred[0] == 50.0, "garg50 high clamp");
    expect(one(5.0, 0.9, Protocol::garg50({0, 1, 0, 1})).size() == 0, "garg50 GT below 1 m");
    expect(one(5.0, 92.0, Protocol::eigen80({0, 1, 0, 1})).size() == 0, "eigen80 GT above 80 m");
    const DepthPairs e = one(120.0, 30.0, Protocol::eigen80({0, 1, 0, 1}));
    expect(e.size() == 1 && e.pred[0] == 80.0, "eigen80 cap");
    expect(one(5.0, 4.0, Protocol::ablation()).size() == 0, "ablation 4 m excluded");
    const DepthPairs a = one(300.0, 5.0, Protocol::ablation());
    expect(a.size() == 1 && a.pred[0] == 300.0, "ablation keeps 5 m and does not cap");
    // garg50 on 0.5 m everywhere against 1 m GT: clamped to 1 m, zero error.
    Tensor half({1, 1, 4, 4}, 0.5);
    const Metrics m = compute_metrics(apply_protocol(half, DepthMap::dense(Tensor({1, 1, 4, 4}, 1.0)),
                                                     Protocol::garg50({0, 1, 0, 1})));
    expect(m.rmse == 0.0 && m.acc1 == 1.0, "garg50 clamp-then-compare");
    const Metrics m3 = compute_metrics({{3.0}, {1.0}});
    expect(m3.rmse == 2.0 && m3.ard == 2.0 && m3.srd == 4.0, "pair (3, 1)");
    const Metrics m2 = compute_metrics({{2.0, 1.0}, {1.0, 2.0}});
    expect(m2.acc1 == 0.0 && m2.acc3 == 0.0, "ratio 2 against 1.25^k");
    r.passed = ok;
    r.detail = ok ? "hand-built clamp, cap and floor cases" : why;
  });
}

CheckResult check_shapes() {
  return timed("net.shape_suite", [](CheckResult& r) {
    std::size_t points = 0, bad = 0;
    for (bool skips : {true, false}) {
      NetConfig nc;
      nc.width_multiplier = 1.0 / 8.0;
      nc.blocks_per_stage = {1, 1, 1, 1};
      nc.use_long_skips = skips;
      Network net(nc);
      net.init_params(5);
      for (std::size_t h : {32, 45, 77, 96}) {
        for (std::size_t w : {32, 51, 64, 95}) {
          ForwardTrace trace;
          const Tensor y = net.predict(Tensor({1, 1, h, w}, 0.5), &trace);
          const bool ok = y.dim(2) == (h + 1) / 2 && y.dim(3) == (w + 1) / 2 &&
                          trace.bottleneck[2] == (h + 31) / 32 && trace.bottleneck[3] == (w + 31) / 32 &&
                          nc.bottleneck_scale() == 32;
          ++points;
          if (!ok) ++bad;
        }
      }
    }
    r.passed = bad == 0;
    r.detail = std::to_string(points - bad) + "/" + std::to_string(points) + " grid points give ceil(H/2) x ceil(W/2)";
  });
}

ad::GradReport network_gradcheck(const std::string& term, std::size_t coords_per_tensor) {
  SceneConfig sc;
  sc.width = 32;
  sc.height = 16;
  sc.f_px = 36.0;
  sc.gt_density = 0.3;
  const StereoSample s = gen_scene(sc, 3);
  const StereoBatch batch = make_batch({&s});
  NetConfig nc;
  nc.width_multiplier = 0.125;
  nc.blocks_per_stage = {1, 1};
  nc.dropout_p = 0.5;
  nc.init_rho = 1.0 / 15.0;
  Network net(nc);
  net.init_params(7);
  // Glorot-scale output weights so the prediction varies across the image.
  for (double& v : net.params().at("conv3.w").values()) v *= 1000.0;

  LossWeights w = LossWeights::make(1.0, 0.5, 1000);
  if (term == "supervised") {
    w = LossWeights::make(1.0, 0.0, 1000);
    w.regularizer = 0.0;
  } else if (term == "unsupervised") {
    w = LossWeights::make(0.0, 1.0, 1000);
    w.regularizer = 0.0;
  } else if (term == "regularizer") {
    w = LossWeights::make(0.0, 0.0, 1000);
  } else if (term != "total") {
    throw InvalidArgument("network_gradcheck: unknown term '" + term + "'");
  }
  LossOptions opt;
  {
    ad::Tape t;
    opt.fixed_delta =
        network_loss(net, t, net.register_params(t), batch, w, opt, Mode::kTrain, 11, nullptr).breakdown.delta;
    if (!(opt.fixed_delta > 0.0)) opt.fixed_delta = 1.0;
  }
  ad::ScalarFn f = [&](ad::Tape& t, const ad::ParamVars& p) {
    return network_loss(net, t, p, batch, w, opt, Mode::kTrain, 11, nullptr).total;
  };
  ad::GradCheckOptions o;
  o.eps = 3e-6;
  o.tol = 1e-4;
  o.kink_guard = true;
  o.max_coords_per_param = coords_per_tensor;
  o.seed = 1;
  return ad::grad_check(f, net.params(), o);
}

std::string format_grad_table(const std::vector<GradTableRow>& rows) {
  std::ostringstream o;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %14s %14s %10s %12s  %s\n", "term", "max_rel_err", "max_abs_err", "tol",
                "kinks", "worst");
  o << buf;
  for (const auto& r : rows) {
    const std::string kinks =
        std::to_string(r.report.coords_skipped) + "/" + std::to_string(r.report.coords_checked + r.report.coords_skipped);
    std::snprintf(buf, sizeof buf, "%-14s %14.3e %14.3e %10.1e %12s  %s[%zu]\n", r.term.c_str(), r.report.max_rel_error,
                  r.report.max_abs_error, r.report.tol, kinks.c_str(), r.report.worst_param.c_str(),
                  r.report.worst_index);
    o << buf;
  }
  return o.str();
}

VerifyReport run_verify(VerifyLevel level, const std::function<void(const CheckResult&)>& on_check) {
  VerifyReport rep;
  const bool full = level == VerifyLevel::kFull;
  auto add = [&](CheckResult c) {
    if (on_check) on_check(c);
    rep.checks.push_back(std::move(c));
  };
  add(check_primitive_gradients());
  add(check_warping(full ? 20 : 5));
  add(check_alignment_oracle(full ? 20 : 5));
  add(check_berhu(1000));
  add(check_schedule());
  add(check_loss_gradients());
  add(check_weight_decay());
  add(check_metric_oracle(full ? 100 : 20));
  add(check_protocols());
  if (full) {
    add(check_shapes());
    for (const char* term : {"supervised", "unsupervised", "regularizer", "total"}) {
      GradTableRow row{term, {}};
      add(timed(std::string("autodiff.network_gradcheck.") + term, [&](CheckResult& r) {
        row.report = network_gradcheck(term);
        r.passed = row.report.passed;
        r.detail = "max rel " + fmt("%.2e", row.report.max_rel_error) + " at " + row.report.worst_param + ", " +
                   std::to_string(row.report.coords_skipped) + " kink coordinates skipped";
      }));
      rep.grad_table.push_back(row);
    }
  }
  return rep;
}

}  // namespace depthforge
