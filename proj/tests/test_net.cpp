#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "autodiff/ops.hpp"
#include "doctest.h"
#include "net/network.hpp"
#include "util/error.hpp"

using namespace depthforge;

namespace {

Tensor random_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor t({n, 1, h, w});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : t.values()) v = u(rng);
  return t;
}

NetConfig tiny(std::vector<std::size_t> blocks = {1, 1, 1, 1}, bool skips = true) {
  NetConfig c;
  c.base_width = 64;
  c.width_multiplier = 0.125;
  c.blocks_per_stage = std::move(blocks);
  c.use_long_skips = skips;
  return c;
}

ad::ParamVars leaves(ad::Tape& tape, const ParamStore& store) {
  ad::ParamVars v;
  for (const auto& [k, t] : store) v.emplace(k, tape.parameter(k, t));
  return v;
}

}  // namespace

TEST_CASE("type 2 block with stride 2 maps 8x8x8 to 4x4x16") {
  LayerStore store;
  const ResBlock b = build_resblock(store, "blk", 2, 2, 8, 16);
  store.init_params(1);
  ad::Tape tape;
  const auto params = leaves(tape, store.params());
  const LayerContext ctx{tape, params, store, Mode::kTrain, nullptr};
  Tensor x({2, 8, 8, 8}, 0.5);
  const ad::Var out = apply(ctx, b, tape.constant(x));
  CHECK(out.shape() == Shape{2, 16, 4, 4});
}

TEST_CASE("type 1 block rejects shape-changing parameters") {
  LayerStore store;
  CHECK_THROWS_AS(build_resblock(store, "a", 1, 2, 16, 16), InvalidArgument);
  CHECK_THROWS_AS(build_resblock(store, "b", 1, 1, 8, 16), InvalidArgument);
  CHECK_THROWS_AS(build_resblock(store, "c", 3, 1, 16, 16), InvalidArgument);
}

TEST_CASE("type 1 block with zero residual weights is ReLU of its input") {
  LayerStore store;
  const ResBlock b = build_resblock(store, "blk", 1, 1, 8, 8);
  store.init_params(2);
  store.params().at("blk.c.w").fill(0.0);
  Tensor x({2, 8, 5, 5});
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (double& v : x.values()) v = g(rng);
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    ad::Tape tape;
    const auto params = leaves(tape, store.params());
    const LayerContext ctx{tape, params, store, mode, nullptr};
    const Tensor y = apply(ctx, b, tape.constant(x)).value();
    const Tensor r = relu(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == r[i]);
  }
}

TEST_CASE("residual block gradcheck") {
  LayerStore store;
  const ResBlock b = build_resblock(store, "blk", 2, 2, 4, 8);
  store.init_params(5);
  Tensor x4({2, 4, 6, 6});
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (double& v : x4.values()) v = g(rng);
  Tensor proj({2, 8, 3, 3});
  for (double& v : proj.values()) v = g(rng);
  const ad::ScalarFn fn = [&](ad::Tape& tape, const ad::ParamVars& p) {
    const LayerContext ctx{tape, p, store, Mode::kTrain, nullptr};
    return ad::sum(ad::mask_multiply(apply(ctx, b, tape.constant(x4)), proj));
  };
  ad::GradCheckOptions opt;
  opt.eps = 1e-5;
  opt.tol = 1e-5;
  const ad::GradReport report = ad::grad_check(fn, store.params(), opt);
  INFO(ad::format_report(report));
  CHECK(report.passed);
}

TEST_CASE("upprojection doubles resolution and halves channels") {
  LayerStore store;
  const Upproject up = build_upproject(store, "up", 16);
  store.init_params(3);
  ad::Tape tape;
  const auto params = leaves(tape, store.params());
  const LayerContext ctx{tape, params, store, Mode::kTrain, nullptr};
  Tensor x({1, 16, 4, 4}, 0.25);
  CHECK(apply(ctx, up, tape.constant(x)).shape() == Shape{1, 8, 8, 8});
  const Tensor zero = apply(ctx, up, tape.constant(Tensor({1, 16, 4, 4}, 0.0))).value();
  for (double v : zero.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(build_upproject(store, "odd", 7), InvalidArgument);
}

TEST_CASE("upprojection gradcheck") {
  LayerStore store;
  const Upproject up = build_upproject(store, "up", 4);
  store.init_params(8);
  Tensor x({2, 4, 3, 3});
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  for (double& v : x.values()) v = g(rng);
  Tensor proj({2, 2, 6, 6});
  for (double& v : proj.values()) v = g(rng);
  const ad::ScalarFn fn = [&](ad::Tape& tape, const ad::ParamVars& p) {
    const LayerContext ctx{tape, p, store, Mode::kTrain, nullptr};
    return ad::sum(ad::mask_multiply(apply(ctx, up, tape.constant(x)), proj));
  };
  ad::GradCheckOptions opt;
  opt.eps = 1e-5;
  opt.tol = 1e-5;
  const ad::GradReport report = ad::grad_check(fn, store.params(), opt);
  INFO(ad::format_report(report));
  CHECK(report.passed);
}

TEST_CASE("glorot bound for a 3x3 16->16 conv") {
  CHECK(glorot_bound(16, 16, 3) == doctest::Approx(std::sqrt(6.0 / 288.0)).epsilon(1e-15));
  LayerStore store;
  store.add_conv("c", 3, 1, 16, 16);
  store.init_params(7);
  const double bound = std::sqrt(6.0 / 288.0);
  double seen = 0.0;
  for (double v : store.params().at("c.w").values()) {
    CHECK(std::fabs(v) <= bound);
    seen = std::max(seen, std::fabs(v));
  }
  CHECK(seen > 0.9 * bound);
}

TEST_CASE("64x32 input with width 1/8 predicts 32x16") {
  Network net(tiny());
  net.init_params(1);
  ForwardTrace trace;
  const Tensor out = net.predict(random_images(1, 32, 64, 2), &trace);
  CHECK(out.shape() == Shape{1, 1, 16, 32});
  CHECK(trace.bottleneck == Shape{1, 256, 1, 2});
  CHECK(trace.skips.size() == 3);
}

TEST_CASE("fresh network predicts near-zero inverse depth") {
  Network net(tiny());
  net.init_params(3);
  double mean = 0.0;
  std::size_t count = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Tensor out = net.predict(random_images(2, 32, 48, 100 + s));
    for (double v : out.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1e-3);
      mean += v;
      ++count;
    }
  }
  CHECK(mean / static_cast<double>(count) < 1e-3);
}

TEST_CASE("eval forward is deterministic and leaves the network untouched") {
  Network net(tiny());
  net.init_params(9);
  const BNStore before = net.bn_states();
  const Tensor x = random_images(2, 40, 36, 5);
  const Tensor a = net.predict(x);
  const Tensor b = net.predict(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  for (const auto& [name, s] : net.bn_states()) {
    CHECK(s.running_mean.values()[0] == before.at(name).running_mean.values()[0]);
  }
}

TEST_CASE("same seed gives identical parameters") {
  Network a(tiny());
  Network b(tiny());
  a.init_params(42);
  b.init_params(42);
  for (const auto& [name, t] : a.params()) {
    const Tensor& u = b.params().at(name);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == u[i]);
  }
}

TEST_CASE("too-small input names the minimum size") {
  Network net(tiny());
  net.init_params(1);
  try {
    net.predict(random_images(1, 31, 64, 1));
    FAIL("expected an error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("32x32") != std::string::npos);
  }
}

TEST_CASE("shape invariance over sizes and widths, with and without skips") {
  for (double m : {0.125, 0.25}) {
    for (bool skips : {true, false}) {
      NetConfig cfg = tiny({1, 1, 1, 1}, skips);
      cfg.width_multiplier = m;
      Network net(cfg);
      net.init_params(2);
      for (std::size_t h : {32, 45, 77, 96}) {
        for (std::size_t w : {32, 51, 64, 95}) {
          ForwardTrace trace;
          const Tensor out = net.predict(random_images(1, h, w, h * 131 + w), &trace);
          CHECK(out.shape() == Shape{1, 1, ceil_div(h, 2), ceil_div(w, 2)});
          CHECK(trace.bottleneck[2] == ceil_div(h, 32));
          CHECK(trace.bottleneck[3] == ceil_div(w, 32));
        }
      }
    }
  }
}

TEST_CASE("zeroed skip weights reproduce the network without skips exactly") {
  Network with(tiny({1, 2, 1, 1}, true));
  Network without(tiny({1, 2, 1, 1}, false));
  with.init_params(17);
  for (auto& [name, t] : without.params()) t = with.params().at(name);
  for (auto& [name, t] : with.params()) {
    if (name.find("merge_skip") != std::string::npos) t.fill(0.0);
  }
  const Tensor x = random_images(2, 37, 70, 8);
  const Tensor a = with.predict(x);
  const Tensor b = without.predict(x);
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("train mode updates BN statistics and dropout depends on the seed") {
  NetConfig cfg = tiny({1, 1});
  cfg.dropout_p = 0.5;
  Network net(cfg);
  net.init_params(4);
  const Tensor x = random_images(2, 16, 32, 6);
  const BNStore before = net.bn_states();
  ad::Tape t1;
  const Tensor a = net.forward_train(t1, net.register_params(t1), x, 1).value();
  CHECK(net.bn_states().at("conv1").running_mean[0] != before.at("conv1").running_mean[0]);
  ad::Tape t2;
  const Tensor b = net.forward_train(t2, net.register_params(t2), x, 2).value();
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) differ = differ || a[i] != b[i];
  CHECK(differ);
}

TEST_CASE("weight decay applies to conv weights only") {
  CHECK(Network::decays("s1.b1.a.w"));
  CHECK(Network::decays("conv3.w"));
  CHECK_FALSE(Network::decays("conv3.b"));
  CHECK_FALSE(Network::decays("conv1.bn.gamma"));
  CHECK_FALSE(Network::decays("conv1.bn.beta"));
}

TEST_CASE("invalid configs are rejected") {
  NetConfig c = tiny();
  c.width_multiplier = 0.1;
  CHECK_THROWS_AS(Network{c}, ConfigError);
  c = tiny();
  c.blocks_per_stage = {};
  CHECK_THROWS_AS(Network{c}, ConfigError);
  c = tiny();
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(Network{c}, ConfigError);
}

TEST_CASE("checkpoint round trip is exact") {
  Network net(tiny({1, 2}));
  net.init_params(21);
  ad::Tape tape;
  net.forward_train(tape, net.register_params(tape), random_images(2, 16, 16, 1), 3);
  Checkpoint c = make_checkpoint(net, 21, 57);
  c.velocity["conv1.w"] = Tensor(net.params().at("conv1.w").shape(), 0.125);
  c.extra["best_val"] = "0.5";
  const auto path = (std::filesystem::temp_directory_path() / "df_ckpt_test.bin").string();
  save_checkpoint(path, c);
  const Checkpoint r = load_checkpoint(path);
  CHECK(r.iteration == 57);
  CHECK(r.seed == 21);
  CHECK(r.extra.at("best_val") == "0.5");
  CHECK(r.net.blocks_per_stage == c.net.blocks_per_stage);
  CHECK(r.velocity.at("conv1.w")[3] == 0.125);
  const Network back = network_from_checkpoint(r);
  const Tensor x = random_images(1, 20, 24, 4);
  const Tensor a = net.predict(x);
  const Tensor b = back.predict(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}
