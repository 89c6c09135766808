#include "data/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "util/error.hpp"

namespace depthforge {

namespace {

// Triangle wave with kinks at the integers: 0 at even, 1 at odd.
double tri(double s) {
  const double m = s - 2.0 * std::floor(s / 2.0);
  return 1.0 - std::fabs(m - 1.0);
}

struct Layer {
  double depth = 1.0;
  double disparity = 0.0;
  // Left-image extent [x0, x1) x [y0, y1); the background covers everything.
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  bool background = false;
  double base = 0.0, amp = 0.0, half_period = 1.0, phase = 0.0;
  double vamp = 0.0, vhalf_period = 1.0, vphase = 0.0;
  double attenuation = 1.0;

  bool covers_left(double u, double v) const {
    return background || (u >= x0 && u < x1 && v >= y0 && v < y1);
  }
  // Texture coordinate u + d in the right view.
  bool covers_right(double u, double v) const { return covers_left(u + disparity, v); }

  double texture(double u, double v) const {
    const double t = base + amp * tri((u - phase) / half_period) + vamp * tri((v - vphase) / vhalf_period);
    return attenuation * t + (1.0 - attenuation) * 0.5;
  }
  long piece(double u) const { return static_cast<long>(std::floor((u - phase) / half_period)); }
};

}  // namespace

void SceneConfig::validate() const {
  if (width < 2 || height < 1) throw InvalidArgument("scene size must be at least 2x1");
  if (!(depth_min > 1.0) || !(depth_max < 80.0) || !(depth_min < depth_max)) {
    throw InvalidArgument("depth range must satisfy 1 < depth_min < depth_max < 80");
  }
  Calib::make(f_px, baseline_m);
  if (!(texture_period_m > 0.0)) throw InvalidArgument("texture_period_m must be positive");
  if (texture_amplitude < 0.0 || vertical_amplitude < 0.0 || texture_amplitude + vertical_amplitude > 0.6) {
    throw InvalidArgument("texture amplitudes must be nonnegative and sum to at most 0.6");
  }
  if (haze < 0.0) throw InvalidArgument("haze must be nonnegative");
  if (!(depth_shading >= 0.0) || depth_shading > 1.0) throw InvalidArgument("depth_shading must lie in [0, 1]");
  if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be nonnegative");
  if (!(gt_density > 0.0) || gt_density > 1.0) throw InvalidArgument("gt_density must lie in (0, 1]");
  if (!(gt_rows_band > 0.0) || gt_rows_band > 1.0) throw InvalidArgument("gt_rows_band must lie in (0, 1]");
}

void StereoSample::validate() const {
  require_rank4(left, "left image");
  const Shape shape = left.shape();
  if (shape[0] != 1 || shape[1] != 1) throw ShapeError("sample images must be 1 x 1 x H x W");
  require_shape(right, shape, "right image");
  require_shape(depth_left.depth, shape, "left depth");
  require_shape(depth_left.valid, shape, "left depth mask");
  require_shape(depth_right.depth, shape, "right depth");
  require_shape(depth_right.valid, shape, "right depth mask");
  Calib::make(calib.f, calib.b);
  for (const DepthMap* d : {&depth_left, &depth_right}) {
    for (std::size_t i = 0; i < d->depth.size(); ++i) {
      if (d->valid[i] != 0.0 && !(d->depth[i] > 0.0)) throw InvalidArgument("valid depth must be positive");
    }
  }
}

StereoSample gen_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Calib calib = Calib::make(cfg.f_px, cfg.baseline_m);
  const double max_shift = calib.fb() / cfg.depth_min;
  if (max_shift >= static_cast<double>(cfg.width)) {
    throw InvalidArgument("layer shift " + std::to_string(max_shift) + " px at depth_min reaches the image width " +
                          std::to_string(cfg.width));
  }
  const std::size_t W = cfg.width, H = cfg.height;
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  auto make_texture = [&](Layer& l) {
    l.disparity = calib.fb() / l.depth;
    l.half_period = calib.f * cfg.texture_period_m / (2.0 * l.depth);
    l.phase = uni(0.0, 2.0 * l.half_period);
    l.amp = cfg.texture_amplitude * uni(0.6, 1.0);
    l.vamp = cfg.vertical_amplitude * uni(0.0, 1.0);
    l.vhalf_period = uni(2.0, 0.5 * static_cast<double>(H) + 2.0);
    l.vphase = uni(0.0, 2.0 * l.vhalf_period);
    const double lo = 0.15, hi = 0.95 - l.amp - l.vamp;
    const double ramp = lo + (hi - lo) * (l.depth - cfg.depth_min) / (cfg.depth_max - cfg.depth_min);
    l.base = (1.0 - cfg.depth_shading) * uni(lo, hi) + cfg.depth_shading * ramp;
    l.attenuation = std::exp(-cfg.haze * l.depth / cfg.depth_max);
  };

  std::vector<Layer> layers;
  Layer bg;
  bg.background = true;
  bg.depth = uni(0.85 * cfg.depth_max, cfg.depth_max);
  make_texture(bg);
  layers.push_back(bg);

  std::vector<Layer> rects;
  const double Wd = static_cast<double>(W), Hd = static_cast<double>(H);
  for (std::size_t k = 0; k < cfg.num_layers; ++k) {
    Layer r;
    r.depth = uni(cfg.depth_min, std::min(0.8 * cfg.depth_max, bg.depth));
    const double w = std::round(uni(Wd / 6.0, Wd / 2.0));
    const double h = std::round(uni(Hd / 4.0, 0.8 * Hd));
    r.x0 = std::round(uni(-w / 4.0, Wd - 0.75 * w));
    r.y0 = std::round(uni(-h / 4.0, Hd - 0.75 * h));
    r.x1 = r.x0 + w;
    r.y1 = r.y0 + h;
    make_texture(r);
    rects.push_back(r);
  }
  // Far to near, so later layers occlude earlier ones.
  std::stable_sort(rects.begin(), rects.end(), [](const Layer& a, const Layer& b) { return a.depth > b.depth; });
  layers.insert(layers.end(), rects.begin(), rects.end());

  auto truth = std::make_shared<SceneTruth>();
  truth->width = W;
  truth->height = H;
  truth->layer_left.assign(W * H, 0);
  truth->layer_right.assign(W * H, 0);
  truth->piece_left.assign(W * H, 0);
  truth->piece_right.assign(W * H, 0);
  for (const Layer& l : layers) truth->layer_depth.push_back(l.depth);

  StereoSample s;
  s.calib = calib;
  s.left = Tensor({1, 1, H, W});
  s.right = Tensor({1, 1, H, W});
  Tensor zl({1, 1, H, W}), zr({1, 1, H, W});
  for (std::size_t y = 0; y < H; ++y) {
    const double v = static_cast<double>(y);
    for (std::size_t x = 0; x < W; ++x) {
      const double u = static_cast<double>(x);
      const std::size_t i = y * W + x;
      int kl = 0, kr = 0;
      for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
        if (layers[k].covers_left(u, v)) {
          kl = k;
          break;
        }
      }
      for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
        if (layers[k].covers_right(u, v)) {
          kr = k;
          break;
        }
      }
      const Layer& ll = layers[kl];
      const Layer& lr = layers[kr];
      s.left[i] = ll.texture(u, v);
      s.right[i] = lr.texture(u + lr.disparity, v);
      zl[i] = ll.depth;
      zr[i] = lr.depth;
      truth->layer_left[i] = kl;
      truth->layer_right[i] = kr;
      truth->piece_left[i] = ll.piece(u);
      truth->piece_right[i] = lr.piece(u + lr.disparity);
    }
  }

  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (Tensor* img : {&s.left, &s.right}) {
      for (double& p : img->values()) p = std::clamp(p + noise(rng), 0.0, 1.0);
    }
  }

  s.true_rho_left = Tensor({1, 1, H, W});
  s.true_rho_right = Tensor({1, 1, H, W});
  for (std::size_t i = 0; i < W * H; ++i) {
    s.true_rho_left[i] = 1.0 / zl[i];
    s.true_rho_right[i] = 1.0 / zr[i];
  }
  const std::uint64_t gt_seed = rng();
  DepthMap dl = DepthMap::dense(std::move(zl));
  DepthMap dr = DepthMap::dense(std::move(zr));
  if (cfg.gt_density < 1.0 || cfg.gt_rows_band < 1.0) {
    dl = sparsify_gt(dl, cfg.gt_density, cfg.gt_rows_band, gt_seed);
    dr = sparsify_gt(dr, cfg.gt_density, cfg.gt_rows_band, gt_seed ^ 0x9e3779b97f4a7c15ULL);
  }
  s.depth_left = std::move(dl);
  s.depth_right = std::move(dr);
  s.truth = std::move(truth);
  return s;
}

Tensor SceneTruth::exact_mask(View view, std::size_t margin, double fb) const {
  const std::size_t W = width, H = height;
  const auto& src_layer = view == View::kLeft ? layer_left : layer_right;
  const auto& dst_layer = view == View::kLeft ? layer_right : layer_left;
  const auto& dst_piece = view == View::kLeft ? piece_right : piece_left;
  const double sign = view == View::kLeft ? 1.0 : -1.0;
  const long m = static_cast<long>(margin);
  const long Wl = static_cast<long>(W), Hl = static_cast<long>(H);

  Tensor mask({1, 1, H, W});
  for (long y = 0; y < Hl; ++y) {
    for (long x = 0; x < Wl; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * Wl + x);
      const int k = src_layer[i];
      const double q = static_cast<double>(x) - sign * fb / layer_depth[k];
      if (q < 0.0 || q > static_cast<double>(W - 1)) continue;
      const long u0 = std::min(static_cast<long>(std::floor(q)), Wl - 2);
      if (x - m < 0 || x + m > Wl - 1 || u0 - m < 0 || u0 + 1 + m > Wl - 1) continue;
      // Smoothed intensities are weighted sums over offsets j; each offset's
      // bilinear pair must be one layer and one linear piece.
      bool ok = true;
      for (long dy = -m; dy <= m && ok; ++dy) {
        const long yy = std::clamp(y + dy, 0L, Hl - 1);
        for (long j = -m; j <= m && ok; ++j) {
          const std::size_t a = static_cast<std::size_t>(yy * Wl + x + j);
          const std::size_t b0 = static_cast<std::size_t>(yy * Wl + u0 + j);
          ok = src_layer[a] == k && dst_layer[b0] == k && dst_layer[b0 + 1] == k &&
               dst_piece[b0] == dst_piece[b0 + 1];
        }
      }
      if (ok) mask[i] = 1.0;
    }
  }
  return mask;
}

DepthMap sparsify_gt(const DepthMap& dense, double density, double rows_band, std::uint64_t seed) {
  if (!(density > 0.0) || density > 1.0) throw InvalidArgument("density must lie in (0, 1]");
  if (!(rows_band > 0.0) || rows_band > 1.0) throw InvalidArgument("rows_band must lie in (0, 1]");
  require_rank4(dense.depth, "depth");
  require_shape(dense.valid, dense.depth.shape(), "depth mask");
  const Dims4 d = dense.depth.dims4();
  const std::size_t band_rows = static_cast<std::size_t>(std::llround(rows_band * static_cast<double>(d.h)));
  const std::size_t first_row = d.h - std::min(band_rows, d.h);

  DepthMap out{dense.depth, Tensor(dense.depth.shape(), 0.0)};
  std::mt19937_64 rng(seed);
  const std::size_t plane = d.h * d.w;
  for (std::size_t n = 0; n < d.n; ++n) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = first_row * d.w; i < plane; ++i) {
      if (dense.valid[n * plane + i] != 0.0) eligible.push_back(n * plane + i);
    }
    if (eligible.empty()) throw InvalidArgument("sparsify_gt: no eligible ground-truth pixels");
    const std::size_t keep =
        static_cast<std::size_t>(std::llround(density * static_cast<double>(eligible.size())));
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < keep; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
      std::swap(eligible[i], eligible[pick(rng)]);
      out.valid[eligible[i]] = 1.0;
    }
  }
  return out;
}

StereoSample augment_with(const StereoSample& sample, double alpha, double gamma) {
  if (!(alpha > 0.0) || !(gamma > 0.0)) throw InvalidArgument("augmentation factors must be positive");
  StereoSample out = sample;
  for (Tensor* img : {&out.left, &out.right}) {
    for (double& p : img->values()) p = std::clamp(std::pow(p, gamma) * alpha, 0.0, 1.0);
  }
  return out;
}

StereoSample augment(const StereoSample& sample, std::uint64_t seed, const AugmentRanges& r) {
  if (!(r.alpha_lo > 0.0) || !(r.gamma_lo > 0.0) || r.alpha_hi < r.alpha_lo || r.gamma_hi < r.gamma_lo) {
    throw InvalidArgument("augmentation ranges must be positive and ordered");
  }
  std::mt19937_64 rng(seed);
  const double alpha = std::uniform_real_distribution<double>(r.alpha_lo, r.alpha_hi)(rng);
  const double gamma = std::uniform_real_distribution<double>(r.gamma_lo, r.gamma_hi)(rng);
  return augment_with(sample, alpha, gamma);
}

StereoBatch make_batch(const std::vector<const StereoSample*>& samples) {
  if (samples.empty()) throw InvalidArgument("make_batch: no samples");
  std::vector<const Tensor*> l, r, zl, vl, zr, vr;
  StereoBatch b;
  for (const StereoSample* s : samples) {
    if (s->left.shape() != samples.front()->left.shape()) throw ShapeError("make_batch: samples differ in size");
    l.push_back(&s->left);
    r.push_back(&s->right);
    zl.push_back(&s->depth_left.depth);
    vl.push_back(&s->depth_left.valid);
    zr.push_back(&s->depth_right.depth);
    vr.push_back(&s->depth_right.valid);
    b.calib.push_back(s->calib);
  }
  b.left = concat_batch(l);
  b.right = concat_batch(r);
  b.depth_left = DepthMap{concat_batch(zl), concat_batch(vl)};
  b.depth_right = DepthMap{concat_batch(zr), concat_batch(vr)};
  return b;
}

}  // namespace depthforge
