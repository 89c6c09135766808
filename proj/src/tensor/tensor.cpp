#include "tensor/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "util/error.hpp"
#include "util/parallel.hpp"

namespace depthforge {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void check_dims4(const Tensor& t, std::string_view what) { require_rank4(t, what); }

struct ConvGeometry {
  Dims4 in;
  std::size_t ho, wo;
  Padding2d pad;
  std::size_t k, s;
  bool direct;  // 1x1, stride 1: the input already is the column matrix
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  check_dims4(input, "conv2d input");
  if (spec.kernel < 1 || spec.stride < 1) throw InvalidArgument("conv2d: kernel and stride must be >= 1");
  const Dims4 d = input.dims4();
  if (d.c != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(d.c) + " channels, spec expects " +
                     std::to_string(spec.in_channels) + " (input " + shape_string(input.shape()) + ")");
  }
  const Shape expected{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (weights.shape() != expected) {
    throw ShapeError("conv2d: weights " + shape_string(weights.shape()) + ", expected " +
                     shape_string(expected));
  }
  ConvGeometry g;
  g.in = d;
  g.k = spec.kernel;
  g.s = spec.stride;
  g.ho = ceil_div(d.h, spec.stride);
  g.wo = ceil_div(d.w, spec.stride);
  g.pad = same_ceil_padding(spec.kernel, spec.stride, d.h, d.w);
  g.direct = spec.kernel == 1 && spec.stride == 1;
  return g;
}

// Per-thread scratch that only grows; callers overwrite what they use.
double* scratch(std::vector<double>& buf, std::size_t n) {
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

thread_local std::vector<double> tl_col;
thread_local std::vector<double> tl_dcol;

void im2col(const double* in, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.ho * g.wo;
  for (std::size_t c = 0; c < g.in.c; ++c) {
    const double* plane = in + c * g.in.h * g.in.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.s + ki) - static_cast<std::ptrdiff_t>(g.pad.top);
          double* dst = row + oh * g.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(ih) * g.in.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.s + kj) - static_cast<std::ptrdiff_t>(g.pad.left);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in.w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* in) {
  const std::size_t cols = g.ho * g.wo;
  for (std::size_t c = 0; c < g.in.c; ++c) {
    double* plane = in + c * g.in.h * g.in.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.s + ki) - static_cast<std::ptrdiff_t>(g.pad.top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in.h)) continue;
          double* dst = plane + static_cast<std::size_t>(ih) * g.in.w;
          const double* src = row + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.s + kj) - static_cast<std::ptrdiff_t>(g.pad.left);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw IoError("tensor blob truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  return shape_[axis];
}

Dims4 Tensor::dims4() const {
  if (shape_.size() != 4) throw ShapeError("expected rank-4 tensor, got " + shape_string(shape_));
  return {shape_[0], shape_[1], shape_[2], shape_[3]};
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void require_finite(const Tensor& t, std::string_view what) {
  const auto v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(what) + ": non-finite value " + std::to_string(v[i]) + " at flat index " +
                         std::to_string(i));
    }
  }
}

void require_shape(const Tensor& t, const Shape& expected, std::string_view what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(t.shape()) + ", expected " + shape_string(expected));
  }
}

void require_rank4(const Tensor& t, std::string_view what) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + ": expected N x C x H x W, got " + shape_string(t.shape()));
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) {
    throw ShapeError("add: shapes " + shape_string(dst.shape()) + " and " + shape_string(src.shape()) + " differ");
  }
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  if (!x.same_shape(y)) throw ShapeError("axpy: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()));
  double* d = y.data();
  const double* s = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) d[i] += alpha * s[i];
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

Tensor scaled(const Tensor& t, double factor) {
  Tensor out = t;
  for (double& v : out.values()) v *= factor;
  return out;
}

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t count) {
  if (t.rank() == 0 || begin + count > t.dim(0) || count == 0) {
    throw ShapeError("slice_batch [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                     shape_string(t.shape()));
  }
  Shape shape = t.shape();
  const std::size_t stride = t.size() / shape[0];
  shape[0] = count;
  std::vector<double> values(t.data() + begin * stride, t.data() + (begin + count) * stride);
  return Tensor(std::move(shape), std::move(values));
}

Tensor concat_batch(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  Shape shape = parts.front()->shape();
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    Shape tail = p->shape();
    if (tail.size() != shape.size()) throw ShapeError("concat_batch: rank mismatch");
    for (std::size_t i = 1; i < tail.size(); ++i) {
      if (tail[i] != shape[i]) {
        throw ShapeError("concat_batch: " + shape_string(p->shape()) + " vs " + shape_string(shape));
      }
    }
    total += tail[0];
  }
  shape[0] = total;
  std::vector<double> values;
  values.reserve(shape_size(shape));
  for (const Tensor* p : parts) values.insert(values.end(), p->data(), p->data() + p->size());
  return Tensor(std::move(shape), std::move(values));
}

std::pair<std::size_t, std::size_t> same_ceil_padding(std::size_t extent, std::size_t kernel, std::size_t stride) {
  const std::size_t out = ceil_div(extent, stride);
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > extent ? needed - extent : 0;
  return {total / 2, total - total / 2};
}

Padding2d same_ceil_padding(std::size_t kernel, std::size_t stride, std::size_t h, std::size_t w) {
  const auto [top, bottom] = same_ceil_padding(h, kernel, stride);
  const auto [left, right] = same_ceil_padding(w, kernel, stride);
  return {top, bottom, left, right};
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(input, weights, spec);
  if (!bias.empty() && bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + ", expected [" + std::to_string(spec.out_channels) + "]");
  }
  const std::size_t ckk = g.in.c * g.k * g.k;
  const std::size_t cols = g.ho * g.wo;
  Tensor out({g.in.n, spec.out_channels, g.ho, g.wo});
  const ConstMatMap w(weights.data(), static_cast<Eigen::Index>(spec.out_channels), static_cast<Eigen::Index>(ckk));
  parallel_for(g.in.n, [&](std::size_t n) {
    const double* in_n = input.data() + n * g.in.c * g.in.h * g.in.w;
    const double* col = in_n;
    if (!g.direct) {
      double* buf = scratch(tl_col, ckk * cols);
      im2col(in_n, g, buf);
      col = buf;
    }
    MatMap y(out.data() + n * spec.out_channels * cols, static_cast<Eigen::Index>(spec.out_channels),
             static_cast<Eigen::Index>(cols));
    y.noalias() = w * ConstMatMap(col, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols));
    if (!bias.empty()) {
      for (std::size_t o = 0; o < spec.out_channels; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    }
  });
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out, const ConvSpec& spec,
                            bool need_input, bool need_bias) {
  const ConvGeometry g = conv_geometry(input, weights, spec);
  require_shape(grad_out, {g.in.n, spec.out_channels, g.ho, g.wo}, "conv2d_backward grad");
  const std::size_t ckk = g.in.c * g.k * g.k;
  const std::size_t cols = g.ho * g.wo;
  const auto out_ch = static_cast<Eigen::Index>(spec.out_channels);
  Conv2dGrads grads;
  grads.weights = Tensor(weights.shape());
  if (need_input) grads.input = Tensor(input.shape());

  // Per-sample weight gradients, summed afterwards in sample order so the
  // result is independent of the worker count.
  std::vector<Tensor> partial(g.in.n);
  const ConstMatMap w(weights.data(), out_ch, static_cast<Eigen::Index>(ckk));
  parallel_for(g.in.n, [&](std::size_t n) {
    const double* in_n = input.data() + n * g.in.c * g.in.h * g.in.w;
    const double* col = in_n;
    if (!g.direct) {
      double* buf = scratch(tl_col, ckk * cols);
      im2col(in_n, g, buf);
      col = buf;
    }
    const ConstMatMap dy(grad_out.data() + n * spec.out_channels * cols, out_ch, static_cast<Eigen::Index>(cols));
    partial[n] = Tensor(weights.shape());
    MatMap dw(partial[n].data(), out_ch, static_cast<Eigen::Index>(ckk));
    dw.noalias() = dy * ConstMatMap(col, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols)).transpose();
    if (need_input) {
      double* dx_n = grads.input.data() + n * g.in.c * g.in.h * g.in.w;
      if (g.direct) {
        MatMap dx(dx_n, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols));
        dx.noalias() = w.transpose() * dy;
      } else {
        double* dcol = scratch(tl_dcol, ckk * cols);
        MatMap dc(dcol, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols));
        dc.noalias() = w.transpose() * dy;
        col2im(dcol, g, dx_n);
      }
    }
  });
  for (const Tensor& p : partial) add_inplace(grads.weights, p);
  if (need_bias) {
    grads.bias = Tensor({spec.out_channels});
    for (std::size_t n = 0; n < g.in.n; ++n) {
      for (std::size_t o = 0; o < spec.out_channels; ++o) {
        const double* row = grad_out.data() + (n * spec.out_channels + o) * cols;
        double s = 0.0;
        for (std::size_t i = 0; i < cols; ++i) s += row[i];
        grads.bias[o] += s;
      }
    }
  }
  return grads;
}

PoolResult max_pool2d_with_indices(const Tensor& input, std::size_t kernel, std::size_t stride) {
  check_dims4(input, "max_pool2d input");
  if (kernel < 1 || stride < 1) throw InvalidArgument("max_pool2d: kernel and stride must be >= 1");
  const Dims4 d = input.dims4();
  const std::size_t ho = ceil_div(d.h, stride);
  const std::size_t wo = ceil_div(d.w, stride);
  const Padding2d pad = same_ceil_padding(kernel, stride, d.h, d.w);
  PoolResult r{Tensor({d.n, d.c, ho, wo}), std::vector<std::size_t>(d.n * d.c * ho * wo)};
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const std::size_t base = p * d.h * d.w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad.top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad.left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const std::size_t idx = base + static_cast<std::size_t>(ih) * d.w + static_cast<std::size_t>(iw);
            if (!found || input[idx] > best) {
              best = input[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (p * ho + oh) * wo + ow;
        r.output[o] = best;
        r.argmax[o] = best_idx;
      }
    }
  }
  return r;
}

Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  return max_pool2d_with_indices(input, kernel, stride).output;
}

Tensor max_pool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) throw ShapeError("max_pool2d_backward: index/grad size mismatch");
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_out[i];
  return grad;
}

BNState BNState::fresh(std::size_t channels) {
  BNState s;
  s.running_mean = Tensor({channels}, 0.0);
  s.running_var = Tensor({channels}, 1.0);
  return s;
}

namespace {

void check_bn_params(const Tensor& input, const Tensor& gamma, const Tensor& beta) {
  check_dims4(input, "batch_norm input");
  const std::size_t c = input.dim(1);
  require_shape(gamma, {c}, "batch_norm gamma");
  require_shape(beta, {c}, "batch_norm beta");
}

}  // namespace

Tensor batch_norm_train(const Tensor& input, const Tensor& gamma, const Tensor& beta, BNState* state,
                        BatchNormCache* cache) {
  check_bn_params(input, gamma, beta);
  const Dims4 d = input.dims4();
  const std::size_t plane = d.h * d.w;
  const std::size_t m = d.n * plane;
  const double eps = state ? state->eps : 1e-5;
  Tensor out(input.shape());
  Tensor normalized(input.shape());
  std::vector<double> inv_std(d.c);
  std::vector<double> means(d.c), vars(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const double* p = input.data() + (n * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    }
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const double* p = input.data() + (n * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= static_cast<double>(m);
    means[c] = mean;
    vars[c] = var;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (input[off + i] - mean) * inv_std[c];
        normalized[off + i] = xh;
        out[off + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  if (state) {
    if (!state->populated()) *state = BNState{Tensor({d.c}, 0.0), Tensor({d.c}, 1.0), state->momentum, state->eps};
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    for (std::size_t c = 0; c < d.c; ++c) {
      state->running_mean[c] = state->momentum * state->running_mean[c] + (1.0 - state->momentum) * means[c];
      state->running_var[c] = state->momentum * state->running_var[c] + (1.0 - state->momentum) * vars[c] * unbias;
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor batch_norm_eval(const Tensor& input, const Tensor& gamma, const Tensor& beta, const BNState& state,
                       BatchNormCache* cache) {
  check_bn_params(input, gamma, beta);
  if (!state.populated()) throw InvalidArgument("batch_norm: eval mode requires populated running statistics");
  const Dims4 d = input.dims4();
  require_shape(state.running_mean, {d.c}, "batch_norm running_mean");
  require_shape(state.running_var, {d.c}, "batch_norm running_var");
  const std::size_t plane = d.h * d.w;
  Tensor out(input.shape());
  Tensor normalized;
  if (cache) normalized = Tensor(input.shape());
  std::vector<double> inv_std(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    const double mean = state.running_mean[c];
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (input[off + i] - mean) * inv_std[c];
        if (cache) normalized[off + i] = xh;
        out[off + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BNState& state, Mode mode) {
  return mode == Mode::kTrain ? batch_norm_train(input, gamma, beta, &state, nullptr)
                              : batch_norm_eval(input, gamma, beta, state, nullptr);
}

BatchNormGrads batch_norm_backward(const Tensor& grad_out, const Tensor& gamma, const BatchNormCache& cache,
                                   Mode mode) {
  require_shape(grad_out, cache.normalized.shape(), "batch_norm_backward grad");
  const Dims4 d = grad_out.dims4();
  const std::size_t plane = d.h * d.w;
  const double m = static_cast<double>(d.n * plane);
  BatchNormGrads g{Tensor(grad_out.shape()), Tensor({d.c}), Tensor({d.c})};
  for (std::size_t c = 0; c < d.c; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xh += grad_out[off + i] * cache.normalized[off + i];
      }
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xh;
    const double scale = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode == Mode::kTrain) {
          g.input[off + i] = scale * (grad_out[off + i] - sum_dy / m - cache.normalized[off + i] * sum_dy_xh / m);
        } else {
          g.input[off + i] = scale * grad_out[off + i];
        }
      }
    }
  }
  return g;
}

Tensor unpool2x(const Tensor& input) {
  check_dims4(input, "unpool2x input");
  const Dims4 d = input.dims4();
  Tensor out({d.n, d.c, 2 * d.h, 2 * d.w});
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) {
        out[(p * 2 * d.h + 2 * y) * 2 * d.w + 2 * x] = input[(p * d.h + y) * d.w + x];
      }
    }
  }
  return out;
}

Tensor unpool2x_backward(const Tensor& grad_out) {
  check_dims4(grad_out, "unpool2x_backward grad");
  const Dims4 d = grad_out.dims4();
  if (d.h % 2 || d.w % 2) throw ShapeError("unpool2x_backward: odd extents " + shape_string(grad_out.shape()));
  const std::size_t h = d.h / 2, w = d.w / 2;
  Tensor g({d.n, d.c, h, w});
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) g[(p * h + y) * w + x] = grad_out[(p * d.h + 2 * y) * d.w + 2 * x];
    }
  }
  return g;
}

Tensor crop(const Tensor& input, std::size_t h, std::size_t w) {
  check_dims4(input, "crop input");
  const Dims4 d = input.dims4();
  if (h > d.h || w > d.w || h == 0 || w == 0) {
    throw ShapeError("crop to " + std::to_string(h) + "x" + std::to_string(w) + " from " + shape_string(input.shape()));
  }
  if (h == d.h && w == d.w) return input;
  Tensor out({d.n, d.c, h, w});
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(input.data() + (p * d.h + y) * d.w, w, out.data() + (p * h + y) * w);
    }
  }
  return out;
}

Tensor crop_backward(const Tensor& grad_out, const Shape& input_shape) {
  Tensor g(input_shape);
  const Dims4 d = g.dims4();
  const Dims4 o = grad_out.dims4();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    for (std::size_t y = 0; y < o.h; ++y) {
      std::copy_n(grad_out.data() + (p * o.h + y) * o.w, o.w, g.data() + (p * d.h + y) * d.w);
    }
  }
  return g;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& input, std::size_t h, std::size_t w) {
  check_dims4(input, "resize_bilinear input");
  const Dims4 d = input.dims4();
  if (h == 0 || w == 0) throw ShapeError("resize_bilinear: zero target size");
  const auto ty = resize_taps(d.h, h);
  const auto tx = resize_taps(d.w, w);
  Tensor out({d.n, d.c, h, w});
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* src = input.data() + p * d.h * d.w;
    double* dst = out.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < w; ++x) {
        const Tap& b = tx[x];
        const double top = src[a.i0 * d.w + b.i0] * (1 - b.frac) + src[a.i0 * d.w + b.i1] * b.frac;
        const double bot = src[a.i1 * d.w + b.i0] * (1 - b.frac) + src[a.i1 * d.w + b.i1] * b.frac;
        dst[y * w + x] = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  return out;
}

Tensor resize_bilinear_backward(const Tensor& grad_out, const Shape& input_shape) {
  Tensor g(input_shape);
  const Dims4 d = g.dims4();
  const Dims4 o = grad_out.dims4();
  const auto ty = resize_taps(d.h, o.h);
  const auto tx = resize_taps(d.w, o.w);
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    double* dst = g.data() + p * d.h * d.w;
    const double* src = grad_out.data() + p * o.h * o.w;
    for (std::size_t y = 0; y < o.h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < o.w; ++x) {
        const Tap& b = tx[x];
        const double gv = src[y * o.w + x];
        dst[a.i0 * d.w + b.i0] += gv * (1 - a.frac) * (1 - b.frac);
        dst[a.i0 * d.w + b.i1] += gv * (1 - a.frac) * b.frac;
        dst[a.i1 * d.w + b.i0] += gv * a.frac * (1 - b.frac);
        dst[a.i1 * d.w + b.i1] += gv * a.frac * b.frac;
      }
    }
  }
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softplus(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = softplus(v);
  return out;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  put_u64(out, t.rank());
  for (auto e : t.shape()) put_u64(out, e);
  for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed writing tensor blob");
}

Tensor read_tensor(std::istream& in) {
  const std::uint64_t rank = get_u64(in);
  if (rank == 0 || rank > 8) throw IoError("tensor blob: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    e = get_u64(in);
    if (e == 0 || e > (1ull << 32)) throw IoError("tensor blob: implausible extent " + std::to_string(e));
    count *= e;
  }
  if (count > (1ull << 31)) throw IoError("tensor blob: too large");
  std::vector<double> values(count);
  for (auto& v : values) v = std::bit_cast<double>(get_u64(in));
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace depthforge
