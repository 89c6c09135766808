#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace depthforge {

using Shape = std::vector<std::size_t>;

struct Dims4 {
  std::size_t n, c, h, w;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Image-like data uses N x C x H x W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  bool empty() const { return data_.empty(); }
  Dims4 dims4() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(double v);
  Tensor reshaped(Shape shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(const Tensor& t, std::string_view what);
void require_shape(const Tensor& t, const Shape& expected, std::string_view what);
void require_rank4(const Tensor& t, std::string_view what);

double sum(const Tensor& t);
void add_inplace(Tensor& dst, const Tensor& src);
void axpy(double alpha, const Tensor& x, Tensor& y);  // y += alpha * x
Tensor add(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& t, double factor);

/// Batch slicing along axis 0 and concatenation along axis 0.
Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t count);
Tensor concat_batch(const std::vector<const Tensor*>& parts);

// --- convolution --------------------------------------------------------

struct ConvSpec {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

struct Padding2d {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;
};

constexpr std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Zero padding (before, after) making a k-wide, stride-s window produce
/// ceil(extent / s) outputs.
std::pair<std::size_t, std::size_t> same_ceil_padding(std::size_t extent, std::size_t kernel,
                                                      std::size_t stride);
Padding2d same_ceil_padding(std::size_t kernel, std::size_t stride, std::size_t h, std::size_t w);

/// weights: out x in x k x k; bias: empty or [out].
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);

struct Conv2dGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                            const ConvSpec& spec, bool need_input, bool need_bias);

// --- pooling ------------------------------------------------------------

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Padding counts as -inf. Ties resolve to the first maximum in row-major order.
PoolResult max_pool2d_with_indices(const Tensor& input, std::size_t kernel, std::size_t stride);
Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride);
Tensor max_pool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                           const Tensor& grad_out);

// --- batch normalization --------------------------------------------------

enum class Mode { kTrain, kEval };

struct BNState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  bool populated() const { return !running_mean.empty() && !running_var.empty(); }
  /// Running statistics for a fresh layer: mean 0, variance 1.
  static BNState fresh(std::size_t channels);
};

struct BatchNormCache {
  Tensor normalized;            // x_hat
  std::vector<double> inv_std;  // per channel
};

/// Train mode normalizes by batch statistics and, when `state` is non-null,
/// folds them into the running statistics.
Tensor batch_norm_train(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                        BNState* state, BatchNormCache* cache);
Tensor batch_norm_eval(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       const BNState& state, BatchNormCache* cache);
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BNState& state,
                  Mode mode);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

BatchNormGrads batch_norm_backward(const Tensor& grad_out, const Tensor& gamma,
                                   const BatchNormCache& cache, Mode mode);

// --- resampling -----------------------------------------------------------

/// Doubles H and W; each value lands at the top-left of its 2x2 cell.
Tensor unpool2x(const Tensor& input);
Tensor unpool2x_backward(const Tensor& grad_out);

/// Keeps the top-left h x w window.
Tensor crop(const Tensor& input, std::size_t h, std::size_t w);
Tensor crop_backward(const Tensor& grad_out, const Shape& input_shape);

/// Bilinear resize with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& input, std::size_t h, std::size_t w);
Tensor resize_bilinear_backward(const Tensor& grad_out, const Shape& input_shape);

// --- elementwise ----------------------------------------------------------

Tensor relu(const Tensor& input);
Tensor softplus(const Tensor& input);
double softplus(double x);
double sigmoid(double x);

// --- serialization --------------------------------------------------------

/// Little-endian: u64 rank, u64 extents, then raw f64 values.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

}  // namespace depthforge
