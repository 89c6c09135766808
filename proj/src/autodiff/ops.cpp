#include "autodiff/ops.hpp"

#include <memory>

#include "util/error.hpp"

namespace depthforge::ad {

Var conv2d(const Var& input, const Var& weights, const std::optional<Var>& bias, const ConvSpec& spec) {
  Tape& tape = input.tape();
  Tensor out = depthforge::conv2d(input.value(), weights.value(), bias ? bias->value() : Tensor{}, spec);
  std::vector<Var> inputs{input, weights};
  if (bias) inputs.push_back(*bias);
  return tape.record("conv2d", std::move(out), inputs, [input, weights, bias, spec](Tape& t, const Tensor& g) {
    const bool need_bias = bias && t.requires_grad(*bias);
    Conv2dGrads grads =
        conv2d_backward(input.value(), weights.value(), g, spec, t.requires_grad(input), need_bias);
    t.accumulate(weights, grads.weights);
    if (t.requires_grad(input)) t.accumulate(input, grads.input);
    if (need_bias) t.accumulate(*bias, grads.bias);
  });
}

Var max_pool2d(const Var& input, std::size_t kernel, std::size_t stride) {
  PoolResult r = max_pool2d_with_indices(input.value(), kernel, stride);
  auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
  return input.tape().record("max_pool2d", std::move(r.output), {input}, [input, argmax](Tape& t, const Tensor& g) {
    t.accumulate(input, max_pool2d_backward(input.value().shape(), *argmax, g));
  });
}

namespace {

Var record_batch_norm(const Var& input, const Var& gamma, const Var& beta, Tensor out,
                      std::shared_ptr<BatchNormCache> cache, Mode mode) {
  return input.tape().record("batch_norm", std::move(out), {input, gamma, beta},
                             [input, gamma, beta, cache, mode](Tape& t, const Tensor& g) {
                               BatchNormGrads grads = batch_norm_backward(g, gamma.value(), *cache, mode);
                               t.accumulate(input, grads.input);
                               t.accumulate(gamma, grads.gamma);
                               t.accumulate(beta, grads.beta);
                             });
}

}  // namespace

Var batch_norm_train(const Var& input, const Var& gamma, const Var& beta, BNState* state) {
  auto cache = std::make_shared<BatchNormCache>();
  Tensor out = depthforge::batch_norm_train(input.value(), gamma.value(), beta.value(), state, cache.get());
  return record_batch_norm(input, gamma, beta, std::move(out), std::move(cache), Mode::kTrain);
}

Var batch_norm_eval(const Var& input, const Var& gamma, const Var& beta, const BNState& state) {
  auto cache = std::make_shared<BatchNormCache>();
  Tensor out = depthforge::batch_norm_eval(input.value(), gamma.value(), beta.value(), state, cache.get());
  return record_batch_norm(input, gamma, beta, std::move(out), std::move(cache), Mode::kEval);
}

Var relu(const Var& input) {
  return input.tape().record("relu", depthforge::relu(input.value()), {input}, [input](Tape& t, const Tensor& g) {
    Tensor& acc = t.adjoint(input);
    const Tensor& x = input.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) acc[i] += g[i];
    }
  });
}

Var softplus(const Var& input) {
  return input.tape().record("softplus", depthforge::softplus(input.value()), {input},
                             [input](Tape& t, const Tensor& g) {
                               Tensor& acc = t.adjoint(input);
                               const Tensor& x = input.value();
                               for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * sigmoid(x[i]);
                             });
}

Var unpool2x(const Var& input) {
  return input.tape().record("unpool2x", depthforge::unpool2x(input.value()), {input},
                             [input](Tape& t, const Tensor& g) { t.accumulate(input, unpool2x_backward(g)); });
}

Var crop(const Var& input, std::size_t h, std::size_t w) {
  return input.tape().record("crop", depthforge::crop(input.value(), h, w), {input}, [input](Tape& t, const Tensor& g) {
    t.accumulate(input, crop_backward(g, input.value().shape()));
  });
}

Var resize_bilinear(const Var& input, std::size_t h, std::size_t w) {
  return input.tape().record("resize_bilinear", depthforge::resize_bilinear(input.value(), h, w), {input},
                             [input](Tape& t, const Tensor& g) {
                               t.accumulate(input, resize_bilinear_backward(g, input.value().shape()));
                             });
}

Var slice_batch(const Var& input, std::size_t begin, std::size_t count) {
  return input.tape().record("slice_batch", depthforge::slice_batch(input.value(), begin, count), {input},
                             [input, begin](Tape& t, const Tensor& g) {
                               Tensor& acc = t.adjoint(input);
                               const std::size_t offset = begin * (acc.size() / acc.dim(0));
                               for (std::size_t i = 0; i < g.size(); ++i) acc[offset + i] += g[i];
                             });
}

Var add(const Var& a, const Var& b) {
  return a.tape().record("add", depthforge::add(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var mul(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("mul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& acc = t.adjoint(a);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * b.value()[i];
    }
    if (t.requires_grad(b)) {
      Tensor& acc = t.adjoint(b);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(const Var& input, double factor) {
  return input.tape().record("scale", scaled(input.value(), factor), {input}, [input, factor](Tape& t, const Tensor& g) {
    axpy(factor, g, t.adjoint(input));
  });
}

Var mask_multiply(const Var& input, const Tensor& mask) {
  require_shape(mask, input.shape(), "mask_multiply mask");
  Tensor out = input.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  auto m = std::make_shared<Tensor>(mask);
  return input.tape().record("mask_multiply", std::move(out), {input}, [input, m](Tape& t, const Tensor& g) {
    Tensor& acc = t.adjoint(input);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * (*m)[i];
  });
}

Var sum(const Var& input) {
  return input.tape().record("sum", Tensor({1}, depthforge::sum(input.value())), {input},
                             [input](Tape& t, const Tensor& g) {
                               Tensor& acc = t.adjoint(input);
                               for (double& v : acc.values()) v += g[0];
                             });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) throw InvalidArgument("weighted_sum: term/weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw ShapeError("weighted_sum: terms must be scalar");
    total += weights[i] * terms[i].value()[0];
  }
  return terms.front().tape().record("weighted_sum", Tensor({1}, total), terms,
                                     [terms, weights](Tape& t, const Tensor& g) {
                                       for (std::size_t i = 0; i < terms.size(); ++i) {
                                         if (t.requires_grad(terms[i])) t.adjoint(terms[i])[0] += weights[i] * g[0];
                                       }
                                     });
}

}  // namespace depthforge::ad
