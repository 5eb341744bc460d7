#pragma once

#include <optional>
#include <unordered_map>

#include "fdi/tensor.hpp"

namespace fdi {

// All ops record their backward rule on the graph when it is recording and
// any input requires grad. Shapes follow the usual NCHW convention.

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);
Tensor linear(Graph& g, const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor relu(Graph& g, const Tensor& x);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, real c);
Tensor concat_channels(Graph& g, const std::vector<Tensor>& parts);
Tensor global_avg_pool(Graph& g, const Tensor& x);  // [N,C,H,W] -> [N,C]

// Mean cross-entropy over the batch. `allowed`, when given, has one flag per
// class; disallowed classes behave as if their logit were -inf (zero
// probability, zero gradient).
Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels,
                             std::span<const std::uint8_t> allowed = {});
Tensor mse(Graph& g, const Tensor& a, const Tensor& b);

// Per-channel batch normalization with running statistics.
struct BatchNorm2d {
    Tensor gamma, beta;
    std::vector<real> running_mean, running_var;
    real momentum = real(0.1);
    real eps = real(1e-5);

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels)
        : gamma(Tensor::full({channels}, real(1))),
          beta(Tensor({channels})),
          running_mean(static_cast<std::size_t>(channels), real(0)),
          running_var(static_cast<std::size_t>(channels), real(1)) {
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
    }

    Tensor forward(Graph& g, const Tensor& x, bool training);
};

// Classic momentum SGD. Momentum buffers persist across steps, keyed by
// parameter identity; parameters with requires_grad == false are skipped.
struct Sgd {
    std::vector<Tensor> params;
    real lr;
    real momentum = real(0);
    real weight_decay = real(0);

    void step();
    void zero_grad();

private:
    std::unordered_map<TensorImpl*, std::vector<real>> velocity_;
};

}  // namespace fdi
