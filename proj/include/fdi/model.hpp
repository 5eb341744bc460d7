#pragma once

#include <array>
#include <random>
#include <string>

#include "fdi/wavelet.hpp"

namespace fdi {

enum class ScalingMode { FULL, HALVE_BOTH, HALVE_WIDTH_ONLY, HALVE_DEPTH_ONLY };
enum class AggregatorVariant { NO_INTEGRATION, LOW_DOMINANCE, HIGH_DOMINANCE, MUTUAL };

const char* scaling_name(ScalingMode m);
ScalingMode scaling_from_name(const std::string& name);
const char* variant_name(AggregatorVariant v);
AggregatorVariant variant_from_name(const std::string& name);

struct BackboneConfig {
    int base_width = 64;
    std::array<int, 4> blocks_per_stage{2, 2, 2, 2};
    int num_classes = 10;
    ScalingMode scaling = ScalingMode::HALVE_BOTH;
    int in_channels = 3;
};

// Parameter-free feature exchange between the two branches.
std::pair<Tensor, Tensor> aggregate(Graph& g, const Tensor& x_l, const Tensor& x_h,
                                    AggregatorVariant variant);

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int cin, int cout, int k, int stride, int pad, bool bias, std::mt19937_64& rng);

    Tensor forward(Graph& g, const Tensor& x) const { return conv2d(g, x, w, b, stride, pad); }
    long long params() const;
    long long macs(int ho, int wo) const;
};

struct LinearLayer {
    Tensor w, b;

    LinearLayer() = default;
    LinearLayer(int in, int out, std::mt19937_64& rng);

    Tensor forward(Graph& g, const Tensor& x) const { return linear(g, x, w, b); }
    long long params() const { return static_cast<long long>(w.numel() + b.numel()); }
};

// Two 3x3 convs with identity or projection shortcut.
struct BasicBlock {
    Conv2dLayer conv1, conv2;
    BatchNorm2d bn1, bn2;
    bool has_proj = false;
    Conv2dLayer proj;
    BatchNorm2d proj_bn;

    BasicBlock() = default;
    BasicBlock(int cin, int cout, int stride, std::mt19937_64& rng);

    Tensor forward(Graph& g, const Tensor& x, bool training);
};

// Stage-structured residual trunk (stem + 4 stages), classifier not included.
struct Backbone {
    Conv2dLayer stem;
    BatchNorm2d stem_bn;
    std::vector<std::vector<BasicBlock>> stages;  // 4 stages
    int out_channels = 0;

    Backbone() = default;
    Backbone(int in_channels, int width, const std::array<int, 4>& blocks, std::mt19937_64& rng);

    Tensor forward_stem(Graph& g, const Tensor& x, bool training);
    Tensor forward_stage(Graph& g, int i, const Tensor& x, bool training);
};

// CIFAR-style single-branch residual classifier used as the baseline.
struct ResNet {
    BackboneConfig config;
    Backbone body;
    LinearLayer fc;

    Tensor forward(Graph& g, const Tensor& images, bool training);
};

// L-Net + H-Net + per-stage aggregators + pointwise fuser + joint classifier.
struct DualNet {
    BackboneConfig config;
    AggregatorVariant variant = AggregatorVariant::MUTUAL;
    FrequencySelection selection = FrequencySelection::FUSE_NO_LL;
    Backbone l_net, h_net;
    PointwiseFuser fuser;
    LinearLayer fc;

    // low/high are the half-resolution network inputs, NCHW.
    Tensor forward(Graph& g, const Tensor& low, const Tensor& high, bool training,
                   std::vector<Tensor>* stage_features = nullptr);

    DualNet clone() const;
    void copy_state_from(const DualNet& src);
};

ResNet build_baseline(const BackboneConfig& config, std::mt19937_64& rng);
DualNet build_fdinet(const BackboneConfig& config, AggregatorVariant variant,
                     FrequencySelection selection, std::mt19937_64& rng);

// Learnable tensors in deterministic construction order.
std::vector<Tensor> parameters(ResNet& net);
std::vector<Tensor> parameters(DualNet& net);
std::vector<BatchNorm2d*> batchnorms(ResNet& net);
std::vector<BatchNorm2d*> batchnorms(DualNet& net);

long long param_count(ResNet& net);
long long param_count(DualNet& net);
// Everything except the classifier.
long long backbone_param_count(ResNet& net);
long long backbone_param_count(DualNet& net);
// Dual branches + (parameter-free) aggregators + classifier over baseline backbone.
double dual_param_ratio(DualNet& dual, ResNet& baseline);

struct ForwardCost {
    long long flops = 0;
    long long activation_elems = 0;  // recorded per-sample activations
};

// Costs per sample for a [C,H,W] source image; the dual net internally runs
// at half resolution and the DWT + fuser costs are included.
ForwardCost forward_cost(const ResNet& net, int height, int width);
ForwardCost forward_cost(const DualNet& net, int height, int width);

template <typename Net>
long long flops_forward(const Net& net, int height, int width) {
    return forward_cost(net, height, width).flops;
}
template <typename Net>
long long flops_train(const Net& net, int height, int width, long long samples) {
    return 3 * flops_forward(net, height, width) * samples;
}
template <typename Net>
long long estimate_activation_memory(const Net& net, int height, int width, int batch) {
    return forward_cost(net, height, width).activation_elems *
           static_cast<long long>(sizeof(real)) * batch;
}

// Flat little-endian float32 parameter dump with a versioned header and a
// length-prefixed config blob.
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<Tensor>& params);
std::string load_checkpoint(const std::string& path, std::vector<Tensor>& params);

}  // namespace fdi
