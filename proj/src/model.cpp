#include "fdi/model.hpp"

#include <cstring>
#include <fstream>

namespace fdi {

const char* scaling_name(ScalingMode m) {
    switch (m) {
        case ScalingMode::FULL: return "full";
        case ScalingMode::HALVE_BOTH: return "halve_both";
        case ScalingMode::HALVE_WIDTH_ONLY: return "halve_width_only";
        case ScalingMode::HALVE_DEPTH_ONLY: return "halve_depth_only";
    }
    return "?";
}

ScalingMode scaling_from_name(const std::string& name) {
    for (ScalingMode m : {ScalingMode::FULL, ScalingMode::HALVE_BOTH,
                          ScalingMode::HALVE_WIDTH_ONLY, ScalingMode::HALVE_DEPTH_ONLY})
        if (name == scaling_name(m)) return m;
    throw std::invalid_argument("unknown scaling mode: " + name);
}

const char* variant_name(AggregatorVariant v) {
    switch (v) {
        case AggregatorVariant::NO_INTEGRATION: return "no_integration";
        case AggregatorVariant::LOW_DOMINANCE: return "low_dominance";
        case AggregatorVariant::HIGH_DOMINANCE: return "high_dominance";
        case AggregatorVariant::MUTUAL: return "mutual";
    }
    return "?";
}

AggregatorVariant variant_from_name(const std::string& name) {
    for (AggregatorVariant v :
         {AggregatorVariant::NO_INTEGRATION, AggregatorVariant::LOW_DOMINANCE,
          AggregatorVariant::HIGH_DOMINANCE, AggregatorVariant::MUTUAL})
        if (name == variant_name(v)) return v;
    throw std::invalid_argument("unknown aggregator variant: " + name);
}

std::pair<Tensor, Tensor> aggregate(Graph& g, const Tensor& x_l, const Tensor& x_h,
                                    AggregatorVariant variant) {
    if (!x_l.same_shape(x_h))
        throw std::invalid_argument("aggregate: shape mismatch " + shape_str(x_l.shape()) +
                                    " vs " + shape_str(x_h.shape()));
    switch (variant) {
        case AggregatorVariant::NO_INTEGRATION: return {x_l, x_h};
        case AggregatorVariant::LOW_DOMINANCE: return {x_l, add(g, x_l, x_h)};
        case AggregatorVariant::HIGH_DOMINANCE: return {add(g, x_l, x_h), x_h};
        case AggregatorVariant::MUTUAL: {
            Tensor s = add(g, x_l, x_h);
            return {s, s};
        }
    }
    throw std::invalid_argument("aggregate: bad variant");
}

namespace {

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(shape), true);
    const real bound = real(1) / std::sqrt(static_cast<real>(fan_in));
    std::uniform_real_distribution<real> dist(-bound, bound);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace

Conv2dLayer::Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, bool bias,
                         std::mt19937_64& rng)
    : stride(stride_), pad(pad_) {
    w = fan_in_uniform({cout, cin, k, k}, cin * k * k, rng);
    if (bias) {
        b = Tensor({cout}, true);
    }
}

long long Conv2dLayer::params() const {
    return static_cast<long long>(w.numel() + (b.defined() ? b.numel() : 0));
}

long long Conv2dLayer::macs(int ho, int wo) const {
    return static_cast<long long>(w.numel()) * ho * wo;
}

LinearLayer::LinearLayer(int in, int out, std::mt19937_64& rng) {
    w = fan_in_uniform({out, in}, in, rng);
    b = Tensor({out}, true);
}

BasicBlock::BasicBlock(int cin, int cout, int stride, std::mt19937_64& rng)
    : conv1(cin, cout, 3, stride, 1, false, rng),
      conv2(cout, cout, 3, 1, 1, false, rng),
      bn1(cout),
      bn2(cout) {
    if (stride != 1 || cin != cout) {
        has_proj = true;
        proj = Conv2dLayer(cin, cout, 1, stride, 0, false, rng);
        proj_bn = BatchNorm2d(cout);
    }
}

Tensor BasicBlock::forward(Graph& g, const Tensor& x, bool training) {
    Tensor y = relu(g, bn1.forward(g, conv1.forward(g, x), training));
    y = bn2.forward(g, conv2.forward(g, y), training);
    Tensor shortcut = has_proj ? proj_bn.forward(g, proj.forward(g, x), training) : x;
    return relu(g, add(g, y, shortcut));
}

Backbone::Backbone(int in_channels, int width, const std::array<int, 4>& blocks,
                   std::mt19937_64& rng)
    : stem(in_channels, width, 3, 1, 1, false, rng), stem_bn(width) {
    int cin = width;
    for (int s = 0; s < 4; ++s) {
        const int cout = width << s;
        const int stride = s == 0 ? 1 : 2;
        std::vector<BasicBlock> stage;
        stage.emplace_back(cin, cout, stride, rng);
        for (int b = 1; b < blocks[static_cast<std::size_t>(s)]; ++b)
            stage.emplace_back(cout, cout, 1, rng);
        stages.push_back(std::move(stage));
        cin = cout;
    }
    out_channels = cin;
}

Tensor Backbone::forward_stem(Graph& g, const Tensor& x, bool training) {
    return relu(g, stem_bn.forward(g, stem.forward(g, x), training));
}

Tensor Backbone::forward_stage(Graph& g, int i, const Tensor& x, bool training) {
    Tensor y = x;
    for (BasicBlock& b : stages[static_cast<std::size_t>(i)]) y = b.forward(g, y, training);
    return y;
}

Tensor ResNet::forward(Graph& g, const Tensor& images, bool training) {
    Tensor x = body.forward_stem(g, images, training);
    for (int i = 0; i < 4; ++i) x = body.forward_stage(g, i, x, training);
    return fc.forward(g, global_avg_pool(g, x));
}

Tensor DualNet::forward(Graph& g, const Tensor& low, const Tensor& high, bool training,
                        std::vector<Tensor>* stage_features) {
    Tensor x_l = l_net.forward_stem(g, low, training);
    Tensor x_h = h_net.forward_stem(g, high, training);
    for (int i = 0; i < 4; ++i) {
        x_l = l_net.forward_stage(g, i, x_l, training);
        x_h = h_net.forward_stage(g, i, x_h, training);
        std::tie(x_l, x_h) = aggregate(g, x_l, x_h, variant);
        if (stage_features) {
            stage_features->push_back(x_l);
            stage_features->push_back(x_h);
        }
    }
    Tensor feats = concat_channels(g, {global_avg_pool(g, x_l), global_avg_pool(g, x_h)});
    return fc.forward(g, feats);
}

namespace {

BackboneConfig branch_config(const BackboneConfig& config) {
    if (config.scaling == ScalingMode::FULL)
        throw std::invalid_argument("build_fdinet: FULL scaling is for the baseline only");
    BackboneConfig b = config;
    if (config.scaling == ScalingMode::HALVE_BOTH ||
        config.scaling == ScalingMode::HALVE_WIDTH_ONLY)
        b.base_width = std::max(1, config.base_width / 2);
    if (config.scaling == ScalingMode::HALVE_BOTH ||
        config.scaling == ScalingMode::HALVE_DEPTH_ONLY)
        for (int& n : b.blocks_per_stage) n = std::max(1, n / 2);
    return b;
}

}  // namespace

ResNet build_baseline(const BackboneConfig& config, std::mt19937_64& rng) {
    if (config.num_classes < 2)
        throw std::invalid_argument("build_baseline: need at least 2 classes");
    ResNet net;
    net.config = config;
    net.body = Backbone(config.in_channels, config.base_width, config.blocks_per_stage, rng);
    net.fc = LinearLayer(net.body.out_channels, config.num_classes, rng);
    return net;
}

DualNet build_fdinet(const BackboneConfig& config, AggregatorVariant variant,
                     FrequencySelection selection, std::mt19937_64& rng) {
    const BackboneConfig bc = branch_config(config);
    DualNet net;
    net.config = config;
    net.variant = variant;
    net.selection = selection;
    net.fuser = PointwiseFuser(config.in_channels, selection, rng);
    net.l_net = Backbone(config.in_channels, bc.base_width, bc.blocks_per_stage, rng);
    net.h_net = Backbone(config.in_channels, bc.base_width, bc.blocks_per_stage, rng);
    net.fc = LinearLayer(2 * net.l_net.out_channels, config.num_classes, rng);
    return net;
}

namespace {

void collect(Backbone& b, std::vector<Tensor>& out) {
    out.push_back(b.stem.w);
    out.push_back(b.stem_bn.gamma);
    out.push_back(b.stem_bn.beta);
    for (auto& stage : b.stages)
        for (BasicBlock& blk : stage) {
            out.push_back(blk.conv1.w);
            out.push_back(blk.bn1.gamma);
            out.push_back(blk.bn1.beta);
            out.push_back(blk.conv2.w);
            out.push_back(blk.bn2.gamma);
            out.push_back(blk.bn2.beta);
            if (blk.has_proj) {
                out.push_back(blk.proj.w);
                out.push_back(blk.proj_bn.gamma);
                out.push_back(blk.proj_bn.beta);
            }
        }
}

void collect_bn(Backbone& b, std::vector<BatchNorm2d*>& out) {
    out.push_back(&b.stem_bn);
    for (auto& stage : b.stages)
        for (BasicBlock& blk : stage) {
            out.push_back(&blk.bn1);
            out.push_back(&blk.bn2);
            if (blk.has_proj) out.push_back(&blk.proj_bn);
        }
}

long long count(const std::vector<Tensor>& params) {
    long long n = 0;
    for (const Tensor& t : params) n += static_cast<long long>(t.numel());
    return n;
}

}  // namespace

std::vector<Tensor> parameters(ResNet& net) {
    std::vector<Tensor> out;
    collect(net.body, out);
    out.push_back(net.fc.w);
    out.push_back(net.fc.b);
    return out;
}

std::vector<Tensor> parameters(DualNet& net) {
    std::vector<Tensor> out;
    out.push_back(net.fuser.weight);
    out.push_back(net.fuser.bias);
    collect(net.l_net, out);
    collect(net.h_net, out);
    out.push_back(net.fc.w);
    out.push_back(net.fc.b);
    return out;
}

std::vector<BatchNorm2d*> batchnorms(ResNet& net) {
    std::vector<BatchNorm2d*> out;
    collect_bn(net.body, out);
    return out;
}

std::vector<BatchNorm2d*> batchnorms(DualNet& net) {
    std::vector<BatchNorm2d*> out;
    collect_bn(net.l_net, out);
    collect_bn(net.h_net, out);
    return out;
}

long long param_count(ResNet& net) { return count(parameters(net)); }
long long param_count(DualNet& net) { return count(parameters(net)); }

long long backbone_param_count(ResNet& net) { return param_count(net) - net.fc.params(); }
long long backbone_param_count(DualNet& net) {
    return param_count(net) - net.fc.params() -
           static_cast<long long>(net.fuser.weight.numel() + net.fuser.bias.numel());
}

double dual_param_ratio(DualNet& dual, ResNet& baseline) {
    const long long num = backbone_param_count(dual) + dual.fc.params();
    return static_cast<double>(num) / static_cast<double>(backbone_param_count(baseline));
}

namespace {

struct CostWalk {
    ForwardCost cost;

    void conv(const Conv2dLayer& c, int& h, int& w) {
        const int k = c.w.dim(2);
        h = (h + 2 * c.pad - k) / c.stride + 1;
        w = (w + 2 * c.pad - k) / c.stride + 1;
        const long long out_elems = static_cast<long long>(c.w.dim(0)) * h * w;
        cost.flops += 2 * c.macs(h, w) + (c.b.defined() ? out_elems : 0);
        cost.activation_elems += out_elems;
    }
    void elementwise(long long elems, int flops_per) {
        cost.flops += elems * flops_per;
        cost.activation_elems += elems;
    }
    void block(const BasicBlock& blk, int& h, int& w) {
        const long long cout = blk.conv1.w.dim(0);
        int sh = h, sw = w;
        conv(blk.conv1, h, w);
        const long long elems = cout * h * w;
        elementwise(elems, 4);  // bn1
        elementwise(elems, 1);  // relu
        conv(blk.conv2, h, w);
        elementwise(elems, 4);  // bn2
        if (blk.has_proj) {
            conv(blk.proj, sh, sw);
            elementwise(elems, 4);  // proj bn
        }
        elementwise(elems, 1);  // residual add
        elementwise(elems, 1);  // relu
    }
    void backbone(const Backbone& b, int& h, int& w) {
        conv(b.stem, h, w);
        const long long stem_elems = static_cast<long long>(b.stem.w.dim(0)) * h * w;
        elementwise(stem_elems, 4);
        elementwise(stem_elems, 1);
        for (const auto& stage : b.stages)
            for (const BasicBlock& blk : stage) block(blk, h, w);
    }
    void pool_and_fc(int channels, const LinearLayer& fc, long long plane) {
        elementwise(channels, 1);  // pooled vector; ~1 flop per input elem folded below
        cost.flops += channels * plane;
        cost.flops += 2 * static_cast<long long>(fc.w.numel()) + fc.b.dim(0);
        cost.activation_elems += fc.w.dim(0);
    }
};

}  // namespace

ForwardCost forward_cost(const ResNet& net, int height, int width) {
    CostWalk walk;
    int h = height, w = width;
    walk.backbone(net.body, h, w);
    walk.pool_and_fc(net.body.out_channels, net.fc, static_cast<long long>(h) * w);
    return walk.cost;
}

ForwardCost forward_cost(const DualNet& net, int height, int width) {
    CostWalk walk;
    const int c = net.config.in_channels;
    // DWT: each half-resolution coefficient costs 3 adds + 1 scale, 4 components.
    walk.cost.flops += static_cast<long long>(c) * height * width * 4;
    int h = height / 2, w = width / 2;
    if (selection_is_fused(net.selection)) {
        const long long out_elems = static_cast<long long>(c) * h * w;
        walk.cost.flops += 2 * static_cast<long long>(net.fuser.weight.numel()) * h * w +
                           out_elems;
        walk.cost.activation_elems += out_elems;
    }
    int hl = h, wl = w, hh = h, wh = w;
    walk.backbone(net.l_net, hl, wl);
    walk.backbone(net.h_net, hh, wh);
    // Per-stage aggregator additions for the variants that add.
    if (net.variant != AggregatorVariant::NO_INTEGRATION) {
        int ah = h, aw = w;
        for (int s = 0; s < 4; ++s) {
            if (s > 0) {
                ah /= 2;
                aw /= 2;
            }
            const long long elems =
                static_cast<long long>(net.l_net.stages[static_cast<std::size_t>(s)]
                                           .back()
                                           .conv2.w.dim(0)) *
                ah * aw;
            walk.elementwise(elems, 1);
        }
    }
    walk.pool_and_fc(2 * net.l_net.out_channels, net.fc,
                     static_cast<long long>(hl) * wl);
    return walk.cost;
}

namespace {

Backbone clone_backbone(const Backbone& src) {
    Backbone b;
    b.stem = src.stem;
    b.stem.w = src.stem.w.clone();
    b.stem_bn = src.stem_bn;
    b.stem_bn.gamma = src.stem_bn.gamma.clone();
    b.stem_bn.beta = src.stem_bn.beta.clone();
    b.out_channels = src.out_channels;
    for (const auto& stage : src.stages) {
        std::vector<BasicBlock> s;
        for (const BasicBlock& blk : stage) {
            BasicBlock c = blk;
            c.conv1.w = blk.conv1.w.clone();
            c.conv2.w = blk.conv2.w.clone();
            c.bn1.gamma = blk.bn1.gamma.clone();
            c.bn1.beta = blk.bn1.beta.clone();
            c.bn2.gamma = blk.bn2.gamma.clone();
            c.bn2.beta = blk.bn2.beta.clone();
            if (blk.has_proj) {
                c.proj.w = blk.proj.w.clone();
                c.proj_bn.gamma = blk.proj_bn.gamma.clone();
                c.proj_bn.beta = blk.proj_bn.beta.clone();
            }
            s.push_back(std::move(c));
        }
        b.stages.push_back(std::move(s));
    }
    return b;
}

}  // namespace

DualNet DualNet::clone() const {
    DualNet c;
    c.config = config;
    c.variant = variant;
    c.selection = selection;
    c.fuser.weight = fuser.weight.clone();
    c.fuser.bias = fuser.bias.clone();
    c.l_net = clone_backbone(l_net);
    c.h_net = clone_backbone(h_net);
    c.fc.w = fc.w.clone();
    c.fc.b = fc.b.clone();
    return c;
}

void DualNet::copy_state_from(const DualNet& src) {
    DualNet& s = const_cast<DualNet&>(src);
    auto dst_p = parameters(*this);
    auto src_p = parameters(s);
    if (dst_p.size() != src_p.size())
        throw std::invalid_argument("copy_state_from: structural mismatch");
    for (std::size_t i = 0; i < dst_p.size(); ++i) {
        if (!dst_p[i].same_shape(src_p[i]))
            throw std::invalid_argument("copy_state_from: parameter shape mismatch");
        std::copy_n(src_p[i].data().data(), src_p[i].numel(), dst_p[i].data().data());
    }
    auto dst_bn = batchnorms(*this);
    auto src_bn = batchnorms(s);
    for (std::size_t i = 0; i < dst_bn.size(); ++i) {
        dst_bn[i]->running_mean = src_bn[i]->running_mean;
        dst_bn[i]->running_var = src_bn[i]->running_var;
    }
}

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<Tensor>& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write("FDIC", 4);
    const std::uint32_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint32_t clen = static_cast<std::uint32_t>(config_text.size());
    f.write(reinterpret_cast<const char*>(&clen), 4);
    f.write(config_text.data(), clen);
    std::uint64_t n = 0;
    for (const Tensor& t : params) n += t.numel();
    f.write(reinterpret_cast<const char*>(&n), 8);
    for (const Tensor& t : params)
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const float v = static_cast<float>(t[i]);
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
}

std::string load_checkpoint(const std::string& path, std::vector<Tensor>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "FDIC", 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint32_t version = 0, clen = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    f.read(reinterpret_cast<char*>(&clen), 4);
    std::string config_text(clen, '\0');
    f.read(config_text.data(), clen);
    std::uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    std::uint64_t expect = 0;
    for (const Tensor& t : params) expect += t.numel();
    if (n != expect)
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    for (Tensor& t : params)
        for (std::size_t i = 0; i < t.numel(); ++i) {
            float v = 0;
            f.read(reinterpret_cast<char*>(&v), 4);
            t[i] = static_cast<real>(v);
        }
    if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return config_text;
}

}  // namespace fdi
