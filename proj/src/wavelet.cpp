#include "fdi/wavelet.hpp"

#include <algorithm>

namespace fdi {

namespace {

void check_even_image(const Tensor& image) {
    if (image.rank() != 3 && image.rank() != 4)
        throw std::invalid_argument("dwt2d: expected [C,H,W] or [N,C,H,W], got " +
                                    shape_str(image.shape()));
    const int h = image.dim(image.rank() - 2);
    const int w = image.dim(image.rank() - 1);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("dwt2d: H and W must be even, got " +
                                    shape_str(image.shape()));
}

std::vector<int> half_shape(const Tensor& image) {
    std::vector<int> s = image.shape();
    s[s.size() - 2] /= 2;
    s[s.size() - 1] /= 2;
    return s;
}

// Recorded element copy into a new shape with the same element count.
Tensor reshape(Graph& g, const Tensor& x, std::vector<int> shape) {
    Tensor out(std::move(shape), g.recording() && x.requires_grad());
    if (out.numel() != x.numel()) throw std::invalid_argument("reshape: element count differs");
    std::copy_n(x.data().data(), x.numel(), out.data().data());
    if (out.requires_grad()) {
        Tensor x_t = x, out_t = out;
        g.record([x_t, out_t]() mutable {
            if (!out_t.has_grad() || !x_t.requires_grad()) return;
            auto go = out_t.grad_view();
            auto gi = x_t.grad();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
        });
    }
    return out;
}

}  // namespace

WaveletQuad dwt2d(const Tensor& image) {
    check_even_image(image);
    const int h = image.dim(image.rank() - 2);
    const int w = image.dim(image.rank() - 1);
    const int planes = static_cast<int>(image.numel()) / (h * w);
    const int hh2 = h / 2, wh2 = w / 2;

    WaveletQuad q{Tensor(half_shape(image)), Tensor(half_shape(image)),
                  Tensor(half_shape(image)), Tensor(half_shape(image))};
    const real* src = image.data().data();
    for (int p = 0; p < planes; ++p) {
        const real* in = src + static_cast<std::size_t>(p) * h * w;
        const std::size_t off = static_cast<std::size_t>(p) * hh2 * wh2;
        for (int y = 0; y < hh2; ++y)
            for (int x = 0; x < wh2; ++x) {
                const real a = in[(2 * y) * w + 2 * x];
                const real b = in[(2 * y) * w + 2 * x + 1];
                const real c = in[(2 * y + 1) * w + 2 * x];
                const real d = in[(2 * y + 1) * w + 2 * x + 1];
                const std::size_t i = off + static_cast<std::size_t>(y) * wh2 + x;
                q.ll[i] = (a + b + c + d) / 2;
                q.lh[i] = (a - b + c - d) / 2;
                q.hl[i] = (a + b - c - d) / 2;
                q.hh[i] = (a - b - c + d) / 2;
            }
    }
    return q;
}

Tensor idwt2d(const WaveletQuad& quad) {
    if (!quad.ll.same_shape(quad.lh) || !quad.ll.same_shape(quad.hl) ||
        !quad.ll.same_shape(quad.hh))
        throw std::invalid_argument("idwt2d: component shapes differ");
    std::vector<int> s = quad.ll.shape();
    const int hh2 = s[s.size() - 2], wh2 = s[s.size() - 1];
    s[s.size() - 2] *= 2;
    s[s.size() - 1] *= 2;
    Tensor out(s);
    const int planes = static_cast<int>(quad.ll.numel()) / (hh2 * wh2);
    const int w = wh2 * 2;
    for (int p = 0; p < planes; ++p) {
        real* dst = out.data().data() + static_cast<std::size_t>(p) * 4 * hh2 * wh2;
        const std::size_t off = static_cast<std::size_t>(p) * hh2 * wh2;
        for (int y = 0; y < hh2; ++y)
            for (int x = 0; x < wh2; ++x) {
                const std::size_t i = off + static_cast<std::size_t>(y) * wh2 + x;
                const real ll = quad.ll[i], lh = quad.lh[i], hl = quad.hl[i], hh = quad.hh[i];
                dst[(2 * y) * w + 2 * x] = (ll + lh + hl + hh) / 2;
                dst[(2 * y) * w + 2 * x + 1] = (ll - lh + hl - hh) / 2;
                dst[(2 * y + 1) * w + 2 * x] = (ll + lh - hl - hh) / 2;
                dst[(2 * y + 1) * w + 2 * x + 1] = (ll - lh - hl + hh) / 2;
            }
    }
    return out;
}

std::vector<int> selected_components(FrequencySelection sel) {
    switch (sel) {
        case FrequencySelection::LL_ONLY: return {0};
        case FrequencySelection::LH_ONLY: return {1};
        case FrequencySelection::HL_ONLY: return {2};
        case FrequencySelection::HH_ONLY: return {3};
        case FrequencySelection::FUSE_ALL: return {0, 1, 2, 3};
        case FrequencySelection::FUSE_NO_LL_HH: return {1, 2};
        case FrequencySelection::FUSE_NO_LL: return {1, 2, 3};
    }
    throw std::invalid_argument("selected_components: bad selection");
}

bool selection_is_fused(FrequencySelection sel) {
    return sel == FrequencySelection::FUSE_ALL || sel == FrequencySelection::FUSE_NO_LL_HH ||
           sel == FrequencySelection::FUSE_NO_LL;
}

const char* selection_name(FrequencySelection sel) {
    switch (sel) {
        case FrequencySelection::LL_ONLY: return "ll_only";
        case FrequencySelection::LH_ONLY: return "lh_only";
        case FrequencySelection::HL_ONLY: return "hl_only";
        case FrequencySelection::HH_ONLY: return "hh_only";
        case FrequencySelection::FUSE_ALL: return "fuse_all";
        case FrequencySelection::FUSE_NO_LL_HH: return "fuse_no_ll_hh";
        case FrequencySelection::FUSE_NO_LL: return "fuse_no_ll";
    }
    return "?";
}

FrequencySelection selection_from_name(const std::string& name) {
    for (FrequencySelection s :
         {FrequencySelection::LL_ONLY, FrequencySelection::LH_ONLY, FrequencySelection::HL_ONLY,
          FrequencySelection::HH_ONLY, FrequencySelection::FUSE_ALL,
          FrequencySelection::FUSE_NO_LL_HH, FrequencySelection::FUSE_NO_LL})
        if (name == selection_name(s)) return s;
    throw std::invalid_argument("unknown frequency selection: " + name);
}

PointwiseFuser::PointwiseFuser(int image_channels, FrequencySelection sel,
                               std::mt19937_64& rng) {
    const int k = static_cast<int>(selected_components(sel).size());
    const int fan_in = k * image_channels;
    weight = Tensor({image_channels, fan_in, 1, 1}, true);
    bias = Tensor({image_channels}, true);
    const real bound = real(1) / std::sqrt(static_cast<real>(fan_in));
    std::uniform_real_distribution<real> dist(-bound, bound);
    for (std::size_t i = 0; i < weight.numel(); ++i) weight[i] = dist(rng);
}

void freeze_fuser(PointwiseFuser& fuser) {
    fuser.weight.set_requires_grad(false);
    fuser.bias.set_requires_grad(false);
}

Tensor high_pass(Graph& g, const WaveletQuad& quad, PointwiseFuser& fuser,
                 FrequencySelection sel) {
    const Tensor* comps[4] = {&quad.ll, &quad.lh, &quad.hl, &quad.hh};
    const std::vector<int> idx = selected_components(sel);
    if (!selection_is_fused(sel)) return *comps[idx[0]];

    const bool batched = quad.ll.rank() == 4;
    std::vector<Tensor> parts;
    for (int i : idx) {
        Tensor t = *comps[i];
        if (!batched) {
            std::vector<int> s = t.shape();
            s.insert(s.begin(), 1);
            t = reshape(g, t, std::move(s));
        }
        parts.push_back(t);
    }
    Tensor stacked = concat_channels(g, parts);
    if (stacked.dim(1) != fuser.weight.dim(1))
        throw std::invalid_argument(
            "high_pass: fuser expects " + std::to_string(fuser.weight.dim(1)) +
            " input channels, selection provides " + std::to_string(stacked.dim(1)));
    Tensor fused = conv2d(g, stacked, fuser.weight, fuser.bias, 1, 0);
    if (!batched) {
        std::vector<int> s(fused.shape().begin() + 1, fused.shape().end());
        fused = reshape(g, fused, std::move(s));
    }
    return fused;
}

}  // namespace fdi
