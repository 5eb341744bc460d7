#pragma once

#include <random>

#include "fdi/ops.hpp"

namespace fdi {

// Single-level 2D Haar decomposition of a [C,H,W] image (or [N,C,H,W] batch)
// into four half-resolution components. Orthonormal, so the inverse is exact
// and energy is conserved.
struct WaveletQuad {
    Tensor ll, lh, hl, hh;
};

inline constexpr real kHaarL[2] = {real(0.7071067811865476), real(0.7071067811865476)};
inline constexpr real kHaarH[2] = {real(0.7071067811865476), real(-0.7071067811865476)};

WaveletQuad dwt2d(const Tensor& image);
Tensor idwt2d(const WaveletQuad& quad);

inline Tensor low_pass(const WaveletQuad& quad) { return quad.ll; }

enum class FrequencySelection {
    LL_ONLY,
    LH_ONLY,
    HL_ONLY,
    HH_ONLY,
    FUSE_ALL,
    FUSE_NO_LL_HH,
    FUSE_NO_LL,
};

// Which quad components feed the H-Net input, in ll,lh,hl,hh order.
std::vector<int> selected_components(FrequencySelection sel);
bool selection_is_fused(FrequencySelection sel);
const char* selection_name(FrequencySelection sel);
FrequencySelection selection_from_name(const std::string& name);

// Learnable 1x1 convolution merging the selected high-frequency components
// into image_channels output channels. Frozen after the first task.
struct PointwiseFuser {
    Tensor weight;  // [C, k*C, 1, 1]
    Tensor bias;    // [C]

    PointwiseFuser() = default;
    PointwiseFuser(int image_channels, FrequencySelection sel, std::mt19937_64& rng);

    bool frozen() const { return weight.defined() && !weight.requires_grad(); }
};

void freeze_fuser(PointwiseFuser& fuser);

// Builds the H-Net input from a quad batch. Single-component selections pass
// the component through untouched; fused selections concatenate the selected
// components channelwise and apply the fuser.
Tensor high_pass(Graph& g, const WaveletQuad& quad, PointwiseFuser& fuser,
                 FrequencySelection sel);

}  // namespace fdi
