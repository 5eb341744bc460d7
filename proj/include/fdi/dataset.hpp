#pragma once

#include <string>

#include "fdi/tensor.hpp"

namespace fdi {

struct Dataset {
    Tensor images;  // [N,C,H,W]
    std::vector<int> labels;

    int size() const { return images.defined() ? images.dim(0) : 0; }
};

struct Normalization {
    std::vector<real> mean{real(0.4914), real(0.4822), real(0.4465)};
    std::vector<real> std{real(0.2470), real(0.2435), real(0.2616)};

    bool operator==(const Normalization&) const = default;
};

struct SyntheticSpec {
    int classes = 4;
    int samples_per_class = 500;
    int image_size = 32;
    std::uint64_t seed = 0;

    bool operator==(const SyntheticSpec&) const = default;
};

// Canonical CIFAR-10 binary layout: 3073-byte records, one label byte then
// 3 x 32 x 32 pixel bytes. Pixels are scaled to [0,1].
Dataset read_cifar10_binary(const std::string& path);
void write_cifar10_binary(const std::string& path, const Dataset& data);

// Each class mixes a class-specific smooth gradient (low frequency), a
// class-specific stripe texture (high frequency), and noise.
Dataset synthesize_dataset(const SyntheticSpec& spec);

void normalize(Dataset& data, const Normalization& norm);

// Deterministic split into a train/test pair (test_fraction at the end of
// each class's sample list).
std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction,
                                             std::uint64_t seed);

}  // namespace fdi
