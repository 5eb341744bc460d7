#include "fdi/dataset.hpp"

#include "fdi/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace fdi {

namespace {
constexpr int kCifarDim = 32;
constexpr int kCifarRecord = 1 + 3 * kCifarDim * kCifarDim;
constexpr real kPi = real(3.14159265358979323846);
}  // namespace

Dataset read_cifar10_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("read_cifar10_binary: cannot open " + path);
    const std::streamoff len = f.tellg();
    if (len % kCifarRecord != 0)
        throw DataError("read_cifar10_binary: file length " + std::to_string(len) +
                                 " is not a multiple of " + std::to_string(kCifarRecord) +
                                 " (truncated at offset " +
                                 std::to_string(len - len % kCifarRecord) + ")");
    const int n = static_cast<int>(len / kCifarRecord);
    f.seekg(0);
    Dataset data;
    data.images = Tensor({n, 3, kCifarDim, kCifarDim});
    std::vector<unsigned char> record(kCifarRecord);
    for (int i = 0; i < n; ++i) {
        f.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
        if (!f)
            throw DataError("read_cifar10_binary: truncated record at offset " +
                                     std::to_string(static_cast<long long>(i) * kCifarRecord));
        if (record[0] > 9)
            throw DataError("read_cifar10_binary: label byte " +
                                     std::to_string(record[0]) + " > 9 in record " +
                                     std::to_string(i));
        data.labels.push_back(record[0]);
        real* dst = data.images.data().data() +
                    static_cast<std::size_t>(i) * 3 * kCifarDim * kCifarDim;
        for (int j = 0; j < 3 * kCifarDim * kCifarDim; ++j)
            dst[j] = static_cast<real>(record[1 + j]) / real(255);
    }
    return data;
}

void write_cifar10_binary(const std::string& path, const Dataset& data) {
    if (data.images.dim(1) != 3 || data.images.dim(2) != kCifarDim ||
        data.images.dim(3) != kCifarDim)
        throw std::invalid_argument("write_cifar10_binary: expected [N,3,32,32] images");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_cifar10_binary: cannot open " + path);
    for (int i = 0; i < data.size(); ++i) {
        const unsigned char label = static_cast<unsigned char>(data.labels[i]);
        f.write(reinterpret_cast<const char*>(&label), 1);
        const real* src = data.images.data().data() +
                          static_cast<std::size_t>(i) * 3 * kCifarDim * kCifarDim;
        for (int j = 0; j < 3 * kCifarDim * kCifarDim; ++j) {
            const real clamped = std::min(real(1), std::max(real(0), src[j]));
            const unsigned char b =
                static_cast<unsigned char>(std::lround(clamped * real(255)));
            f.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
}

Dataset synthesize_dataset(const SyntheticSpec& spec) {
    if (spec.classes < 2) throw std::invalid_argument("synthesize_dataset: need >= 2 classes");
    if (spec.image_size % 2 != 0)
        throw std::invalid_argument("synthesize_dataset: image_size must be even");
    const int s = spec.image_size;
    const int n = spec.classes * spec.samples_per_class;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<real> noise(real(0), real(0.05));
    std::uniform_real_distribution<real> jitter(real(-0.5), real(0.5));

    Dataset data;
    data.images = Tensor({n, 3, s, s});
    int idx = 0;
    for (int c = 0; c < spec.classes; ++c) {
        const real theta = kPi * static_cast<real>(c) / static_cast<real>(spec.classes);
        const real psi = theta + kPi / 2;
        const real freq = real(3) + static_cast<real>(c);
        const real phase0 = real(0.7) * static_cast<real>(c);
        for (int i = 0; i < spec.samples_per_class; ++i, ++idx) {
            const real phase = phase0 + jitter(rng);
            real* img = data.images.data().data() + static_cast<std::size_t>(idx) * 3 * s * s;
            for (int ch = 0; ch < 3; ++ch) {
                const real ch_gain = real(1) - real(0.15) * static_cast<real>(ch);
                for (int y = 0; y < s; ++y)
                    for (int x = 0; x < s; ++x) {
                        const real u = static_cast<real>(x) / static_cast<real>(s - 1) - real(0.5);
                        const real v = static_cast<real>(y) / static_cast<real>(s - 1) - real(0.5);
                        const real grad =
                            real(0.5) + real(0.35) * (std::cos(theta) * u + std::sin(theta) * v);
                        const real stripe =
                            real(0.15) *
                            std::sin(real(2) * kPi * freq *
                                         (std::cos(psi) * u + std::sin(psi) * v) +
                                     phase);
                        real px = ch_gain * grad + stripe + noise(rng);
                        px = std::min(real(1), std::max(real(0), px));
                        img[(static_cast<std::size_t>(ch) * s + y) * s + x] = px;
                    }
            }
            data.labels.push_back(c);
        }
    }
    return data;
}

void normalize(Dataset& data, const Normalization& norm) {
    const int c = data.images.dim(1);
    if (static_cast<int>(norm.mean.size()) != c || static_cast<int>(norm.std.size()) != c)
        throw std::invalid_argument("normalize: per-channel stats do not match channel count");
    const std::size_t plane =
        static_cast<std::size_t>(data.images.dim(2)) * data.images.dim(3);
    for (int i = 0; i < data.size(); ++i)
        for (int ch = 0; ch < c; ++ch) {
            real* p = data.images.data().data() +
                      (static_cast<std::size_t>(i) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j)
                p[j] = (p[j] - norm.mean[static_cast<std::size_t>(ch)]) /
                       norm.std[static_cast<std::size_t>(ch)];
        }
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction,
                                             std::uint64_t seed) {
    const int n = data.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_test = static_cast<int>(std::lround(test_fraction * n));
    const std::size_t sample =
        static_cast<std::size_t>(data.images.dim(1)) * data.images.dim(2) * data.images.dim(3);
    auto gather = [&](int begin, int end) {
        Dataset out;
        std::vector<int> shape = data.images.shape();
        shape[0] = end - begin;
        out.images = Tensor(shape);
        for (int i = begin; i < end; ++i) {
            const int src = order[static_cast<std::size_t>(i)];
            std::copy_n(data.images.data().data() + static_cast<std::size_t>(src) * sample,
                        sample,
                        out.images.data().data() +
                            static_cast<std::size_t>(i - begin) * sample);
            out.labels.push_back(data.labels[static_cast<std::size_t>(src)]);
        }
        return out;
    };
    return {gather(n_test, n), gather(0, n_test)};
}

}  // namespace fdi
