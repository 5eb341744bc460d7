#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdi {

#ifdef FDI_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

struct TensorImpl {
    std::vector<int> shape;
    std::vector<real> data;
    std::vector<real> grad;  // allocated lazily, same size as data when present
    bool requires_grad = false;
};

// Value-semantic handle to a dense row-major array. Copies share storage;
// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false) {
        impl_ = std::make_shared<TensorImpl>();
        impl_->shape = std::move(shape);
        std::int64_t n = 1;
        for (int d : impl_->shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= d;
        }
        impl_->data.assign(static_cast<std::size_t>(n), real(0));
        impl_->requires_grad = requires_grad;
    }

    static Tensor from(std::vector<int> shape, std::vector<real> values,
                       bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (values.size() != t.numel())
            throw std::invalid_argument("Tensor::from: value count does not match shape");
        t.impl_->data = std::move(values);
        return t;
    }

    static Tensor full(std::vector<int> shape, real v) {
        Tensor t(std::move(shape));
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
        return t;
    }

    static Tensor scalar(real v) { return full({1}, v); }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<real> data() { return impl_->data; }
    std::span<const real> data() const { return impl_->data; }
    real& operator[](std::size_t i) { return impl_->data[i]; }
    real operator[](std::size_t i) const { return impl_->data[i]; }

    real item() const {
        if (numel() != 1) throw std::runtime_error("Tensor::item: not a scalar");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) {
        impl_->requires_grad = b;
        if (!b) impl_->grad.clear();
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<real> grad() {
        ensure_grad();
        return impl_->grad;
    }
    std::span<const real> grad_view() const { return impl_->grad; }
    void ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), real(0));
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
    }

    Tensor clone() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>(*impl_);
        return t;
    }

    bool all_finite() const {
        for (real v : impl_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }

    // Identity key for optimizer state maps.
    TensorImpl* key() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl> impl_;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Tape of executed operations. Each record is a closure that propagates the
// output gradient to the inputs; replaying in reverse yields reverse-mode AD.
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    void record(std::function<void()> backward_fn) {
        if (recording_) tape_.push_back(std::move(backward_fn));
    }

    std::size_t size() const { return tape_.size(); }

    void backward(Tensor loss) {
        if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
        loss.ensure_grad();
        loss.grad()[0] = real(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    void clear() { tape_.clear(); }

private:
    bool recording_;
    std::vector<std::function<void()>> tape_;
};

}  // namespace fdi
