#include "fdi/ops.hpp"

#include <algorithm>
#include <cmath>

namespace fdi {

namespace {

bool track(const Graph& g, std::initializer_list<const Tensor*> inputs) {
    if (!g.recording()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

void check_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw std::invalid_argument(std::string(what) + ": expected rank " +
                                    std::to_string(rank) + ", got " + shape_str(t.shape()));
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    check_rank(input, 4, "conv2d input");
    check_rank(weight, 4, "conv2d weight");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(cin) +
                                    " do not match weight " + shape_str(weight.shape()));
    if (h + 2 * padding < kh || w + 2 * padding < kw)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
        throw std::invalid_argument("conv2d: bias shape mismatch");
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;

    Tensor out({n, cout, ho, wo}, track(g, {&input, &weight, &bias}));
    const real* in = input.data().data();
    const real* wt = weight.data().data();
    real* o = out.data().data();
    const int patch = cin * kh * kw;
    std::vector<real> col(static_cast<std::size_t>(patch));

    // Patch gather keeps the (ci,kh,kw) summation order of the naive loop.
    for (int b = 0; b < n; ++b) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                real* c = col.data();
                for (int ci = 0; ci < cin; ++ci) {
                    const real* plane = in + ((static_cast<std::size_t>(b) * cin + ci) * h) * w;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - padding;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - padding;
                            *c++ = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                       ? plane[iy * w + ix]
                                       : real(0);
                        }
                    }
                }
                for (int co = 0; co < cout; ++co) {
                    const real* wrow = wt + static_cast<std::size_t>(co) * patch;
                    real acc = bias.defined() ? bias[static_cast<std::size_t>(co)] : real(0);
                    for (int k = 0; k < patch; ++k) acc += wrow[k] * col[k];
                    o[((static_cast<std::size_t>(b) * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }

    if (out.requires_grad()) {
        Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
        g.record([in_t, w_t, b_t, out_t, stride, padding]() mutable {
            if (!out_t.has_grad()) return;
            const int n = in_t.dim(0), cin = in_t.dim(1), h = in_t.dim(2), w = in_t.dim(3);
            const int cout = w_t.dim(0), kh = w_t.dim(2), kw = w_t.dim(3);
            const int ho = out_t.dim(2), wo = out_t.dim(3);
            const real* go = out_t.grad_view().data();
            const real* in = in_t.data().data();
            const real* wt = w_t.data().data();
            const bool need_in = in_t.requires_grad();
            const bool need_w = w_t.requires_grad();
            const bool need_b = b_t.defined() && b_t.requires_grad();
            real* gin = need_in ? in_t.grad().data() : nullptr;
            real* gw = need_w ? w_t.grad().data() : nullptr;
            real* gb = need_b ? b_t.grad().data() : nullptr;
            const int patch = cin * kh * kw;
            for (int b = 0; b < n; ++b) {
                for (int oy = 0; oy < ho; ++oy) {
                    for (int ox = 0; ox < wo; ++ox) {
                        for (int co = 0; co < cout; ++co) {
                            const real gv =
                                go[((static_cast<std::size_t>(b) * cout + co) * ho + oy) * wo + ox];
                            if (gv == real(0)) continue;
                            if (gb) gb[co] += gv;
                            const real* wrow = wt + static_cast<std::size_t>(co) * patch;
                            real* gwrow = need_w ? gw + static_cast<std::size_t>(co) * patch
                                                 : nullptr;
                            int k = 0;
                            for (int ci = 0; ci < cin; ++ci) {
                                const std::size_t base =
                                    (static_cast<std::size_t>(b) * cin + ci) * h;
                                for (int ky = 0; ky < kh; ++ky) {
                                    const int iy = oy * stride + ky - padding;
                                    const bool yok = iy >= 0 && iy < h;
                                    for (int kx = 0; kx < kw; ++kx, ++k) {
                                        const int ix = ox * stride + kx - padding;
                                        if (!yok || ix < 0 || ix >= w) continue;
                                        const std::size_t idx = (base + iy) * w + ix;
                                        if (gin) gin[idx] += gv * wrow[k];
                                        if (gwrow) gwrow[k] += gv * in[idx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor linear(Graph& g, const Tensor& input, const Tensor& weight, const Tensor& bias) {
    check_rank(input, 2, "linear input");
    check_rank(weight, 2, "linear weight");
    const int n = input.dim(0), d = input.dim(1), k = weight.dim(0);
    if (weight.dim(1) != d)
        throw std::invalid_argument("linear: inner dimensions disagree: " +
                                    shape_str(input.shape()) + " vs " + shape_str(weight.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != k))
        throw std::invalid_argument("linear: bias shape mismatch");

    Tensor out({n, k}, track(g, {&input, &weight, &bias}));
    for (int i = 0; i < n; ++i) {
        const real* row = input.data().data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < k; ++j) {
            const real* wrow = weight.data().data() + static_cast<std::size_t>(j) * d;
            real acc = bias.defined() ? bias[static_cast<std::size_t>(j)] : real(0);
            for (int t = 0; t < d; ++t) acc += row[t] * wrow[t];
            out[static_cast<std::size_t>(i) * k + j] = acc;
        }
    }

    if (out.requires_grad()) {
        Tensor in_t = input, w_t = weight, b_t = bias, out_t = out;
        g.record([in_t, w_t, b_t, out_t]() mutable {
            if (!out_t.has_grad()) return;
            const int n = in_t.dim(0), d = in_t.dim(1), k = w_t.dim(0);
            const real* go = out_t.grad_view().data();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < k; ++j) {
                    const real gv = go[static_cast<std::size_t>(i) * k + j];
                    if (gv == real(0)) continue;
                    if (b_t.defined() && b_t.requires_grad()) b_t.grad()[j] += gv;
                    if (in_t.requires_grad()) {
                        real* gin = in_t.grad().data() + static_cast<std::size_t>(i) * d;
                        const real* wrow = w_t.data().data() + static_cast<std::size_t>(j) * d;
                        for (int t = 0; t < d; ++t) gin[t] += gv * wrow[t];
                    }
                    if (w_t.requires_grad()) {
                        real* gw = w_t.grad().data() + static_cast<std::size_t>(j) * d;
                        const real* row = in_t.data().data() + static_cast<std::size_t>(i) * d;
                        for (int t = 0; t < d; ++t) gw[t] += gv * row[t];
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(Graph& g, const Tensor& x) {
    Tensor out(x.shape(), track(g, {&x}));
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > real(0) ? x[i] : real(0);
    if (out.requires_grad()) {
        Tensor x_t = x, out_t = out;
        g.record([x_t, out_t]() mutable {
            if (!out_t.has_grad() || !x_t.requires_grad()) return;
            auto gin = x_t.grad();
            auto go = out_t.grad_view();
            for (std::size_t i = 0; i < gin.size(); ++i)
                if (x_t[i] > real(0)) gin[i] += go[i];
        });
    }
    return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out(a.shape(), track(g, {&a, &b}));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    if (out.requires_grad()) {
        Tensor a_t = a, b_t = b, out_t = out;
        g.record([a_t, b_t, out_t]() mutable {
            if (!out_t.has_grad()) return;
            auto go = out_t.grad_view();
            if (a_t.requires_grad()) {
                auto ga = a_t.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b_t.requires_grad()) {
                auto gb = b_t.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

Tensor scale(Graph& g, const Tensor& x, real c) {
    Tensor out(x.shape(), track(g, {&x}));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * c;
    if (out.requires_grad()) {
        Tensor x_t = x, out_t = out;
        g.record([x_t, out_t, c]() mutable {
            if (!out_t.has_grad() || !x_t.requires_grad()) return;
            auto gin = x_t.grad();
            auto go = out_t.grad_view();
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += go[i] * c;
        });
    }
    return out;
}

Tensor concat_channels(Graph& g, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const int rank = static_cast<int>(parts[0].shape().size());
    if (rank != 2 && rank != 4)
        throw std::invalid_argument("concat_channels: expected rank 2 or 4, got " +
                                    shape_str(parts[0].shape()));
    const int n = parts[0].dim(0);
    const int h = rank == 4 ? parts[0].dim(2) : 1;
    const int w = rank == 4 ? parts[0].dim(3) : 1;
    int ctotal = 0;
    bool needs = false;
    for (const Tensor& p : parts) {
        check_rank(p, rank, "concat_channels");
        if (p.dim(0) != n || (rank == 4 && (p.dim(2) != h || p.dim(3) != w)))
            throw std::invalid_argument("concat_channels: non-channel dims differ: " +
                                        shape_str(parts[0].shape()) + " vs " +
                                        shape_str(p.shape()));
        ctotal += p.dim(1);
        needs = needs || (g.recording() && p.requires_grad());
    }
    Tensor out(rank == 4 ? std::vector<int>{n, ctotal, h, w}
                         : std::vector<int>{n, ctotal},
               needs);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < n; ++b) {
        int coff = 0;
        for (const Tensor& p : parts) {
            const int c = p.dim(1);
            std::copy_n(p.data().data() + static_cast<std::size_t>(b) * c * plane, c * plane,
                        out.data().data() +
                            (static_cast<std::size_t>(b) * ctotal + coff) * plane);
            coff += c;
        }
    }
    if (out.requires_grad()) {
        std::vector<Tensor> parts_t = parts;
        Tensor out_t = out;
        g.record([parts_t, out_t]() mutable {
            if (!out_t.has_grad()) return;
            const int n = out_t.dim(0), ctotal = out_t.dim(1);
            const std::size_t plane =
                out_t.shape().size() == 4
                    ? static_cast<std::size_t>(out_t.dim(2)) * out_t.dim(3)
                    : 1;
            auto go = out_t.grad_view();
            for (int b = 0; b < n; ++b) {
                int coff = 0;
                for (Tensor& p : parts_t) {
                    const int c = p.dim(1);
                    if (p.requires_grad()) {
                        real* gp = p.grad().data() + static_cast<std::size_t>(b) * c * plane;
                        const real* src =
                            go.data() + (static_cast<std::size_t>(b) * ctotal + coff) * plane;
                        for (std::size_t i = 0; i < c * plane; ++i) gp[i] += src[i];
                    }
                    coff += c;
                }
            }
        });
    }
    return out;
}

Tensor global_avg_pool(Graph& g, const Tensor& x) {
    check_rank(x, 4, "global_avg_pool");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor out({n, c}, track(g, {&x}));
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const real* src = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            real acc = 0;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            out[static_cast<std::size_t>(b) * c + ch] = acc / static_cast<real>(plane);
        }
    if (out.requires_grad()) {
        Tensor x_t = x, out_t = out;
        g.record([x_t, out_t]() mutable {
            if (!out_t.has_grad() || !x_t.requires_grad()) return;
            const int n = x_t.dim(0), c = x_t.dim(1);
            const std::size_t plane = static_cast<std::size_t>(x_t.dim(2)) * x_t.dim(3);
            auto go = out_t.grad_view();
            real* gin = x_t.grad().data();
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const real gv =
                        go[static_cast<std::size_t>(b) * c + ch] / static_cast<real>(plane);
                    real* dst = gin + (static_cast<std::size_t>(b) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) dst[i] += gv;
                }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels,
                             std::span<const std::uint8_t> allowed) {
    check_rank(logits, 2, "softmax_cross_entropy");
    const int n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("softmax_cross_entropy: label count != batch size");
    if (!allowed.empty() && static_cast<int>(allowed.size()) != k)
        throw std::invalid_argument("softmax_cross_entropy: mask length != class count");
    auto is_allowed = [&](int c) { return allowed.empty() || allowed[c] != 0; };

    // Stash the probabilities for the backward rule.
    auto probs = std::make_shared<std::vector<real>>(static_cast<std::size_t>(n) * k, real(0));
    real total = 0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= k)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                        " out of range for " + std::to_string(k) + " classes");
        if (!is_allowed(y))
            throw std::runtime_error("softmax_cross_entropy: true label is masked out");
        const real* row = logits.data().data() + static_cast<std::size_t>(i) * k;
        real mx = -std::numeric_limits<real>::infinity();
        for (int c = 0; c < k; ++c)
            if (is_allowed(c)) mx = std::max(mx, row[c]);
        real z = 0;
        for (int c = 0; c < k; ++c)
            if (is_allowed(c)) z += std::exp(row[c] - mx);
        real* prow = probs->data() + static_cast<std::size_t>(i) * k;
        for (int c = 0; c < k; ++c)
            if (is_allowed(c)) prow[c] = std::exp(row[c] - mx) / z;
        total += -(row[y] - mx - std::log(z));
    }
    Tensor out({1}, track(g, {&logits}));
    out[0] = total / static_cast<real>(n);

    if (out.requires_grad()) {
        Tensor l_t = logits, out_t = out;
        std::vector<int> labels_v(labels.begin(), labels.end());
        g.record([l_t, out_t, probs, labels_v]() mutable {
            if (!out_t.has_grad() || !l_t.requires_grad()) return;
            const int n = l_t.dim(0), k = l_t.dim(1);
            const real gv = out_t.grad_view()[0] / static_cast<real>(n);
            real* gin = l_t.grad().data();
            for (int i = 0; i < n; ++i) {
                const real* prow = probs->data() + static_cast<std::size_t>(i) * k;
                real* grow = gin + static_cast<std::size_t>(i) * k;
                for (int c = 0; c < k; ++c)
                    grow[c] += gv * (prow[c] - (c == labels_v[i] ? real(1) : real(0)));
            }
        });
    }
    return out;
}

Tensor mse(Graph& g, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out({1}, track(g, {&a, &b}));
    real acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const real d = a[i] - b[i];
        acc += d * d;
    }
    out[0] = acc / static_cast<real>(a.numel());
    if (out.requires_grad()) {
        Tensor a_t = a, b_t = b, out_t = out;
        g.record([a_t, b_t, out_t]() mutable {
            if (!out_t.has_grad()) return;
            const real gv = out_t.grad_view()[0] * real(2) / static_cast<real>(a_t.numel());
            for (std::size_t i = 0; i < a_t.numel(); ++i) {
                const real d = gv * (a_t[i] - b_t[i]);
                if (a_t.requires_grad()) a_t.grad()[i] += d;
                if (b_t.requires_grad()) b_t.grad()[i] -= d;
            }
        });
    }
    return out;
}

Tensor BatchNorm2d::forward(Graph& g, const Tensor& x, bool training) {
    if (x.rank() != 4) throw std::invalid_argument("batchnorm2d: expected NCHW input");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != gamma.dim(0)) throw std::invalid_argument("batchnorm2d: channel mismatch");
    const std::size_t m = static_cast<std::size_t>(n) * h * w;
    if (training && m < 2)
        throw std::runtime_error("batchnorm2d: fewer than 2 elements per channel in training");

    auto mean = std::make_shared<std::vector<real>>(c, real(0));
    auto invstd = std::make_shared<std::vector<real>>(c, real(0));
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            real s = 0;
            for (int b = 0; b < n; ++b) {
                const real* src = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += src[i];
            }
            const real mu = s / static_cast<real>(m);
            real v = 0;
            for (int b = 0; b < n; ++b) {
                const real* src = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const real d = src[i] - mu;
                    v += d * d;
                }
            }
            v /= static_cast<real>(m);
            (*mean)[ch] = mu;
            (*invstd)[ch] = real(1) / std::sqrt(v + eps);
            const real unbiased = v * static_cast<real>(m) / static_cast<real>(m - 1);
            running_mean[ch] = (real(1) - momentum) * running_mean[ch] + momentum * mu;
            running_var[ch] = (real(1) - momentum) * running_var[ch] + momentum * unbiased;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            (*mean)[ch] = running_mean[ch];
            (*invstd)[ch] = real(1) / std::sqrt(running_var[ch] + eps);
        }
    }

    Tensor out(x.shape(), track(g, {&x, &gamma, &beta}));
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const real* src = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            real* dst = out.data().data() + (static_cast<std::size_t>(b) * c + ch) * plane;
            const real mu = (*mean)[ch], is = (*invstd)[ch];
            const real ga = gamma[ch], be = beta[ch];
            for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is * ga + be;
        }

    if (out.requires_grad()) {
        Tensor x_t = x, ga_t = gamma, be_t = beta, out_t = out;
        g.record([x_t, ga_t, be_t, out_t, mean, invstd, training]() mutable {
            if (!out_t.has_grad()) return;
            const int n = x_t.dim(0), c = x_t.dim(1);
            const std::size_t plane = static_cast<std::size_t>(x_t.dim(2)) * x_t.dim(3);
            const std::size_t m = static_cast<std::size_t>(n) * plane;
            auto go = out_t.grad_view();
            for (int ch = 0; ch < c; ++ch) {
                const real mu = (*mean)[ch], is = (*invstd)[ch], ga = ga_t[ch];
                real sum_g = 0, sum_gx = 0;  // Σ dy, Σ dy·x̂
                for (int b = 0; b < n; ++b) {
                    const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const real dy = go[off + i];
                        sum_g += dy;
                        sum_gx += dy * (x_t[off + i] - mu) * is;
                    }
                }
                if (ga_t.requires_grad()) ga_t.grad()[ch] += sum_gx;
                if (be_t.requires_grad()) be_t.grad()[ch] += sum_g;
                if (x_t.requires_grad()) {
                    real* gin = x_t.grad().data();
                    for (int b = 0; b < n; ++b) {
                        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const real xhat = (x_t[off + i] - mu) * is;
                            if (training) {
                                gin[off + i] +=
                                    ga * is *
                                    (go[off + i] - sum_g / static_cast<real>(m) -
                                     xhat * sum_gx / static_cast<real>(m));
                            } else {
                                gin[off + i] += ga * is * go[off + i];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

void Sgd::step() {
    for (Tensor& p : params) {
        if (!p.requires_grad()) continue;
        auto& vel = velocity_[p.key()];
        if (momentum != real(0) && vel.empty()) vel.assign(p.numel(), real(0));
        const bool has_g = p.has_grad();
        for (std::size_t i = 0; i < p.numel(); ++i) {
            real d = (has_g ? p.grad_view()[i] : real(0)) + weight_decay * p[i];
            if (momentum != real(0)) {
                vel[i] = momentum * vel[i] + d;
                d = vel[i];
            }
            p[i] -= lr * d;
        }
    }
}

void Sgd::zero_grad() {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace fdi
