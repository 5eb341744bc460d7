#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fdi/ops.hpp"

using namespace fdi;

namespace {

Tensor randn(std::vector<int> shape, std::mt19937_64& rng, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::uniform_real_distribution<real> dist(real(-1), real(1));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

// Direct 6-loop convolution reference with the same (ci,kh,kw) inner
// summation order as the production kernel.
Tensor conv2d_reference(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride, int padding) {
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    Tensor out({n, cout, ho, wo});
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    real acc = bias.defined() ? bias[static_cast<std::size_t>(co)] : real(0);
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride + ky - padding;
                                const int ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += weight[((static_cast<std::size_t>(co) * cin + ci) * kh +
                                               ky) * kw + kx] *
                                       input[((static_cast<std::size_t>(b) * cin + ci) * h +
                                              iy) * w + ix];
                            }
                    out[((static_cast<std::size_t>(b) * cout + co) * ho + oy) * wo + ox] = acc;
                }
    return out;
}

Tensor linear_reference(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const int n = input.dim(0), d = input.dim(1), k = weight.dim(0);
    Tensor out({n, k});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            real acc = bias.defined() ? bias[static_cast<std::size_t>(j)] : real(0);
            for (int t = 0; t < d; ++t)
                acc += input[static_cast<std::size_t>(i) * d + t] *
                       weight[static_cast<std::size_t>(j) * d + t];
            out[static_cast<std::size_t>(i) * k + j] = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 kernel sums to 9") {
    Graph g(false);
    Tensor x = Tensor::full({1, 1, 3, 3}, real(1));
    Tensor w = Tensor::full({1, 1, 3, 3}, real(1));
    Tensor y = conv2d(g, x, w, Tensor(), 1, 0);
    REQUIRE(y.shape() == std::vector<int>({1, 1, 1, 1}));
    CHECK(y[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d 1x1 kernel is scalar scaling") {
    Graph g(false);
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::from({1, 1, 1, 1}, {2});
    Tensor y = conv2d(g, x, w, Tensor(), 1, 0);
    CHECK(y[0] == real(2));
    CHECK(y[1] == real(4));
    CHECK(y[2] == real(6));
    CHECK(y[3] == real(8));
}

TEST_CASE("conv2d matches the direct-loop reference bitwise") {
    std::mt19937_64 rng(7);
    Graph g(false);
    struct Case {
        std::vector<int> in, wt;
        int stride, pad;
    };
    for (const Case& c : {Case{{2, 3, 8, 8}, {4, 3, 3, 3}, 2, 1},
                          Case{{1, 2, 5, 7}, {3, 2, 3, 3}, 1, 1},
                          Case{{2, 4, 6, 6}, {2, 4, 1, 1}, 1, 0},
                          Case{{1, 1, 9, 9}, {2, 1, 3, 3}, 3, 0}}) {
        Tensor x = randn(c.in, rng);
        Tensor w = randn(c.wt, rng);
        Tensor b = randn({c.wt[0]}, rng);
        Tensor got = conv2d(g, x, w, b, c.stride, c.pad);
        Tensor want = conv2d_reference(x, w, b, c.stride, c.pad);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);
    }
    Tensor x = randn({2, 3, 8, 8}, rng);
    Tensor w = randn({4, 3, 3, 3}, rng);
    Tensor y = conv2d(g, x, w, Tensor(), 2, 1);
    CHECK(y.shape() == std::vector<int>({2, 4, 4, 4}));
}

TEST_CASE("conv2d rejects channel mismatch and bad geometry") {
    Graph g(false);
    Tensor x = Tensor({1, 3, 4, 4});
    CHECK_THROWS_AS(conv2d(g, x, Tensor({2, 4, 3, 3}), Tensor(), 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(g, x, Tensor({2, 3, 7, 7}), Tensor(), 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(g, x, Tensor({2, 3, 3, 3}), Tensor(), 0, 0), std::invalid_argument);
}

TEST_CASE("linear identity and hand example") {
    Graph g(false);
    Tensor x = Tensor::from({1, 2}, {1, 0});
    Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor({2});
    Tensor y = linear(g, x, w, b);
    CHECK(y[0] == real(1));
    CHECK(y[1] == real(0));

    Tensor x2 = Tensor::from({1, 2}, {1, 2});
    Tensor w2 = Tensor::from({1, 2}, {3, 4});
    Tensor b2 = Tensor::from({1}, {1});
    CHECK(linear(g, x2, w2, b2)[0] == real(12));
}

TEST_CASE("linear matches the reference matmul exactly") {
    std::mt19937_64 rng(11);
    Graph g(false);
    Tensor x = randn({5, 7}, rng);
    Tensor w = randn({4, 7}, rng);
    Tensor b = randn({4}, rng);
    Tensor got = linear(g, x, w, b);
    Tensor want = linear_reference(x, w, b);
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);
    CHECK_THROWS_AS(linear(g, x, Tensor({4, 6}), b), std::invalid_argument);
}

TEST_CASE("batchnorm2d normalizes {1,3} to {-1,+1}") {
    Graph g(false);
    BatchNorm2d bn(1);
    bn.eps = 0;
    Tensor x = Tensor::from({2, 1, 1, 1}, {1, 3});
    Tensor y = bn.forward(g, x, true);
    CHECK(y[0] == doctest::Approx(-1.0));
    CHECK(y[1] == doctest::Approx(1.0));
    // Running stats move toward batch mean 2 / unbiased var 2 with momentum 0.1.
    CHECK(bn.running_mean[0] == doctest::Approx(0.2));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
}

TEST_CASE("batchnorm2d with zero scale outputs the shift") {
    Graph g(false);
    std::mt19937_64 rng(3);
    BatchNorm2d bn(2);
    bn.gamma[0] = bn.gamma[1] = 0;
    bn.beta[0] = real(0.25);
    bn.beta[1] = real(-0.5);
    Tensor x = randn({3, 2, 4, 4}, rng);
    Tensor y = bn.forward(g, x, true);
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 16; ++i)
                CHECK(y[(static_cast<std::size_t>(b) * 2 + c) * 16 + i] ==
                      doctest::Approx(static_cast<double>(bn.beta[c])));
}

TEST_CASE("batchnorm2d eval mode applies the running-stats formula") {
    Graph g(false);
    std::mt19937_64 rng(5);
    BatchNorm2d bn(3);
    bn.running_mean = {real(0.1), real(-0.2), real(0.3)};
    bn.running_var = {real(1.5), real(0.7), real(2.0)};
    bn.gamma[0] = real(1.1);
    bn.beta[2] = real(-0.4);
    Tensor x = randn({2, 3, 4, 4}, rng);
    Tensor y = bn.forward(g, x, false);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 16; ++i) {
                const std::size_t idx = (static_cast<std::size_t>(b) * 3 + c) * 16 + i;
                const real want = (x[idx] - bn.running_mean[c]) /
                                      std::sqrt(bn.running_var[c] + bn.eps) * bn.gamma[c] +
                                  bn.beta[c];
                CHECK(y[idx] == doctest::Approx(static_cast<double>(want)));
            }
}

TEST_CASE("batchnorm2d rejects degenerate training batches") {
    Graph g(false);
    BatchNorm2d bn(1);
    Tensor x = Tensor::from({1, 1, 1, 1}, {3});
    CHECK_THROWS(bn.forward(g, x, true));
    CHECK_NOTHROW(bn.forward(g, x, false));
}

TEST_CASE("relu clamps negatives") {
    Graph g(false);
    Tensor x = Tensor::from({1, 2}, {-1, 2});
    Tensor y = relu(g, x);
    CHECK(y[0] == real(0));
    CHECK(y[1] == real(2));
}

TEST_CASE("softmax_cross_entropy of uniform logits is ln(classes)") {
    Graph g(false);
    Tensor logits = Tensor({1, 2});
    std::vector<int> labels = {0};
    CHECK(softmax_cross_entropy(g, logits, labels).item() ==
          doctest::Approx(std::log(2.0)));
    std::vector<int> bad = {5};
    CHECK_THROWS_AS(softmax_cross_entropy(g, logits, bad), std::invalid_argument);
}

TEST_CASE("softmax_cross_entropy masking restricts the candidate set") {
    Graph g(false);
    Tensor logits = Tensor::from({1, 3}, {5, 1, -2});
    std::vector<int> labels = {1};
    // Masking out the dominant class 0 leaves a 2-way softmax over {1,2}.
    std::vector<std::uint8_t> allowed = {0, 1, 1};
    const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-2.0)));
    CHECK(softmax_cross_entropy(g, logits, labels, allowed).item() == doctest::Approx(want));
    // Masking everything except the true label gives zero loss.
    std::vector<std::uint8_t> only = {0, 1, 0};
    CHECK(softmax_cross_entropy(g, logits, labels, only).item() == doctest::Approx(0.0));
    std::vector<std::uint8_t> none = {1, 0, 1};
    CHECK_THROWS(softmax_cross_entropy(g, logits, labels, none));
}

TEST_CASE("mse hand example") {
    Graph g(false);
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor b = Tensor::from({2}, {1, 4});
    CHECK(mse(g, a, b).item() == doctest::Approx(2.0));
    CHECK_THROWS_AS(mse(g, a, Tensor({3})), std::invalid_argument);
}

TEST_CASE("add and scale elementwise semantics") {
    Graph g(false);
    Tensor a = Tensor::from({2}, {1, -2});
    Tensor b = Tensor::from({2}, {3, 5});
    Tensor s = add(g, a, b);
    CHECK(s[0] == real(4));
    CHECK(s[1] == real(3));
    Tensor c = scale(g, a, real(-2));
    CHECK(c[0] == real(-2));
    CHECK(c[1] == real(4));
    CHECK_THROWS_AS(add(g, a, Tensor({3})), std::invalid_argument);
}

TEST_CASE("concat_channels handles rank 4 and rank 2") {
    Graph g(false);
    Tensor a = Tensor::from({1, 1, 1, 2}, {1, 2});
    Tensor b = Tensor::from({1, 2, 1, 2}, {3, 4, 5, 6});
    Tensor y = concat_channels(g, {a, b});
    REQUIRE(y.shape() == std::vector<int>({1, 3, 1, 2}));
    for (int i = 0; i < 6; ++i) CHECK(y[static_cast<std::size_t>(i)] == real(i + 1));

    Tensor p = Tensor::from({2, 1}, {1, 2});
    Tensor q = Tensor::from({2, 2}, {3, 4, 5, 6});
    Tensor r = concat_channels(g, {p, q});
    REQUIRE(r.shape() == std::vector<int>({2, 3}));
    CHECK(r[0] == real(1));
    CHECK(r[1] == real(3));
    CHECK(r[2] == real(4));
    CHECK(r[3] == real(2));
    CHECK(r[4] == real(5));
    CHECK(r[5] == real(6));

    CHECK_THROWS_AS(concat_channels(g, {a, Tensor({1, 1, 2, 2})}), std::invalid_argument);
}

TEST_CASE("global_avg_pool means each channel plane") {
    Graph g(false);
    Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    Tensor y = global_avg_pool(g, x);
    REQUIRE(y.shape() == std::vector<int>({1, 2}));
    CHECK(y[0] == doctest::Approx(2.5));
    CHECK(y[1] == doctest::Approx(25.0));
}

TEST_CASE("sgd basic step") {
    Tensor w = Tensor::from({1}, {1}, true);
    w.grad()[0] = 1;
    Sgd opt;
    opt.params = {w};
    opt.lr = real(0.1);
    opt.step();
    CHECK(w[0] == doctest::Approx(0.9));
}

TEST_CASE("sgd momentum accumulates across steps") {
    Tensor w = Tensor::from({1}, {0}, true);
    Sgd opt;
    opt.params = {w};
    opt.lr = real(0.1);
    opt.momentum = real(0.9);
    w.grad()[0] = 1;
    opt.step();
    CHECK(w[0] == doctest::Approx(-0.1));
    w.zero_grad();
    w.grad()[0] = 1;
    opt.step();
    CHECK(w[0] == doctest::Approx(-0.29));
}

TEST_CASE("sgd weight decay applies with zero gradient") {
    Tensor w = Tensor::from({1}, {1}, true);
    Sgd opt;
    opt.params = {w};
    opt.lr = real(0.1);
    opt.weight_decay = real(0.1);
    opt.step();
    CHECK(w[0] == doctest::Approx(0.99));
}

TEST_CASE("sgd skips parameters with requires_grad off") {
    Tensor w = Tensor::from({1}, {1}, true);
    w.grad()[0] = 1;
    w.set_requires_grad(false);
    Sgd opt;
    opt.params = {w};
    opt.lr = real(0.1);
    opt.step();
    CHECK(w[0] == real(1));
}

TEST_CASE("backward demands a scalar loss") {
    Graph g;
    Tensor v = Tensor({3}, true);
    CHECK_THROWS(g.backward(v));
}

TEST_CASE("backward of sum(w*x) with fixed x yields grad w == x") {
    Graph g;
    // sum(w ⊙ x) via linear with a single output row.
    Tensor w = Tensor::from({1, 3}, {2, -1, 4}, true);
    Tensor x = Tensor::from({1, 3}, {1, 5, -3});
    Tensor y = linear(g, x, w, Tensor());
    g.backward(y);
    CHECK(w.grad()[0] == real(1));
    CHECK(w.grad()[1] == real(5));
    CHECK(w.grad()[2] == real(-3));
}

TEST_CASE("forward passes are deterministic for fixed inputs") {
    std::mt19937_64 rng(21);
    Graph g(false);
    Tensor x = randn({2, 3, 8, 8}, rng);
    Tensor w = randn({4, 3, 3, 3}, rng);
    Tensor a = conv2d(g, x, w, Tensor(), 1, 1);
    Tensor b = conv2d(g, x, w, Tensor(), 1, 1);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}
