#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fdi/wavelet.hpp"

using namespace fdi;

namespace {

Tensor randn(std::vector<int> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<real> dist(real(-1), real(1));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

double energy(const Tensor& t) {
    double e = 0;
    for (std::size_t i = 0; i < t.numel(); ++i)
        e += static_cast<double>(t[i]) * static_cast<double>(t[i]);
    return e;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i] - b[i])));
    return m;
}

}  // namespace

TEST_CASE("haar filters are orthonormal") {
    CHECK(kHaarL[0] * kHaarL[0] + kHaarL[1] * kHaarL[1] == doctest::Approx(1.0));
    CHECK(kHaarH[0] * kHaarH[0] + kHaarH[1] * kHaarH[1] == doctest::Approx(1.0));
    CHECK(kHaarL[0] * kHaarH[0] + kHaarL[1] * kHaarH[1] == doctest::Approx(0.0));
}

TEST_CASE("dwt2d of a constant image concentrates in ll") {
    Tensor x = Tensor::full({1, 2, 2}, real(1));
    WaveletQuad q = dwt2d(x);
    CHECK(q.ll[0] == doctest::Approx(2.0));
    CHECK(q.lh[0] == doctest::Approx(0.0));
    CHECK(q.hl[0] == doctest::Approx(0.0));
    CHECK(q.hh[0] == doctest::Approx(0.0));
}

TEST_CASE("dwt2d hand-computed 2x2 case") {
    Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    WaveletQuad q = dwt2d(x);
    CHECK(q.ll[0] == doctest::Approx(5.0));
    CHECK(q.lh[0] == doctest::Approx(-1.0));
    CHECK(q.hl[0] == doctest::Approx(-2.0));
    CHECK(q.hh[0] == doctest::Approx(0.0));
}

TEST_CASE("dwt2d rejects odd dimensions") {
    CHECK_THROWS(dwt2d(Tensor({1, 3, 4})));
    CHECK_THROWS(dwt2d(Tensor({1, 4, 5})));
}

TEST_CASE("idwt2d inverts the hand-computed case") {
    WaveletQuad q{Tensor::from({1, 1, 1}, {5}), Tensor::from({1, 1, 1}, {-1}),
                  Tensor::from({1, 1, 1}, {-2}), Tensor::from({1, 1, 1}, {0})};
    Tensor x = idwt2d(q);
    REQUIRE(x.shape() == std::vector<int>({1, 2, 2}));
    CHECK(x[0] == doctest::Approx(1.0));
    CHECK(x[1] == doctest::Approx(2.0));
    CHECK(x[2] == doctest::Approx(3.0));
    CHECK(x[3] == doctest::Approx(4.0));

    WaveletQuad c{Tensor::from({1, 1, 1}, {2}), Tensor::from({1, 1, 1}, {0}),
                  Tensor::from({1, 1, 1}, {0}), Tensor::from({1, 1, 1}, {0})};
    Tensor y = idwt2d(c);
    for (int i = 0; i < 4; ++i) CHECK(y[static_cast<std::size_t>(i)] == doctest::Approx(1.0));
}

TEST_CASE("round trip and energy conservation on random images") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = randn({3, 8, 8}, rng);
        WaveletQuad q = dwt2d(x);
        CHECK(max_abs_diff(idwt2d(q), x) < 1e-6);
        const double eq = energy(q.ll) + energy(q.lh) + energy(q.hl) + energy(q.hh);
        CHECK(std::abs(eq - energy(x)) / energy(x) < 1e-6);
    }
    // Batched rank-4 input round-trips too.
    Tensor xb = randn({2, 3, 16, 16}, rng);
    WaveletQuad qb = dwt2d(xb);
    REQUIRE(qb.ll.shape() == std::vector<int>({2, 3, 8, 8}));
    CHECK(max_abs_diff(idwt2d(qb), xb) < 1e-6);
}

TEST_CASE("dwt2d is linear") {
    std::mt19937_64 rng(19);
    Tensor x = randn({3, 8, 8}, rng);
    Tensor y = randn({3, 8, 8}, rng);
    const real a = real(1.3), b = real(-0.6);
    Tensor mix({3, 8, 8});
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
    WaveletQuad qm = dwt2d(mix), qx = dwt2d(x), qy = dwt2d(y);
    auto check_comp = [&](const Tensor& m, const Tensor& cx, const Tensor& cy) {
        for (std::size_t i = 0; i < m.numel(); ++i)
            CHECK(std::abs(static_cast<double>(m[i] - (a * cx[i] + b * cy[i]))) < 1e-6);
    };
    check_comp(qm.ll, qx.ll, qy.ll);
    check_comp(qm.lh, qx.lh, qy.lh);
    check_comp(qm.hl, qx.hl, qy.hl);
    check_comp(qm.hh, qx.hh, qy.hh);
}

TEST_CASE("low_pass returns ll unchanged") {
    Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    WaveletQuad q = dwt2d(x);
    Tensor lp = low_pass(q);
    CHECK(lp.key() == q.ll.key());
    CHECK(lp[0] == doctest::Approx(5.0));
}

TEST_CASE("selection helpers expose component lists and names") {
    CHECK(selected_components(FrequencySelection::LL_ONLY) == std::vector<int>({0}));
    CHECK(selected_components(FrequencySelection::HH_ONLY) == std::vector<int>({3}));
    CHECK(selected_components(FrequencySelection::FUSE_ALL) == std::vector<int>({0, 1, 2, 3}));
    CHECK(selected_components(FrequencySelection::FUSE_NO_LL_HH) == std::vector<int>({1, 2}));
    CHECK(selected_components(FrequencySelection::FUSE_NO_LL) == std::vector<int>({1, 2, 3}));
    CHECK_FALSE(selection_is_fused(FrequencySelection::LH_ONLY));
    CHECK(selection_is_fused(FrequencySelection::FUSE_NO_LL));
    for (FrequencySelection s :
         {FrequencySelection::LL_ONLY, FrequencySelection::LH_ONLY, FrequencySelection::HL_ONLY,
          FrequencySelection::HH_ONLY, FrequencySelection::FUSE_ALL,
          FrequencySelection::FUSE_NO_LL_HH, FrequencySelection::FUSE_NO_LL})
        CHECK(selection_from_name(selection_name(s)) == s);
    CHECK_THROWS(selection_from_name("bogus"));
}

TEST_CASE("high_pass single-component selection passes the component through") {
    Graph g(false);
    std::mt19937_64 rng(23);
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    WaveletQuad q = dwt2d(x);
    PointwiseFuser fuser(1, FrequencySelection::HH_ONLY, rng);
    Tensor hi = high_pass(g, q, fuser, FrequencySelection::HH_ONLY);
    CHECK(hi[0] == doctest::Approx(0.0));
    Tensor lh = high_pass(g, q, fuser, FrequencySelection::LH_ONLY);
    CHECK(lh[0] == doctest::Approx(-1.0));
}

TEST_CASE("high_pass fused selection applies the 1x1 fuser") {
    Graph g(false);
    std::mt19937_64 rng(29);
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    WaveletQuad q = dwt2d(x);

    // FUSE_NO_LL on a 1-channel image concatenates (lh,hl,hh); weights that
    // pick the lh slice reproduce lh exactly.
    PointwiseFuser pick(1, FrequencySelection::FUSE_NO_LL, rng);
    REQUIRE(pick.weight.shape() == std::vector<int>({1, 3, 1, 1}));
    pick.weight[0] = 1;
    pick.weight[1] = 0;
    pick.weight[2] = 0;
    pick.bias[0] = 0;
    CHECK(high_pass(g, q, pick, FrequencySelection::FUSE_NO_LL)[0] == doctest::Approx(-1.0));

    PointwiseFuser zero(1, FrequencySelection::FUSE_ALL, rng);
    REQUIRE(zero.weight.shape() == std::vector<int>({1, 4, 1, 1}));
    for (std::size_t i = 0; i < zero.weight.numel(); ++i) zero.weight[i] = 0;
    zero.bias[0] = 0;
    Tensor out = high_pass(g, q, zero, FrequencySelection::FUSE_ALL);
    REQUIRE(out.shape() == std::vector<int>({1, 1, 1, 1}));
    CHECK(out[0] == doctest::Approx(0.0));
}

TEST_CASE("high_pass without ll is invariant to constant image shifts") {
    Graph g(false);
    std::mt19937_64 rng(31);
    Tensor x = randn({2, 3, 8, 8}, rng);
    Tensor shifted = x.clone();
    for (std::size_t i = 0; i < shifted.numel(); ++i) shifted[i] += real(0.37);
    for (FrequencySelection sel :
         {FrequencySelection::LH_ONLY, FrequencySelection::HL_ONLY, FrequencySelection::HH_ONLY,
          FrequencySelection::FUSE_NO_LL_HH, FrequencySelection::FUSE_NO_LL}) {
        PointwiseFuser fuser(3, sel, rng);
        Tensor a = high_pass(g, dwt2d(x), fuser, sel);
        Tensor b = high_pass(g, dwt2d(shifted), fuser, sel);
        for (std::size_t i = 0; i < a.numel(); ++i)
            CHECK(std::abs(static_cast<double>(a[i] - b[i])) < 1e-6);
    }
}

TEST_CASE("freeze_fuser stops updates but not the forward pass") {
    Graph g;
    std::mt19937_64 rng(37);
    Tensor x = randn({1, 3, 8, 8}, rng);
    WaveletQuad q = dwt2d(x);
    PointwiseFuser fuser(3, FrequencySelection::FUSE_NO_LL, rng);
    CHECK_FALSE(fuser.frozen());

    Tensor before = high_pass(g, q, fuser, FrequencySelection::FUSE_NO_LL);
    freeze_fuser(fuser);
    CHECK(fuser.frozen());
    Tensor after = high_pass(g, q, fuser, FrequencySelection::FUSE_NO_LL);
    for (std::size_t i = 0; i < before.numel(); ++i) CHECK(before[i] == after[i]);

    // A frozen fuser is skipped by the optimizer even with gradients present.
    std::vector<real> saved(fuser.weight.data().begin(), fuser.weight.data().end());
    Sgd opt;
    opt.params = {fuser.weight, fuser.bias};
    opt.lr = real(0.5);
    fuser.weight.ensure_grad();
    opt.step();
    for (std::size_t i = 0; i < saved.size(); ++i) CHECK(fuser.weight[i] == saved[i]);
}
