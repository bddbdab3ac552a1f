#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "asu/tensor.hpp"

using namespace asu;

namespace {

// Independent scalar-loop softmax used as the test oracle.
std::vector<double> oracle_softmax(const std::vector<double>& row, double tau) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    std::vector<double> out(row.size());
    double z = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        out[i] = std::exp((row[i] - mx) / tau);
        z += out[i];
    }
    for (auto& v : out) v /= z;
    return out;
}

Tensor seeded(Shape shape, std::uint64_t seed, bool rg = true) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> vals(shape_numel(shape));
    for (auto& v : vals) v = d(rng);
    return Tensor::from(std::move(shape), std::move(vals), rg);
}

}  // namespace

TEST_CASE("matmul matches the hand oracle") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({3, 1}, {2, 1, 3});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c[0] == doctest::Approx(13.0).epsilon(1e-15));
    CHECK(c[1] == doctest::Approx(31.0).epsilon(1e-15));
}

TEST_CASE("shape contract violations throw ContractError") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({3, 1}, {1, 2, 3});
    CHECK_THROWS_AS((void)add(a, b), ContractError);
    CHECK_THROWS_AS((void)matmul(b, a), ContractError);
    CHECK_THROWS_AS((void)a.item(), ContractError);
    CHECK_THROWS_AS((void)reshape(a, {3, 3}), ContractError);
}

TEST_CASE("softmax_tau matches the scalar oracle for several temperatures") {
    std::vector<double> row = {0.3, -1.2, 2.5, 0.0, 4.0};
    for (double tau : {1.0, 1.5, 2.3, 100.0}) {
        Tensor t = softmax_tau(Tensor::from({1, 5}, row), tau, 1);
        auto want = oracle_softmax(row, tau);
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(t[i] == doctest::Approx(want[i]).epsilon(1e-14));
            s += t[i];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("log_softmax equals log of softmax") {
    Tensor x = seeded({3, 7}, 11, false);
    Tensor sm = softmax_tau(x, 1.0, 1);
    Tensor lsm = log_softmax(x, 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::exp(lsm[i]) == doctest::Approx(sm[i]).epsilon(1e-13));
    }
}

TEST_CASE("causal_softmax_tau: masked entries exactly zero, prefixes sum to one") {
    Tensor scores = seeded({4, 4}, 3, false);
    Tensor a = causal_softmax_tau(scores, 2.0);
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            if (c > r) {
                CHECK(a.at2(r, c) == 0.0);  // exact, not approximate
            } else {
                CHECK(a.at2(r, c) > 0.0);
                s += a.at2(r, c);
            }
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("layer_norm normalizes rows with unit gain and zero bias") {
    Tensor x = seeded({2, 8}, 5, false);
    Tensor g = Tensor::full({8}, 1.0);
    Tensor b = Tensor::zeros({8});
    Tensor y = layer_norm(x, g, b, 1e-5);
    for (std::size_t r = 0; r < 2; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 8; ++c) mean += y.at2(r, c);
        mean /= 8.0;
        for (std::size_t c = 0; c < 8; ++c) var += (y.at2(r, c) - mean) * (y.at2(r, c) - mean);
        var /= 8.0;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("gelu and log_sigmoid sanity values") {
    Tensor x = Tensor::from({1, 4}, {0.0, 10.0, -10.0, 1.0});
    Tensor g = gelu(x);
    CHECK(g[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(std::abs(g[2]) < 1e-6);
    Tensor ls = log_sigmoid(x);
    CHECK(ls[0] == doctest::Approx(std::log(0.5)).epsilon(1e-14));
    CHECK(ls[2] == doctest::Approx(-10.0).epsilon(1e-4));
}

TEST_CASE("backward on sum(mul(a,b)) hands each leaf the other's values") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8}, true);
    Tape::active().clear();
    Tensor loss = sum(mul(a, b));
    backward(loss);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.grad()[i] == doctest::Approx(b[i]).epsilon(1e-15));
        CHECK(b.grad()[i] == doctest::Approx(a[i]).epsilon(1e-15));
    }
    Tape::active().clear();
}

TEST_CASE("grad_check passes a composite expression at seeded points") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        Tensor x = seeded({3, 4}, seed);
        Tensor w = seeded({4, 5}, seed + 100);
        std::vector<Tensor> leaves = {x, w};
        auto f = [&] {
            Tensor h = gelu(matmul(x, w));
            Tensor p = softmax_tau(h, 1.7, 1);
            return sum(mul(p, h));
        };
        CHECK(grad_check(f, std::span<Tensor>(leaves), 1e-5) < 1e-6);
    }
}

TEST_CASE("grad_check covers log/exp/tanh/log_sigmoid/layer_norm/gather") {
    Tensor x = seeded({2, 6}, 42);
    auto f = [&] {
        Tensor g = Tensor::full({6}, 1.1, false);
        Tensor b = Tensor::full({6}, -0.2, false);
        Tensor ln = layer_norm(x, g, b, 1e-5);
        Tensor t = tanh_op(ln);
        Tensor e = exp_op(scale(t, 0.5));
        Tensor l = log_op(add_scalar(e, 1.0));
        Tensor ls = log_sigmoid(l);
        Tensor picked = gather_entries(ls, {0, 1}, {2, 5});
        return sum(picked);
    };
    CHECK(grad_check(f, x, 1e-5) < 1e-6);
}

TEST_CASE("negative control: a corrupted adjoint is caught by grad_check") {
    Tensor x = Tensor::from({3}, {0.4, -0.7, 1.3}, true);
    auto node = x.node();
    auto f = [&] {
        // y = 2x but the adjoint claims dy/dx = 3.
        std::vector<double> v(node->value.begin(), node->value.end());
        for (auto& e : v) e *= 2.0;
        Tensor y = Tape::active().emit({3}, std::move(v), true,
                                       [node](std::span<const double> og) {
                                           if (node->grad.empty()) node->grad.assign(3, 0.0);
                                           for (std::size_t i = 0; i < 3; ++i) node->grad[i] += 3.0 * og[i];
                                       },
                                       "bad_op");
        return sum(y);
    };
    CHECK(grad_check(f, x, 1e-5) > 0.3);
}

TEST_CASE("NoGradGuard suppresses recording") {
    Tape::active().clear();
    Tensor a = Tensor::from({2}, {1, 2}, true);
    {
        NoGradGuard ng;
        Tensor b = scale(a, 3.0);
        CHECK(b[1] == doctest::Approx(6.0));
    }
    CHECK(Tape::active().size() == 0);
    Tensor c = scale(a, 3.0);
    CHECK(Tape::active().size() == 1);
    (void)c;
    Tape::active().clear();
}

TEST_CASE("gather and slice ops produce the expected views") {
    Tensor m = Tensor::from({3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
    Tensor r = gather_rows(m, {2, 0});
    CHECK(r.at2(0, 1) == 7.0);
    CHECK(r.at2(1, 2) == 2.0);
    Tensor sc = slice_cols(m, 1, 2);
    CHECK(sc.at2(2, 0) == 7.0);
    Tensor sr = slice_rows(m, 1, 1);
    CHECK(sr.at2(0, 0) == 3.0);
    Tensor ge = gather_entries(m, {0, 2}, {2, 1});
    CHECK(ge[0] == 2.0);
    CHECK(ge[1] == 7.0);
}
