#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asu/losses.hpp"

using namespace asu;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.vocab_size = 11;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.d_ff = 12;
    c.max_seq_len = 16;
    return c;
}

// Small hand-built vocab covering the idk pool plus filler words.
Vocab test_vocab() {
    std::vector<std::string> toks = {"<eos>"};
    for (const auto& s : idk_pool()) {
        for (const auto& w : tokenize(s)) {
            if (std::find(toks.begin(), toks.end(), w) == toks.end()) toks.push_back(w);
        }
    }
    for (const char* w : {"alpha", "beta", "gamma", "delta", "omega"}) toks.push_back(w);
    return Vocab(toks);
}

struct Fixture {
    Vocab vocab = test_vocab();
    ModelConfig cfg;
    ModelParams params;
    std::vector<QARecord> recs;
    std::vector<Example> batch;

    explicit Fixture(std::uint64_t seed = 5, std::size_t n = 2) {
        cfg = tiny();
        cfg.vocab_size = vocab.size();
        params = init_params(cfg, seed);
        recs.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            recs[i].answer_tokens = {"alpha", "beta"};
            recs[i].factual_token_indices = {1};
            Example ex;
            ex.prompt = {vocab.id("alpha"), vocab.id(i % 2 == 0 ? "gamma" : "delta")};
            ex.answer = {vocab.id("beta"), vocab.id("omega")};
            ex.record = &recs[i];
            batch.push_back(ex);
        }
    }
};

std::vector<Tensor> all_leaves(ModelParams& p) {
    std::vector<Tensor> leaves;
    for (auto& [name, t] : p.tensors) {
        (void)name;
        leaves.push_back(t);
    }
    return leaves;
}

}  // namespace

TEST_CASE("GA is exactly the negative of GD") {
    Fixture fx;
    NoGradGuard ng;
    const double gd = loss_gd(fx.params, fx.batch).item();
    const double ga = loss_ga(fx.params, fx.batch).item();
    CHECK(gd + ga == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(gd > 0.0);
}

TEST_CASE("NPO at theta = theta_base equals (2/beta) ln 2") {
    Fixture fx;
    NoGradGuard ng;
    const double beta = 0.1;
    const double v = loss_npo(fx.params, fx.params, fx.batch, beta).item();
    CHECK(v == doctest::Approx(2.0 / beta * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("DPO at theta = theta_base equals (1/beta) ln 2") {
    Fixture fx;
    NoGradGuard ng;
    const double beta = 0.1;
    const double v = loss_dpo(fx.params, fx.params, fx.vocab, fx.batch, idk_pool(), beta, 99).item();
    CHECK(v == doctest::Approx(1.0 / beta * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("KL retain loss vanishes at theta = theta_base") {
    Fixture fx;
    NoGradGuard ng;
    CHECK(loss_kl_retain(fx.params, fx.params, fx.batch).item() ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ASU loss vanishes against an identity-temperature teacher of itself") {
    Fixture fx;
    NoGradGuard ng;
    TeacherHandle t = make_teacher(fx.params, SmoothingSpec::identity());
    CHECK(loss_asu(fx.params, t, fx.batch).item() == doctest::Approx(0.0).epsilon(1e-12));
    // A genuinely smoothed teacher moves the loss off zero.
    TeacherHandle s = make_teacher(fx.params, SmoothingSpec::all_layers(2.3, fx.cfg.n_layers));
    CHECK(loss_asu(fx.params, s, fx.batch).item() > 0.0);
}

TEST_CASE("ME loss is a nonnegative divergence, tiny near a uniform student") {
    Fixture fx;
    NoGradGuard ng;
    const double v = loss_me(fx.params, fx.batch).item();
    CHECK(v >= 0.0);
    CHECK(std::isfinite(v));
    // The 0.02-std init is near-uniform, so KL(U || p) stays small.
    CHECK(v < 0.1);
}

TEST_CASE("SimNPO at theta with gamma=0 is positive and beta-scaled") {
    Fixture fx;
    NoGradGuard ng;
    const double v1 = loss_simnpo(fx.params, fx.batch, 0.1, 0.0).item();
    const double v2 = loss_simnpo(fx.params, fx.batch, 0.2, 0.0).item();
    CHECK(v1 > 0.0);
    CHECK(v2 > 0.0);
    CHECK(v1 != v2);
}

TEST_CASE("hidden-state retain MSE vanishes at theta = theta_base") {
    Fixture fx;
    NoGradGuard ng;
    CHECK(loss_mse_retain(fx.params, fx.params, fx.batch, 1).item() ==
          doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("ASU_hidden vanishes against an identity teacher of itself") {
    Fixture fx;
    NoGradGuard ng;
    TeacherHandle t = make_teacher(fx.params, SmoothingSpec::identity());
    CHECK(loss_asu_hidden(fx.params, t, fx.batch, 1).item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("RMU steering vector is deterministic and unit norm") {
    auto u1 = rmu_unit_vector(8, 12);
    auto u2 = rmu_unit_vector(8, 12);
    auto u3 = rmu_unit_vector(8, 13);
    CHECK(u1 == u2);
    CHECK(u1 != u3);
    double n = 0.0;
    for (double v : u1) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("combined objective is lambda * forget + retain") {
    NoGradGuard ng;
    Tensor f = Tensor::scalar(3.0);
    Tensor r = Tensor::scalar(2.0);
    CHECK(combined_objective(f, r, 0.1).item() == doctest::Approx(2.3).epsilon(1e-15));
}

TEST_CASE("idk relabeling is seeded and reproducible") {
    Fixture fx;
    NoGradGuard ng;
    const double a = loss_idk(fx.params, fx.vocab, fx.batch, idk_pool(), 7).item();
    const double b = loss_idk(fx.params, fx.vocab, fx.batch, idk_pool(), 7).item();
    CHECK(a == b);
    CHECK(a > 0.0);
}

TEST_CASE("gradients of every loss pass grad_check at seeded points") {
    for (std::uint64_t seed : {11ULL, 29ULL}) {
        Fixture fx(seed, 1);
        fx.params.set_requires_grad(true);
        ModelParams base = fx.params.clone();  // frozen reference copy
        TeacherHandle teacher = make_teacher(base, SmoothingSpec::all_layers(2.0, fx.cfg.n_layers));
        auto leaves = all_leaves(fx.params);
        auto check = [&](const std::function<Tensor()>& f) {
            return grad_check(f, std::span<Tensor>(leaves), 1e-5);
        };
        CHECK(check([&] { return loss_gd(fx.params, fx.batch); }) < 1e-5);
        CHECK(check([&] { return loss_ga(fx.params, fx.batch); }) < 1e-5);
        CHECK(check([&] { return loss_asu(fx.params, teacher, fx.batch); }) < 1e-5);
        CHECK(check([&] { return loss_kl_retain(fx.params, base, fx.batch); }) < 1e-5);
        CHECK(check([&] { return loss_npo(fx.params, base, fx.batch, 0.1); }) < 1e-5);
        CHECK(check([&] { return loss_me(fx.params, fx.batch); }) < 1e-5);
        CHECK(check([&] { return loss_idk(fx.params, fx.vocab, fx.batch, idk_pool(), 3); }) < 1e-5);
        CHECK(check([&] {
                  return loss_dpo(fx.params, base, fx.vocab, fx.batch, idk_pool(), 0.1, 3);
              }) < 1e-5);
        CHECK(check([&] { return loss_simnpo(fx.params, fx.batch, 0.1, 0.1); }) < 1e-5);
        CHECK(check([&] {
                  return loss_ap(fx.params, fx.vocab, fx.batch, idk_pool(), 0.1, 3);
              }) < 1e-5);
        CHECK(check([&] { return loss_mse_retain(fx.params, base, fx.batch, 1); }) < 1e-5);
        CHECK(check([&] { return loss_asu_hidden(fx.params, teacher, fx.batch, 1); }) < 1e-5);
        CHECK(check([&] { return loss_rmu(fx.params, fx.batch, 1, 5.0, 2); }) < 1e-5);
        CHECK(check([&] {
                  return combined_objective(loss_asu(fx.params, teacher, fx.batch),
                                            loss_gd(fx.params, fx.batch), 0.1);
              }) < 1e-5);
    }
}

TEST_CASE("loss config validation") {
    LossConfig lc;
    lc.lambda = -1.0;
    CHECK_THROWS_AS(lc.validate(4, false), ContractError);
    lc = LossConfig{};
    lc.beta = 0.0;
    CHECK_THROWS_AS(lc.validate(4, false), ContractError);
    lc = LossConfig{};
    lc.steering_layer = 9;
    CHECK_THROWS_AS(lc.validate(4, false), ContractError);
}
