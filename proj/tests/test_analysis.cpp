#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asu/analysis.hpp"

using namespace asu;

TEST_CASE("lemma 1 closed form matches central differences within 1e-6") {
    auto rep = verify_lemma1(100, 17, 1e-6);
    CHECK(rep.passed);
    CHECK(rep.cases == 500);  // 100 vectors x 5 temperatures
    CHECK(rep.max_abs_error <= 1e-6);
    CHECK(rep.max_abs_error > 0.0);  // an honest numeric comparison, not 0-vs-0
}

TEST_CASE("lemma 2 closed form matches central differences and entropy is monotone") {
    auto rep = verify_lemma2(100, 17, 1e-6);
    CHECK(rep.passed);
    CHECK(rep.monotone);
    CHECK(rep.max_abs_error <= 1e-6);
    CHECK(!rep.to_json().empty());
}

TEST_CASE("lemma reports fail honestly under an absurd tolerance") {
    auto rep = verify_lemma1(20, 17, 1e-18);
    CHECK_FALSE(rep.passed);
}

TEST_CASE("margin scan: smoothing never flips the attention argmax") {
    auto rows = lemma3_margin_scan(50, 23, {1.0, 1.5, 2.3, 4.0});
    REQUIRE(rows.size() == 4);
    double prev_gap = 2.0;
    for (const auto& r : rows) {
        CHECK(r.argmax_preserved);
        CHECK(r.mean_top_gap > 0.0);
        CHECK(r.mean_top_gap < prev_gap);  // gaps shrink as tau grows
        prev_gap = r.mean_top_gap;
    }
}

TEST_CASE("factual/function curves are well formed on a tiny model") {
    CorpusSpec cs;
    cs.n_entities = 8;
    cs.qa_per_entity = 2;
    cs.forget_fraction = 0.2;
    cs.holdout_fraction = 0.2;
    cs.seed = 9;
    Corpus corpus = generate_corpus(cs);
    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.n_layers = 2;
    mc.d_ff = 16;
    mc.max_seq_len = 96;
    ModelParams base = init_params(mc, 1);
    auto rows = factual_function_curves(base, corpus, {1.0, 2.0, 3.0});
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        CHECK(std::isfinite(r.nll_factual));
        CHECK(std::isfinite(r.nll_function));
        CHECK(r.entropy_factual >= 0.0);
        CHECK(r.entropy_function >= 0.0);
    }
    // tau = 1 row equals the identity forward exactly (same code path).
    CHECK(rows[0].tau == doctest::Approx(1.0));
    auto csv = curves_to_csv(rows);
    CHECK(csv.find("tau,nll_factual") == 0);
}
