#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "asu/metrics.hpp"

using namespace asu;

TEST_CASE("ROUGE-L recall frozen oracle") {
    // LCS("x a y c", "a b c") = "a c" -> 2 / |ref| = 2/3.
    CHECK(rouge_l_recall({"x", "a", "y", "c"}, {"a", "b", "c"}) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(rouge_l_recall({"a", "b", "c"}, {"a", "b", "c"}) == doctest::Approx(1.0));
    CHECK(rouge_l_recall({}, {"a"}) == doctest::Approx(0.0));
    CHECK(rouge_l_recall({"z"}, {"a", "b"}) == doctest::Approx(0.0));
}

TEST_CASE("sequence probability is the geometric mean") {
    // exp(mean(ln .5, ln .125)) = sqrt(1/16) = 0.25.
    CHECK(seq_probability({std::log(0.5), std::log(0.125)}) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(seq_probability({std::log(0.7)}) == doctest::Approx(0.7).epsilon(1e-14));
}

TEST_CASE("token entropy frozen oracle") {
    // Two symbols, evenly split over 4 tokens: H = 1 bit, log2(4) = 2 -> 0.5.
    CHECK(token_entropy({"a", "a", "b", "b"}) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(token_entropy({"a", "a", "a"}) == doctest::Approx(0.0));
    CHECK(token_entropy({"a"}) == doctest::Approx(0.0));  // length <= 1 pins TE to 0
    CHECK(token_entropy({}) == doctest::Approx(0.0));
    CHECK(token_entropy({"a", "b", "c", "d"}) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("cosine similarity proxy frozen oracle") {
    CHECK(cosine_similarity_proxy({"a", "b"}, {"a", "c"}) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(cosine_similarity_proxy({"a"}, {"a", "a"}) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(cosine_similarity_proxy({"a"}, {"b"}) == doctest::Approx(0.0));
    CHECK(cosine_similarity_proxy({}, {"b"}) == doctest::Approx(0.0));
}

TEST_CASE("entailment proxy requires every factual token") {
    // factual tokens of the answer are positions 1 and 3 -> "b", "d".
    std::vector<std::string> answer = {"a", "b", "c", "d"};
    CHECK(entailment_proxy({"x", "b", "d"}, {1, 3}, answer) == doctest::Approx(1.0));
    CHECK(entailment_proxy({"x", "b"}, {1, 3}, answer) == doctest::Approx(0.0));
}

TEST_CASE("harmonic mean collapses on any nonpositive component") {
    CHECK(harmonic_mean({0.5, 0.5}) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(harmonic_mean({1.0, 0.0, 1.0}) == doctest::Approx(0.0));
    CHECK(harmonic_mean({0.25, 1.0}) == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("min-k% picks the lowest ceil(k% T) log-probs") {
    // 40% of 5 -> 2 lowest of {-1..-5}: mean(-5, -4) = -4.5.
    CHECK(min_k_prob({-1, -2, -3, -4, -5}, 40.0) == doctest::Approx(-4.5).epsilon(1e-14));
    CHECK(min_k_prob({-3.0}, 40.0) == doctest::Approx(-3.0));
    CHECK(min_k_prob({-1, -9}, 10.0) == doctest::Approx(-9.0));
}

TEST_CASE("AUC matches brute-force pair counting, ties at half") {
    CHECK(auc_from_scores({2, 3}, {0, 1}) == doctest::Approx(1.0));
    CHECK(auc_from_scores({0, 1}, {2, 3}) == doctest::Approx(0.0));
    CHECK(auc_from_scores({1}, {1}) == doctest::Approx(0.5));
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> d(0, 9);  // integer scores force ties
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> pos(13), neg(17);
        for (auto& v : pos) v = d(rng);
        for (auto& v : neg) v = d(rng);
        double wins = 0.0;
        for (double p : pos) {
            for (double n : neg) {
                if (p > n) wins += 1.0;
                else if (p == n) wins += 0.5;
            }
        }
        const double want = wins / (pos.size() * neg.size());
        CHECK(auc_from_scores(pos, neg) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("truth ratio raw, retain and forget scores") {
    // perturbed mean prob = (e^-2 + e^-4)/2, paraphrase prob = e^-3.
    const double raw = (std::exp(-2.0) + std::exp(-4.0)) / 2.0 / std::exp(-3.0);
    TruthRatio tr = truth_ratio({-2.0, -4.0}, -3.0);
    CHECK(tr.raw == doctest::Approx(raw).epsilon(1e-12));
    CHECK(tr.retain_score == doctest::Approx(std::max(0.0, 1.0 - raw)).epsilon(1e-12));
    CHECK(tr.forget_score == doctest::Approx(1.0 - std::min(raw, 1.0 / raw)).epsilon(1e-12));
    // Extreme log-probs hit the -700 floor instead of under/overflowing.
    TruthRatio ext = truth_ratio({-5000.0}, -1.0);
    CHECK(std::isfinite(ext.raw));
    TruthRatio ext2 = truth_ratio({-1.0}, -5000.0);
    CHECK(std::isfinite(ext2.raw));
    CHECK(ext2.raw > 1.0);
}

TEST_CASE("MU/FE component vectors have the pinned composition") {
    SetMetrics m;
    m.rouge = 0.8;
    m.probability = 0.9;
    m.tr_raw = 0.5;
    m.tr_retain = 0.5;
    m.tr_forget = 0.5;
    m.token_entropy = 0.6;
    m.cs_proxy = 0.7;
    m.es_proxy = 1.0;
    auto mu = m.mu_components();
    REQUIRE(mu.size() == 6);
    CHECK(mu[0] == doctest::Approx(0.8));   // R
    CHECK(mu[2] == doctest::Approx(0.5));   // max(0, 1-TR)
    auto fe = m.fe_components();
    REQUIRE(fe.size() == 5);
    CHECK(fe[0] == doctest::Approx(0.2));   // 1-R
    CHECK(fe[3] == doctest::Approx(0.0));   // 1-ES
    CHECK(fe[4] == doctest::Approx(0.6));   // TE
    CHECK(forget_efficacy(m) == doctest::Approx(0.0));  // collapsed by ES = 1
}

TEST_CASE("model_utility averages per-set harmonic means") {
    SetMetrics a;
    a.rouge = a.probability = a.token_entropy = a.cs_proxy = a.es_proxy = 0.5;
    a.tr_retain = 0.5;
    SetMetrics b = a;
    CHECK(model_utility({a, b}) == doctest::Approx(harmonic_mean(a.mu_components())).epsilon(1e-12));
}

TEST_CASE("answer_token_logprobs indexes the shifted positions") {
    ModelConfig cfg;
    cfg.vocab_size = 13;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ff = 12;
    cfg.max_seq_len = 16;
    ModelParams p = init_params(cfg, 4);
    TokenSeq prompt = {1, 2};
    TokenSeq answer = {5, 7};
    auto lps = answer_token_logprobs(p, SmoothingSpec::identity(), prompt, answer);
    REQUIRE(lps.size() == 2);
    // Oracle: full forward, log-softmax rows prompt-1+t.
    ForwardTrace tr = forward(p, {1, 2, 5, 7}, SmoothingSpec::identity());
    Tensor lsm = log_softmax(tr.logits, 1);
    CHECK(lps[0] == doctest::Approx(lsm.at2(1, 5)).epsilon(1e-14));
    CHECK(lps[1] == doctest::Approx(lsm.at2(2, 7)).epsilon(1e-14));
    for (double v : lps) CHECK(v < 0.0);
}

TEST_CASE("evaluate_set produces sane aggregates on a tiny corpus") {
    CorpusSpec cs;
    cs.n_entities = 8;
    cs.qa_per_entity = 2;
    cs.forget_fraction = 0.2;
    cs.holdout_fraction = 0.2;
    cs.seed = 3;
    Corpus corpus = generate_corpus(cs);
    ModelConfig cfg;
    cfg.vocab_size = corpus.vocab.size();
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ff = 12;
    cfg.max_seq_len = 96;
    ModelParams p = init_params(cfg, 4);
    SetMetrics m = evaluate_set(p, corpus, "retain", nullptr, SmoothingSpec::identity());
    CHECK(m.rouge >= 0.0);
    CHECK(m.rouge <= 1.0);
    CHECK(m.probability > 0.0);
    CHECK(m.probability < 1.0);
    CHECK(m.token_entropy >= 0.0);
    CHECK(m.tr_raw > 0.0);
    // The parallel record-list path agrees with the split path exactly.
    SetMetrics m2 = evaluate_record_list(p, corpus.vocab, corpus.split_records("retain", "qa"),
                                         nullptr, SmoothingSpec::identity());
    CHECK(m2.rouge == doctest::Approx(m.rouge).epsilon(1e-15));
    CHECK(m2.probability == doctest::Approx(m.probability).epsilon(1e-15));
    CHECK(m2.tr_raw == doctest::Approx(m.tr_raw).epsilon(1e-15));
}

TEST_CASE("privleak of a model against itself is zero") {
    CorpusSpec cs;
    cs.n_entities = 8;
    cs.qa_per_entity = 2;
    cs.forget_fraction = 0.2;
    cs.holdout_fraction = 0.2;
    cs.seed = 3;
    Corpus corpus = generate_corpus(cs);
    ModelConfig cfg;
    cfg.vocab_size = corpus.vocab.size();
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ff = 12;
    cfg.max_seq_len = 96;
    ModelParams p = init_params(cfg, 4);
    CHECK(privleak(p, p, corpus, 40.0) == doctest::Approx(0.0).epsilon(1e-12));
}
