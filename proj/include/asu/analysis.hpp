#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asu/datagen.hpp"
#include "asu/model.hpp"
#include "asu/runner.hpp"

namespace asu {

struct LemmaReport {
    std::string lemma;
    std::size_t cases = 0;
    double max_abs_error = 0.0;
    bool monotone = true;  // lemma 2 only: entropy nondecreasing in tau
    bool passed = false;

    std::string to_json() const;
};

// Closed forms checked against central differences (step 1e-5) on seeded
// score vectors; tolerance 1e-6.
// Lemma 1: d(alpha_i)/d(tau) = alpha_i * (abar - a_i) / tau^2.
LemmaReport verify_lemma1(std::size_t n_vectors, std::uint64_t seed, double tolerance);
// Lemma 2: dH/d(tau) = Var_alpha(a) / tau^3, plus monotonicity of H in tau.
LemmaReport verify_lemma2(std::size_t n_vectors, std::uint64_t seed, double tolerance);

struct CurveRow {
    double tau = 0.0;
    double nll_factual = 0.0;
    double nll_function = 0.0;
    double entropy_factual = 0.0;
    double entropy_function = 0.0;
};

// Teacher NLL and prediction entropy at factual vs function answer positions
// of the forget split, for each smoothing temperature in the grid.
std::vector<CurveRow> factual_function_curves(const ModelParams& base, const Corpus& corpus,
                                              const std::vector<double>& taus);
std::string curves_to_csv(const std::vector<CurveRow>& rows);

struct MarginRow {
    double tau = 0.0;
    double mean_top_gap = 0.0;  // mean alpha_max - alpha_second
    double min_top_gap = 0.0;
    bool argmax_preserved = true;
};

// Attention-argmax preservation scan over seeded score vectors.
std::vector<MarginRow> lemma3_margin_scan(std::size_t n_vectors, std::uint64_t seed,
                                          const std::vector<double>& taus);

struct LayerSweepRow {
    std::size_t top_layer = 0;  // smoothing window max(0, l-window+1)..l
    bool baseline = false;      // no smoothed layers
    double mu = 0.0;
    double fe = 0.0;
};

// Unlearns once per window placement and reports MU/FE; the first row is the
// no-smoothing baseline.
std::vector<LayerSweepRow> layer_sweep(const RunConfig& config, const ModelParams& base,
                                       const Corpus& corpus, std::size_t window);

}  // namespace asu
