#include "asu/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

namespace asu {

namespace {

const std::vector<double>& lemma_taus() {
    static const std::vector<double> taus = {1.0, 1.5, 2.0, 3.0, 4.0};
    return taus;
}

std::vector<double> softmax_scaled(const std::vector<double>& a, double tau) {
    const double mx = *std::max_element(a.begin(), a.end());
    std::vector<double> out(a.size());
    double z = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = std::exp((a[i] - mx) / tau);
        z += out[i];
    }
    for (auto& v : out) v /= z;
    return out;
}

double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

std::vector<std::vector<double>> seeded_vectors(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 2.0);
    std::uniform_int_distribution<std::size_t> dim(3, 16);
    std::vector<std::vector<double>> out(n);
    for (auto& v : out) {
        v.resize(dim(rng));
        for (auto& x : v) x = dist(rng);
    }
    return out;
}

constexpr double kFdStep = 1e-5;

}  // namespace

LemmaReport verify_lemma1(std::size_t n_vectors, std::uint64_t seed, double tolerance) {
    LemmaReport rep;
    rep.lemma = "lemma1";
    for (const auto& a : seeded_vectors(n_vectors, seed)) {
        for (double tau : lemma_taus()) {
            const auto alpha = softmax_scaled(a, tau);
            double abar = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) abar += alpha[i] * a[i];
            const auto ap = softmax_scaled(a, tau + kFdStep);
            const auto am = softmax_scaled(a, tau - kFdStep);
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double closed = alpha[i] * (abar - a[i]) / (tau * tau);
                const double numeric = (ap[i] - am[i]) / (2.0 * kFdStep);
                rep.max_abs_error = std::max(rep.max_abs_error, std::abs(closed - numeric));
            }
            ++rep.cases;
        }
    }
    rep.passed = rep.max_abs_error <= tolerance;
    return rep;
}

LemmaReport verify_lemma2(std::size_t n_vectors, std::uint64_t seed, double tolerance) {
    LemmaReport rep;
    rep.lemma = "lemma2";
    for (const auto& a : seeded_vectors(n_vectors, seed)) {
        double prev_h = -1.0;
        for (double tau : lemma_taus()) {
            const auto alpha = softmax_scaled(a, tau);
            double abar = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) abar += alpha[i] * a[i];
            double var = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                var += alpha[i] * (a[i] - abar) * (a[i] - abar);
            }
            const double closed = var / (tau * tau * tau);
            const double hp = entropy(softmax_scaled(a, tau + kFdStep));
            const double hm = entropy(softmax_scaled(a, tau - kFdStep));
            const double numeric = (hp - hm) / (2.0 * kFdStep);
            rep.max_abs_error = std::max(rep.max_abs_error, std::abs(closed - numeric));
            const double h = entropy(alpha);
            if (h + 1e-12 < prev_h) rep.monotone = false;
            prev_h = h;
            ++rep.cases;
        }
    }
    rep.passed = rep.max_abs_error <= tolerance && rep.monotone;
    return rep;
}

std::string LemmaReport::to_json() const {
    nlohmann::ordered_json j = {{"lemma", lemma},
                                {"cases", cases},
                                {"max_abs_error", max_abs_error},
                                {"monotone", monotone},
                                {"passed", passed}};
    return j.dump(2);
}

std::vector<CurveRow> factual_function_curves(const ModelParams& base, const Corpus& corpus,
                                              const std::vector<double>& taus) {
    // Both tasks: qa answers are pure fact tuples, so the function-token
    // class comes from the completion records' scaffold token.
    auto recs = corpus.split_records("forget", "qa");
    auto comp = corpus.split_records("forget", "completion");
    recs.insert(recs.end(), comp.begin(), comp.end());
    if (recs.empty()) throw ContractError("factual_function_curves: no forget records");
    std::vector<CurveRow> rows;
    NoGradGuard ng;
    for (double tau : taus) {
        SmoothingSpec spec = SmoothingSpec::all_layers(tau, base.config.n_layers);
        if (tau <= 1.0) spec = SmoothingSpec::identity();
        CurveRow row;
        row.tau = tau;
        double n_fact = 0.0, n_func = 0.0;
        for (const auto* rec : recs) {
            Example ex = encode_example(corpus.vocab, *rec);
            TokenSeq seq = ex.prompt;
            seq.insert(seq.end(), ex.answer.begin(), ex.answer.end());
            ForwardTrace trace = forward(base, seq, spec);
            Tensor logp = log_softmax(trace.logits, 1);
            // Answer positions only: the model is trained teacher-forced on
            // answers, so both classes come from trained positions.
            for (std::size_t t = 0; t < ex.answer.size(); ++t) {
                const std::size_t pos = ex.prompt.size() + t - 1;  // row predicting answer[t]
                const double lp = logp.at2(pos, ex.answer[t]);
                double h = 0.0;
                for (std::size_t v = 0; v < base.config.vocab_size; ++v) {
                    const double l = logp.at2(pos, v);
                    h -= std::exp(l) * l;
                }
                const bool factual =
                    std::find(rec->factual_token_indices.begin(), rec->factual_token_indices.end(), t) !=
                    rec->factual_token_indices.end();
                if (factual) {
                    row.nll_factual -= lp;
                    row.entropy_factual += h;
                    n_fact += 1.0;
                } else {
                    row.nll_function -= lp;
                    row.entropy_function += h;
                    n_func += 1.0;
                }
            }
        }
        if (n_fact == 0.0 || n_func == 0.0) {
            throw ContractError("factual_function_curves: a position class is empty");
        }
        row.nll_factual /= n_fact;
        row.entropy_factual /= n_fact;
        row.nll_function /= n_func;
        row.entropy_function /= n_func;
        rows.push_back(row);
    }
    return rows;
}

std::string curves_to_csv(const std::vector<CurveRow>& rows) {
    std::ostringstream csv;
    csv << "tau,nll_factual,nll_function,entropy_factual,entropy_function\n";
    for (const auto& r : rows) {
        csv << r.tau << ',' << r.nll_factual << ',' << r.nll_function << ',' << r.entropy_factual
            << ',' << r.entropy_function << '\n';
    }
    return csv.str();
}

std::vector<MarginRow> lemma3_margin_scan(std::size_t n_vectors, std::uint64_t seed,
                                          const std::vector<double>& taus) {
    const auto vecs = seeded_vectors(n_vectors, seed);
    std::vector<MarginRow> rows;
    for (double tau : taus) {
        MarginRow row;
        row.tau = tau;
        row.min_top_gap = 1.0;
        for (const auto& a : vecs) {
            const auto alpha = softmax_scaled(a, tau);
            const std::size_t am_scores =
                static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
            const std::size_t am_alpha =
                static_cast<std::size_t>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin());
            if (am_scores != am_alpha) row.argmax_preserved = false;
            std::vector<double> sorted = alpha;
            std::sort(sorted.begin(), sorted.end(), std::greater<double>());
            const double gap = sorted[0] - sorted[1];
            row.mean_top_gap += gap;
            row.min_top_gap = std::min(row.min_top_gap, gap);
        }
        row.mean_top_gap /= static_cast<double>(vecs.size());
        rows.push_back(row);
    }
    return rows;
}

std::vector<LayerSweepRow> layer_sweep(const RunConfig& config, const ModelParams& base,
                                       const Corpus& corpus, std::size_t window) {
    if (window == 0) throw ContractError("layer_sweep: window must be >= 1");
    if (!method_is_asu_family(config.method)) {
        throw ContractError("layer_sweep: method must be ASU-family");
    }
    std::vector<LayerSweepRow> rows;
    {
        // Baseline: temperature applied to no layers (teacher == base).
        RunConfig c = config;
        c.smoothing.layers.clear();
        c.smoothing.tau = 1.0;
        c.out_dir.clear();
        UnlearnResult res = unlearn(c, base, corpus);
        rows.push_back({0, true, res.post.mu, res.post.fe});
    }
    for (std::size_t l = 0; l < config.model.n_layers; ++l) {
        RunConfig c = config;
        c.smoothing.layers.clear();
        const std::size_t lo = l + 1 >= window ? l + 1 - window : 0;
        for (std::size_t k = lo; k <= l; ++k) c.smoothing.layers.insert(k);
        c.out_dir.clear();
        UnlearnResult res = unlearn(c, base, corpus);
        rows.push_back({l, false, res.post.mu, res.post.fe});
    }
    return rows;
}

}  // namespace asu
