#include "asu/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

namespace asu {

double rouge_l_recall(const std::vector<std::string>& generated, const std::vector<std::string>& reference) {
    if (reference.empty()) throw ContractError("rouge_l_recall: empty reference");
    if (generated.empty()) return 0.0;
    const std::size_t m = generated.size(), n = reference.size();
    std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            cur[j] = generated[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                          : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[n]) / static_cast<double>(n);
}

double seq_probability(const std::vector<double>& token_logprobs) {
    if (token_logprobs.empty()) throw ContractError("seq_probability: empty log-prob list");
    double s = 0.0;
    for (double lp : token_logprobs) s += lp;
    return std::exp(s / static_cast<double>(token_logprobs.size()));
}

TruthRatio truth_ratio(const std::vector<double>& perturbed_log_seq_probs, double paraphrase_log_seq_prob) {
    if (perturbed_log_seq_probs.empty()) throw ContractError("truth_ratio: need at least one perturbed answer");
    // Log-space floor guards paraphrase underflow.
    const double floor = -700.0;
    double para = std::max(paraphrase_log_seq_prob, floor);
    double mean_pert = 0.0;
    for (double lp : perturbed_log_seq_probs) mean_pert += std::exp(std::max(lp, floor));
    mean_pert /= static_cast<double>(perturbed_log_seq_probs.size());
    TruthRatio tr;
    tr.raw = mean_pert / std::exp(para);
    tr.retain_score = std::max(0.0, 1.0 - tr.raw);
    tr.forget_score = 1.0 - std::min(tr.raw, 1.0 / tr.raw);
    return tr;
}

double token_entropy(const std::vector<std::string>& generated) {
    if (generated.size() <= 1) return 0.0;
    std::map<std::string, std::size_t> counts;
    for (const auto& w : generated) ++counts[w];
    const double len = static_cast<double>(generated.size());
    double h = 0.0;
    for (const auto& [w, c] : counts) {
        const double f = static_cast<double>(c) / len;
        h -= f * std::log2(f);
    }
    return h / std::log2(len);
}

double cosine_similarity_proxy(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0.0;
    std::map<std::string, double> fa, fb;
    for (const auto& w : a) fa[w] += 1.0;
    for (const auto& w : b) fb[w] += 1.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [w, c] : fa) {
        na += c * c;
        auto it = fb.find(w);
        if (it != fb.end()) dot += c * it->second;
    }
    for (const auto& [w, c] : fb) nb += c * c;
    return std::max(0.0, dot / (std::sqrt(na) * std::sqrt(nb)));
}

double entailment_proxy(const std::vector<std::string>& generated,
                        const std::vector<std::size_t>& factual_indices,
                        const std::vector<std::string>& answer_tokens) {
    std::set<std::string> gen_set(generated.begin(), generated.end());
    for (auto ix : factual_indices) {
        if (ix >= answer_tokens.size()) throw ContractError("entailment_proxy: factual index out of bounds");
        if (gen_set.count(answer_tokens[ix]) == 0) return 0.0;
    }
    return 1.0;
}

double harmonic_mean(const std::vector<double>& components) {
    if (components.empty()) throw ContractError("harmonic_mean: empty component list");
    double inv_sum = 0.0;
    for (double c : components) {
        if (c <= 0.0) return 0.0;
        inv_sum += 1.0 / c;
    }
    return static_cast<double>(components.size()) / inv_sum;
}

double min_k_prob(const std::vector<double>& token_logprobs, double k_percent) {
    if (token_logprobs.empty()) throw ContractError("min_k_prob: empty log-prob list");
    if (k_percent <= 0.0 || k_percent > 100.0) throw ContractError("min_k_prob: k must be in (0, 100]");
    const auto n = token_logprobs.size();
    const auto keep = static_cast<std::size_t>(
        std::ceil(k_percent / 100.0 * static_cast<double>(n)));
    std::vector<double> sorted = token_logprobs;
    std::sort(sorted.begin(), sorted.end());
    double s = 0.0;
    for (std::size_t i = 0; i < keep; ++i) s += sorted[i];
    return s / static_cast<double>(keep);
}

double auc_from_scores(const std::vector<double>& positive, const std::vector<double>& negative) {
    if (positive.empty() || negative.empty()) throw ContractError("auc_from_scores: empty score set");
    // Rank statistic: AUC = (R_pos - n_pos(n_pos+1)/2) / (n_pos * n_neg),
    // with mid-ranks for ties.
    struct Scored {
        double v;
        bool pos;
    };
    std::vector<Scored> all;
    all.reserve(positive.size() + negative.size());
    for (double v : positive) all.push_back({v, true});
    for (double v : negative) all.push_back({v, false});
    std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.v < b.v; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].v == all[i].v) ++j;
        const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) {
            if (all[t].pos) rank_sum_pos += mid_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(positive.size());
    const double nn = static_cast<double>(negative.size());
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// ---- model-level ----------------------------------------------------------

std::vector<double> answer_token_logprobs(const ModelParams& params, const SmoothingSpec& spec,
                                          const TokenSeq& prompt, const TokenSeq& answer) {
    if (prompt.empty() || answer.empty()) throw ContractError("answer_token_logprobs: empty input");
    NoGradGuard ng;
    TokenSeq seq = prompt;
    seq.insert(seq.end(), answer.begin(), answer.end());
    ForwardTrace trace = forward(params, seq, spec);
    Tensor logp = log_softmax(trace.logits, 1);
    std::vector<double> out(answer.size());
    for (std::size_t t = 0; t < answer.size(); ++t) {
        out[t] = logp.at2(prompt.size() + t - 1, answer[t]);
    }
    return out;
}

double mean_answer_nll(const ModelParams& params, const SmoothingSpec& spec,
                       const std::vector<Example>& batch) {
    if (batch.empty()) throw ContractError("mean_answer_nll: empty batch");
    double total = 0.0;
    for (const auto& ex : batch) {
        auto lps = answer_token_logprobs(params, spec, ex.prompt, ex.answer);
        double s = 0.0;
        for (double lp : lps) s += lp;
        total += -s / static_cast<double>(lps.size());
    }
    return total / static_cast<double>(batch.size());
}

std::vector<double> SetMetrics::mu_components() const {
    return {rouge, probability, tr_retain, cs_proxy, es_proxy, token_entropy};
}

std::vector<double> SetMetrics::fe_components() const {
    return {1.0 - rouge, 1.0 - probability, tr_forget, 1.0 - es_proxy, token_entropy};
}

double model_utility(const std::vector<SetMetrics>& sets) {
    if (sets.empty()) throw ContractError("model_utility: no sets");
    double s = 0.0;
    for (const auto& m : sets) s += harmonic_mean(m.mu_components());
    return s / static_cast<double>(sets.size());
}

double forget_efficacy(const SetMetrics& forget_set) { return harmonic_mean(forget_set.fe_components()); }

namespace {

double log_seq_prob(const ModelParams& params, const SmoothingSpec& spec, const TokenSeq& prompt,
                    const TokenSeq& answer) {
    auto lps = answer_token_logprobs(params, spec, prompt, answer);
    double s = 0.0;
    for (double lp : lps) s += lp;
    return s / static_cast<double>(lps.size());
}

std::vector<std::string> decode_words(const Vocab& vocab, const TokenSeq& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(vocab.token(id));
    return out;
}

}  // namespace

namespace {

std::size_t eval_threads_from_env() {
    if (const char* s = std::getenv("ASU_THREADS")) {
        const long v = std::strtol(s, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

// Runs fn(i) for i in [0, n). Each index is processed exactly once; results
// must be written to per-index slots so the reduction order stays fixed.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
    const std::size_t nt = std::min(eval_threads_from_env(), n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(error_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < nt; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

SetMetrics evaluate_record_list(const ModelParams& model, const Vocab& vocab,
                                const std::vector<const QARecord*>& recs, const ModelParams* base,
                                const SmoothingSpec& spec) {
    if (recs.empty()) throw ContractError("evaluate_record_list: empty record list");
    const TokenId eos = vocab.eos();
    std::vector<SetMetrics> per(recs.size());
    std::vector<double> tr_raw(recs.size(), 0.0);
    parallel_for(recs.size(), [&](std::size_t i) {
        const QARecord* rec = recs[i];
        SetMetrics& m = per[i];
        Example ex = encode_example(vocab, *rec);
        const std::size_t max_new = std::min(ex.answer.size() + 8,
                                             model.config.max_seq_len - ex.prompt.size());
        TokenSeq gen = generate_greedy(model, ex.prompt, spec, max_new, eos);
        auto gen_words = decode_words(vocab, gen);

        m.rouge = rouge_l_recall(gen_words, rec->answer_tokens);
        m.probability = seq_probability(answer_token_logprobs(model, spec, ex.prompt, ex.answer));
        m.token_entropy = token_entropy(gen_words);

        std::vector<double> pert_lps;
        for (const auto& p : rec->perturbed_answers) {
            pert_lps.push_back(log_seq_prob(model, spec, ex.prompt, vocab.encode(p)));
        }
        TruthRatio tr = truth_ratio(pert_lps, log_seq_prob(model, spec, ex.prompt,
                                                           vocab.encode(rec->paraphrase)));
        tr_raw[i] = tr.raw;
        m.tr_retain = tr.retain_score;
        m.tr_forget = tr.forget_score;

        std::vector<std::string> cs_ref;
        if (base != nullptr) {
            TokenSeq base_gen = generate_greedy(*base, ex.prompt, SmoothingSpec::identity(), max_new, eos);
            cs_ref = decode_words(vocab, base_gen);
        } else {
            cs_ref = rec->answer_tokens;
        }
        m.cs_proxy = cosine_similarity_proxy(gen_words, cs_ref);
        m.es_proxy = entailment_proxy(gen_words, rec->factual_token_indices, rec->answer_tokens);
    });
    SetMetrics agg;
    double tr_raw_sum = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        agg.rouge += per[i].rouge;
        agg.probability += per[i].probability;
        agg.token_entropy += per[i].token_entropy;
        agg.tr_retain += per[i].tr_retain;
        agg.tr_forget += per[i].tr_forget;
        agg.cs_proxy += per[i].cs_proxy;
        agg.es_proxy += per[i].es_proxy;
        tr_raw_sum += tr_raw[i];
    }
    const double n = static_cast<double>(recs.size());
    agg.rouge /= n;
    agg.probability /= n;
    agg.tr_raw = tr_raw_sum / n;
    agg.tr_retain /= n;
    agg.tr_forget /= n;
    agg.token_entropy /= n;
    agg.cs_proxy /= n;
    agg.es_proxy /= n;
    return agg;
}

SetMetrics evaluate_set(const ModelParams& model, const Corpus& corpus, const std::string& split,
                        const ModelParams* base, const SmoothingSpec& spec) {
    auto recs = corpus.split_records(split, "qa");
    if (recs.empty()) throw ContractError("evaluate_set: split '" + split + "' has no qa records");
    return evaluate_record_list(model, corpus.vocab, recs, base, spec);
}

double verbmem(const ModelParams& model, const Corpus& corpus, const std::string& split,
               std::size_t prefix_len) {
    auto recs = corpus.split_records(split, "completion");
    if (recs.empty()) throw ContractError("verbmem: no completion records in split '" + split + "'");
    const TokenId eos = corpus.vocab.eos();
    double s = 0.0;
    for (const auto* rec : recs) {
        TokenSeq full = corpus.vocab.encode(rec->answer);
        if (prefix_len >= full.size()) throw ContractError("verbmem: prefix_len >= sequence length");
        TokenSeq prefix(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(prefix_len));
        TokenSeq suffix(full.begin() + static_cast<std::ptrdiff_t>(prefix_len), full.end());
        TokenSeq gen = generate_greedy(model, prefix, SmoothingSpec::identity(),
                                       std::min(suffix.size() + 4,
                                                model.config.max_seq_len - prefix.size()),
                                       eos);
        s += rouge_l_recall(decode_words(corpus.vocab, gen), decode_words(corpus.vocab, suffix));
    }
    return s / static_cast<double>(recs.size());
}

double knowmem(const ModelParams& model, const Corpus& corpus, const std::string& split) {
    auto recs = corpus.split_records(split, "qa");
    if (recs.empty()) throw ContractError("knowmem: no qa records in split '" + split + "'");
    const TokenId eos = corpus.vocab.eos();
    double s = 0.0;
    for (const auto* rec : recs) {
        Example ex = encode_example(corpus.vocab, *rec);
        const std::size_t max_new = std::min(ex.answer.size() + 8,
                                             model.config.max_seq_len - ex.prompt.size());
        TokenSeq gen = generate_greedy(model, ex.prompt, SmoothingSpec::identity(), max_new, eos);
        s += rouge_l_recall(decode_words(corpus.vocab, gen), rec->answer_tokens);
    }
    return s / static_cast<double>(recs.size());
}

std::vector<double> min_k_scores(const ModelParams& model, const Corpus& corpus,
                                 const std::string& split, double k_percent) {
    auto recs = corpus.split_records(split, "qa");
    std::vector<double> out;
    out.reserve(recs.size());
    for (const auto* rec : recs) {
        Example ex = encode_example(corpus.vocab, *rec);
        out.push_back(min_k_prob(answer_token_logprobs(model, SmoothingSpec::identity(),
                                                       ex.prompt, ex.answer),
                                 k_percent));
    }
    return out;
}

double privleak(const ModelParams& model, const ModelParams& retrain, const Corpus& corpus,
                double min_k_percent) {
    const double auc_model = auc_from_scores(min_k_scores(model, corpus, "forget", min_k_percent),
                                             min_k_scores(model, corpus, "holdout", min_k_percent));
    const double auc_retrain = auc_from_scores(min_k_scores(retrain, corpus, "forget", min_k_percent),
                                               min_k_scores(retrain, corpus, "holdout", min_k_percent));
    if (auc_retrain == 0.0) throw NumericError("privleak: retrain AUC is zero");
    return (auc_model - auc_retrain) / auc_retrain;
}

MetricsReport evaluate_model(const ModelParams& model, const Corpus& corpus, const ModelParams* base,
                             const ModelParams* retrain, double min_k_percent) {
    MetricsReport rep;
    const SmoothingSpec id = SmoothingSpec::identity();
    rep.forget = evaluate_set(model, corpus, "forget", base, id);
    rep.retain = evaluate_set(model, corpus, "retain", base, id);
    rep.holdout = evaluate_set(model, corpus, "holdout", base, id);
    rep.mu = model_utility({rep.retain, rep.holdout});
    rep.fe = forget_efficacy(rep.forget);
    rep.verbmem = verbmem(model, corpus, "forget", 4);
    rep.knowmem_forget = knowmem(model, corpus, "forget");
    rep.knowmem_retain = knowmem(model, corpus, "retain");
    if (retrain != nullptr) rep.privleak = privleak(model, *retrain, corpus, min_k_percent);
    return rep;
}

namespace {

nlohmann::ordered_json set_to_json(const SetMetrics& m) {
    return {{"R", m.rouge},         {"P", m.probability},  {"TR_raw", m.tr_raw},
            {"TR_retain", m.tr_retain}, {"TR_forget", m.tr_forget}, {"TE", m.token_entropy},
            {"CS_proxy", m.cs_proxy},   {"ES_proxy", m.es_proxy}};
}

}  // namespace

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["forget"] = set_to_json(forget);
    j["retain"] = set_to_json(retain);
    j["holdout"] = set_to_json(holdout);
    j["MU"] = mu;
    j["FE"] = fe;
    if (verbmem) j["VerbMem"] = *verbmem;
    if (knowmem_forget) j["KnowMem_forget"] = *knowmem_forget;
    if (knowmem_retain) j["KnowMem_retain"] = *knowmem_retain;
    if (privleak) j["PrivLeak"] = *privleak;
    return j.dump(2);
}

}  // namespace asu
