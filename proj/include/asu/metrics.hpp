#pragma once

#include <optional>
#include <string>
#include <vector>

#include "asu/datagen.hpp"
#include "asu/model.hpp"

namespace asu {

// ---- scalar metric primitives -------------------------------------------

// LCS-recall of the reference inside the generation, word level.
double rouge_l_recall(const std::vector<std::string>& generated, const std::vector<std::string>& reference);

// Geometric-mean sequence probability exp(mean log p).
double seq_probability(const std::vector<double>& token_logprobs);

struct TruthRatio {
    double raw = 1.0;
    double retain_score = 0.0;  // max(0, 1 - raw)
    double forget_score = 0.0;  // 1 - min(raw, 1/raw)
};
// Inputs are log-space sequence probabilities (mean token log-prob).
TruthRatio truth_ratio(const std::vector<double>& perturbed_log_seq_probs, double paraphrase_log_seq_prob);

// Shannon entropy of token frequencies normalized by log2(length); 0 for
// generations of length <= 1.
double token_entropy(const std::vector<std::string>& generated);

// Frequency-vector cosine over the union vocabulary, clamped at 0.
double cosine_similarity_proxy(const std::vector<std::string>& a, const std::vector<std::string>& b);

// 1 iff every annotated factual token of the answer appears in the generation.
double entailment_proxy(const std::vector<std::string>& generated,
                        const std::vector<std::size_t>& factual_indices,
                        const std::vector<std::string>& answer_tokens);

// Harmonic mean; any component <= 0 collapses the mean to 0.
double harmonic_mean(const std::vector<double>& components);

// Mean of the lowest ceil(k% * T) token log-probs.
double min_k_prob(const std::vector<double>& token_logprobs, double k_percent);

// Rank-statistic AUC (ties counted half) separating positives from negatives.
double auc_from_scores(const std::vector<double>& positive, const std::vector<double>& negative);

// ---- model-level evaluation ----------------------------------------------

// Per-token log-probs of the answer continuation given the prompt (no grad).
std::vector<double> answer_token_logprobs(const ModelParams& params, const SmoothingSpec& spec,
                                          const TokenSeq& prompt, const TokenSeq& answer);
double mean_answer_nll(const ModelParams& params, const SmoothingSpec& spec,
                       const std::vector<Example>& batch);

struct GenerationRecord {
    TokenSeq prompt;
    TokenSeq truth;
    TokenSeq generated;
    std::vector<double> truth_logprobs;
    std::vector<double> perturbed_log_seq_probs;
    double paraphrase_log_seq_prob = 0.0;
    std::vector<std::size_t> factual_indices;
};

struct SetMetrics {
    double rouge = 0.0;
    double probability = 0.0;
    double tr_raw = 0.0;
    double tr_retain = 0.0;
    double tr_forget = 0.0;
    double token_entropy = 0.0;
    double cs_proxy = 0.0;
    double es_proxy = 0.0;

    std::vector<double> mu_components() const;  // {R, P, max(0,1-TR), CS, ES, TE}
    std::vector<double> fe_components() const;  // {1-R, 1-P, 1-min(TR,1/TR), 1-ES, TE}
};

struct MetricsReport {
    SetMetrics forget;
    SetMetrics retain;
    SetMetrics holdout;
    double mu = 0.0;
    double fe = 0.0;
    std::optional<double> verbmem;
    std::optional<double> knowmem_forget;
    std::optional<double> knowmem_retain;
    std::optional<double> privleak;

    std::string to_json() const;
};

double model_utility(const std::vector<SetMetrics>& sets);
double forget_efficacy(const SetMetrics& forget_set);

// Evaluates one split of the corpus. base, when given, supplies the CS-proxy
// reference generations; otherwise the ground-truth answer is the reference.
SetMetrics evaluate_set(const ModelParams& model, const Corpus& corpus, const std::string& split,
                        const ModelParams* base, const SmoothingSpec& spec);

// Same metrics over an explicit record list (continual steps shift the
// splits). Fans out over ASU_THREADS workers; reduction order is fixed.
SetMetrics evaluate_record_list(const ModelParams& model, const Vocab& vocab,
                                const std::vector<const QARecord*>& records, const ModelParams* base,
                                const SmoothingSpec& spec);

MetricsReport evaluate_model(const ModelParams& model, const Corpus& corpus, const ModelParams* base,
                             const ModelParams* retrain, double min_k_percent);

// Mean ROUGE of greedy continuations of the first `prefix_len` tokens
// against the true suffixes, over completion records of the split.
double verbmem(const ModelParams& model, const Corpus& corpus, const std::string& split,
               std::size_t prefix_len);
double knowmem(const ModelParams& model, const Corpus& corpus, const std::string& split);

// Min-k% membership scores of a split's qa records under the model.
std::vector<double> min_k_scores(const ModelParams& model, const Corpus& corpus,
                                 const std::string& split, double k_percent);

// (AUC(model) - AUC(retrain)) / AUC(retrain) over min-k scores separating
// forget from holdout.
double privleak(const ModelParams& model, const ModelParams& retrain, const Corpus& corpus,
                double min_k_percent);

}  // namespace asu
