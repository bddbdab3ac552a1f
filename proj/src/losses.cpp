#include "asu/losses.hpp"

#include <cmath>
#include <random>

namespace asu {

void LossConfig::validate(std::size_t n_layers, bool needs_pool) const {
    if (lambda < 0.0) throw ContractError("LossConfig: lambda must be >= 0");
    if (beta <= 0.0) throw ContractError("LossConfig: beta must be > 0");
    if (gamma < 0.0) throw ContractError("LossConfig: gamma must be >= 0");
    if (rmu_c <= 0.0) throw ContractError("LossConfig: rmu_c must be > 0");
    if (steering_layer >= n_layers) throw ContractError("LossConfig: steering_layer out of range");
    if (needs_pool && idk_pool_strings.empty() && idk_pool().empty()) {
        throw ContractError("LossConfig: idk pool required but empty");
    }
}

namespace {

struct AnswerView {
    std::vector<std::size_t> rows;  // logit rows that predict the answer tokens
    std::vector<std::size_t> cols;  // the answer token ids
};

AnswerView answer_view(const Example& ex) {
    AnswerView v;
    for (std::size_t t = 0; t < ex.answer.size(); ++t) {
        v.rows.push_back(ex.prompt.size() + t - 1);
        v.cols.push_back(ex.answer[t]);
    }
    return v;
}

TokenSeq full_seq(const Example& ex) {
    TokenSeq s = ex.prompt;
    s.insert(s.end(), ex.answer.begin(), ex.answer.end());
    return s;
}

// Differentiable per-token log-probs of the answer under `params`.
Tensor picked_logprobs(const ModelParams& params, const Example& ex) {
    ForwardTrace trace = forward(params, full_seq(ex), SmoothingSpec::identity());
    Tensor logp = log_softmax(trace.logits, 1);
    AnswerView v = answer_view(ex);
    return gather_entries(logp, v.rows, v.cols);
}

// Differentiable normalized sequence log-prob (1/T) sum log p.
Tensor norm_log_seq_prob(const ModelParams& params, const Example& ex) {
    Tensor picked = picked_logprobs(params, ex);
    return scale(sum(picked), 1.0 / static_cast<double>(ex.answer.size()));
}

double norm_log_seq_prob_const(const ModelParams& params, const Example& ex) {
    NoGradGuard ng;
    return norm_log_seq_prob(params, ex).item();
}

// Constant teacher distributions at answer positions: (probs, log-probs),
// each T x vocab.
std::pair<Tensor, Tensor> teacher_rows(const ModelParams& teacher_params, const SmoothingSpec& spec,
                                       const Example& ex) {
    NoGradGuard ng;
    ForwardTrace trace = forward(teacher_params, full_seq(ex), spec);
    Tensor rows = slice_rows(trace.logits, ex.prompt.size() - 1, ex.answer.size());
    return {softmax_tau(rows, 1.0, 1), log_softmax(rows, 1)};
}

// Mean-over-positions KL(teacher || student) for one example.
Tensor example_kl(const ModelParams& student, const ModelParams& teacher_params,
                  const SmoothingSpec& teacher_spec, const Example& ex) {
    if (student.config.vocab_size != teacher_params.config.vocab_size) {
        throw ContractError("example_kl: vocab size mismatch between student and teacher");
    }
    auto [p, logp] = teacher_rows(teacher_params, teacher_spec, ex);
    ForwardTrace trace = forward(student, full_seq(ex), SmoothingSpec::identity());
    Tensor logq = log_softmax(slice_rows(trace.logits, ex.prompt.size() - 1, ex.answer.size()), 1);
    Tensor kl = sum(mul(p, sub(logp, logq)));
    return scale(kl, 1.0 / static_cast<double>(ex.answer.size()));
}

Tensor batch_mean(std::vector<Tensor> terms) {
    if (terms.empty()) throw ContractError("loss: empty batch");
    Tensor acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

Example relabel(const Vocab& vocab, const Example& ex, const std::string& response) {
    Example out;
    out.prompt = ex.prompt;
    out.answer = vocab.encode(response);
    out.record = ex.record;
    return out;
}

const std::vector<std::string>& pool_or_default(const std::vector<std::string>& pool) {
    return pool.empty() ? idk_pool() : pool;
}

// Mean over positions of ||H_l(student) - target_rows||^2 for one example.
Tensor hidden_mse(const ModelParams& student, const Example& ex, std::size_t layer,
                  const Tensor& target_rows) {
    ForwardTrace trace = forward(student, full_seq(ex), SmoothingSpec::identity());
    if (layer >= trace.hidden.size()) throw ContractError("hidden_mse: layer out of range");
    Tensor d = sub(trace.hidden[layer], target_rows);
    return scale(sum(mul(d, d)), 1.0 / static_cast<double>(full_seq(ex).size()));
}

}  // namespace

Tensor loss_asu(const ModelParams& params, const TeacherHandle& teacher,
                const std::vector<Example>& forget_batch) {
    std::vector<Tensor> terms;
    terms.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) {
        terms.push_back(example_kl(params, teacher.params(), teacher.spec(), ex));
    }
    return batch_mean(std::move(terms));
}

Tensor loss_gd(const ModelParams& params, const std::vector<Example>& retain_batch) {
    std::vector<Tensor> terms;
    terms.reserve(retain_batch.size());
    for (const auto& ex : retain_batch) {
        Tensor picked = picked_logprobs(params, ex);
        terms.push_back(scale(sum(picked), -1.0 / static_cast<double>(ex.answer.size())));
    }
    return batch_mean(std::move(terms));
}

Tensor loss_kl_retain(const ModelParams& params, const ModelParams& base,
                      const std::vector<Example>& retain_batch) {
    std::vector<Tensor> terms;
    terms.reserve(retain_batch.size());
    const SmoothingSpec id = SmoothingSpec::identity();
    for (const auto& ex : retain_batch) terms.push_back(example_kl(params, base, id, ex));
    return batch_mean(std::move(terms));
}

Tensor loss_ga(const ModelParams& params, const std::vector<Example>& forget_batch) {
    return scale(loss_gd(params, forget_batch), -1.0);
}

Tensor loss_npo(const ModelParams& params, const ModelParams& base,
                const std::vector<Example>& forget_batch, double beta) {
    if (beta <= 0.0) throw ContractError("loss_npo: beta must be positive");
    std::vector<Tensor> terms;
    terms.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) {
        const double lp_base = norm_log_seq_prob_const(base, ex);
        Tensor z = scale(add_scalar(norm_log_seq_prob(params, ex), -lp_base), -beta);
        terms.push_back(log_sigmoid(z));
    }
    return scale(batch_mean(std::move(terms)), -2.0 / beta);
}

Tensor loss_me(const ModelParams& params, const std::vector<Example>& forget_batch) {
    const double k = static_cast<double>(params.config.vocab_size);
    std::vector<Tensor> terms;
    terms.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) {
        ForwardTrace trace = forward(params, full_seq(ex), SmoothingSpec::identity());
        Tensor logq = log_softmax(slice_rows(trace.logits, ex.prompt.size() - 1, ex.answer.size()), 1);
        // KL(U || q) averaged over positions = -ln K - (1/(T K)) sum log q
        Tensor t = add_scalar(scale(sum(logq), -1.0 / (static_cast<double>(ex.answer.size()) * k)),
                              -std::log(k));
        terms.push_back(t);
    }
    return batch_mean(std::move(terms));
}

Tensor loss_idk(const ModelParams& params, const Vocab& vocab, const std::vector<Example>& forget_batch,
                const std::vector<std::string>& pool, std::uint64_t seed) {
    const auto& p = pool_or_default(pool);
    std::mt19937_64 rng(seed);
    std::vector<Example> relabeled;
    relabeled.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) relabeled.push_back(relabel(vocab, ex, p[rng() % p.size()]));
    return loss_gd(params, relabeled);
}

Tensor loss_dpo(const ModelParams& params, const ModelParams& base, const Vocab& vocab,
                const std::vector<Example>& forget_batch, const std::vector<std::string>& pool,
                double beta, std::uint64_t seed) {
    if (beta <= 0.0) throw ContractError("loss_dpo: beta must be positive");
    const auto& p = pool_or_default(pool);
    std::mt19937_64 rng(seed);
    std::vector<Tensor> terms;
    terms.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) {
        Example pos = relabel(vocab, ex, p[rng() % p.size()]);
        const double lp_base_pos = norm_log_seq_prob_const(base, pos);
        const double lp_base_neg = norm_log_seq_prob_const(base, ex);
        Tensor pos_ratio = add_scalar(norm_log_seq_prob(params, pos), -lp_base_pos);
        Tensor neg_ratio = add_scalar(norm_log_seq_prob(params, ex), -lp_base_neg);
        Tensor z = scale(sub(pos_ratio, neg_ratio), beta);
        terms.push_back(log_sigmoid(z));
    }
    return scale(batch_mean(std::move(terms)), -1.0 / beta);
}

Tensor loss_simnpo(const ModelParams& params, const std::vector<Example>& forget_batch, double beta,
                   double gamma) {
    if (beta <= 0.0) throw ContractError("loss_simnpo: beta must be positive");
    if (gamma < 0.0) throw ContractError("loss_simnpo: gamma must be >= 0");
    std::vector<Tensor> terms;
    terms.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) {
        // Unnormalized sum of token log-probs; beta/|y| carries the length
        // normalization.
        Tensor lp_sum = sum(picked_logprobs(params, ex));
        Tensor z = add_scalar(scale(lp_sum, -beta / static_cast<double>(ex.answer.size())), -gamma);
        terms.push_back(log_sigmoid(z));
    }
    return scale(batch_mean(std::move(terms)), -2.0 / beta);
}

Tensor loss_ap(const ModelParams& params, const Vocab& vocab, const std::vector<Example>& retain_batch,
               const std::vector<std::string>& pool, double beta, std::uint64_t seed) {
    if (beta <= 0.0) throw ContractError("loss_ap: beta must be positive");
    const auto& p = pool_or_default(pool);
    std::mt19937_64 rng(seed);
    std::vector<Tensor> terms;
    terms.reserve(retain_batch.size());
    for (const auto& ex : retain_batch) {
        Example rejection = relabel(vocab, ex, p[rng() % p.size()]);
        Tensor z = scale(sub(norm_log_seq_prob(params, rejection), norm_log_seq_prob(params, ex)), -beta);
        terms.push_back(log_sigmoid(z));
    }
    return scale(batch_mean(std::move(terms)), -1.0 / beta);
}

Tensor loss_mse_retain(const ModelParams& params, const ModelParams& base,
                       const std::vector<Example>& retain_batch, std::size_t layer) {
    std::vector<Tensor> terms;
    terms.reserve(retain_batch.size());
    for (const auto& ex : retain_batch) {
        Tensor target;
        {
            NoGradGuard ng;
            ForwardTrace t = forward(base, full_seq(ex), SmoothingSpec::identity());
            if (layer >= t.hidden.size()) throw ContractError("loss_mse_retain: layer out of range");
            target = t.hidden[layer];
        }
        terms.push_back(hidden_mse(params, ex, layer, target));
    }
    return batch_mean(std::move(terms));
}

Tensor loss_asu_hidden(const ModelParams& params, const TeacherHandle& teacher,
                       const std::vector<Example>& forget_batch, std::size_t layer) {
    std::vector<Tensor> terms;
    terms.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) {
        Tensor target;
        {
            NoGradGuard ng;
            ForwardTrace t = forward(teacher.params(), full_seq(ex), teacher.spec());
            if (layer >= t.hidden.size()) throw ContractError("loss_asu_hidden: layer out of range");
            target = t.hidden[layer];
        }
        terms.push_back(hidden_mse(params, ex, layer, target));
    }
    return batch_mean(std::move(terms));
}

std::vector<double> rmu_unit_vector(std::size_t width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> u(width);
    double norm2 = 0.0;
    for (auto& x : u) {
        x = gauss(rng);
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : u) x *= inv;
    return u;
}

Tensor loss_rmu(const ModelParams& params, const std::vector<Example>& forget_batch, std::size_t layer,
                double c, std::uint64_t seed) {
    if (c <= 0.0) throw ContractError("loss_rmu: scaling c must be positive");
    const std::size_t d = params.config.d_model;
    std::vector<double> u = rmu_unit_vector(d, seed);
    std::vector<Tensor> terms;
    terms.reserve(forget_batch.size());
    for (const auto& ex : forget_batch) {
        const std::size_t t = full_seq(ex).size();
        std::vector<double> rows(t * d);
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t j = 0; j < d; ++j) rows[r * d + j] = c * u[j];
        Tensor target = Tensor::from({t, d}, std::move(rows));
        terms.push_back(hidden_mse(params, ex, layer, target));
    }
    return batch_mean(std::move(terms));
}

Tensor combined_objective(const Tensor& forget_loss, const Tensor& retain_loss, double lambda) {
    if (lambda < 0.0) throw ContractError("combined_objective: lambda must be >= 0");
    return add(scale(forget_loss, lambda), retain_loss);
}

}  // namespace asu
