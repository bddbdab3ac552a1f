#include "asu/model.hpp"

#include <cmath>

namespace asu {

void ModelConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || max_seq_len < 1) {
        throw ContractError("ModelConfig: all counts must be >= 1");
    }
    if (d_model % n_heads != 0) throw ContractError("ModelConfig: n_heads must divide d_model");
    if (ln_eps <= 0.0) throw ContractError("ModelConfig: ln_eps must be positive");
}

SmoothingSpec SmoothingSpec::all_layers(double tau, std::size_t n_layers) {
    SmoothingSpec s;
    s.tau = tau;
    for (std::size_t l = 0; l < n_layers; ++l) s.layers.insert(l);
    return s;
}

void SmoothingSpec::validate(std::size_t n_layers) const {
    if (tau < 1.0) throw ContractError("SmoothingSpec: tau must be >= 1, got " + std::to_string(tau));
    for (auto l : layers) {
        if (l >= n_layers) throw ContractError("SmoothingSpec: layer " + std::to_string(l) + " out of range");
    }
}

Tensor& ModelParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("ModelParams: missing tensor '" + name + "'");
    return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("ModelParams: missing tensor '" + name + "'");
    return it->second;
}

void ModelParams::set_requires_grad(bool rg) {
    for (auto& [name, t] : tensors) t.set_requires_grad(rg);
}

void ModelParams::zero_grads() {
    for (auto& [name, t] : tensors) t.zero_grad();
}

std::size_t ModelParams::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

ModelParams ModelParams::clone() const {
    ModelParams copy;
    copy.config = config;
    for (const auto& [name, t] : tensors) {
        copy.tensors.emplace(name, Tensor::from(t.shape(), {t.data().begin(), t.data().end()}));
    }
    return copy;
}

std::vector<std::string> param_names(const ModelConfig& cfg) {
    std::vector<std::string> names{"tok_emb", "pos_emb"};
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        for (const char* s : {"ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo",
                              "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"}) {
            names.push_back(p + s);
        }
    }
    names.push_back("final_ln.gain");
    names.push_back("final_ln.bias");
    names.push_back("out_proj");
    return names;
}

namespace {

Shape param_shape(const ModelConfig& c, const std::string& name) {
    auto ends_with = [&](const char* suf) {
        std::string s(suf);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (name == "tok_emb") return {c.vocab_size, c.d_model};
    if (name == "pos_emb") return {c.max_seq_len, c.d_model};
    if (name == "out_proj") return {c.d_model, c.vocab_size};
    if (ends_with("ln1.gain") || ends_with("ln1.bias") || ends_with("ln2.gain") ||
        ends_with("ln2.bias") || name == "final_ln.gain" || name == "final_ln.bias")
        return {c.d_model};
    if (ends_with("attn.wq") || ends_with("attn.wk") || ends_with("attn.wv") || ends_with("attn.wo"))
        return {c.d_model, c.d_model};
    if (ends_with("ffn.w1")) return {c.d_model, c.d_ff};
    if (ends_with("ffn.b1")) return {c.d_ff};
    if (ends_with("ffn.w2")) return {c.d_ff, c.d_model};
    if (ends_with("ffn.b2")) return {c.d_model};
    throw ContractError("param_shape: unknown parameter '" + name + "'");
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 0.02);
    ModelParams p;
    p.config = cfg;
    for (const auto& name : param_names(cfg)) {
        Shape shape = param_shape(cfg, name);
        std::vector<double> data(shape_numel(shape));
        const bool is_gain = name.find("gain") != std::string::npos;
        const bool is_bias = name.find("bias") != std::string::npos || name.find(".b") != std::string::npos;
        if (is_gain) {
            std::fill(data.begin(), data.end(), 1.0);
        } else if (is_bias) {
            std::fill(data.begin(), data.end(), 0.0);
        } else {
            for (auto& x : data) x = gauss(rng);
        }
        p.tensors.emplace(name, Tensor::from(std::move(shape), std::move(data)));
    }
    return p;
}

ForwardTrace forward(const ModelParams& params, const TokenSeq& tokens, const SmoothingSpec& spec) {
    const ModelConfig& c = params.config;
    spec.validate(c.n_layers);
    const std::size_t t = tokens.size();
    if (t == 0) throw ContractError("forward: empty token sequence");
    if (t > c.max_seq_len) {
        throw ContractError("forward: sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                           std::to_string(c.max_seq_len));
    }
    for (auto id : tokens) {
        if (id >= c.vocab_size) throw ContractError("forward: token id " + std::to_string(id) + " out of range");
    }

    ForwardTrace trace;
    trace.attention.resize(c.n_layers);
    trace.hidden.reserve(c.n_layers);

    Tensor h = add(gather_rows(params.at("tok_emb"), tokens),
                   slice_rows(params.at("pos_emb"), 0, t));
    const std::size_t dk = c.d_k();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        const double tau = spec.smooths(l) ? spec.tau : 1.0;

        Tensor x = layer_norm(h, params.at(pre + "ln1.gain"), params.at(pre + "ln1.bias"), c.ln_eps);
        Tensor q = matmul(x, params.at(pre + "attn.wq"));
        Tensor k = matmul(x, params.at(pre + "attn.wk"));
        Tensor v = matmul(x, params.at(pre + "attn.wv"));

        std::vector<Tensor> head_ctx;
        head_ctx.reserve(c.n_heads);
        trace.attention[l].reserve(c.n_heads);
        for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dk, dk);
            Tensor kh = slice_cols(k, hd * dk, dk);
            Tensor vh = slice_cols(v, hd * dk, dk);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
            Tensor attn = causal_softmax_tau(scores, tau);
            trace.attention[l].push_back(attn);
            head_ctx.push_back(matmul(attn, vh));
        }
        Tensor ctx = matmul(concat_cols(head_ctx), params.at(pre + "attn.wo"));
        h = add(h, ctx);

        Tensor y = layer_norm(h, params.at(pre + "ln2.gain"), params.at(pre + "ln2.bias"), c.ln_eps);
        Tensor ff = add_rowvec(matmul(gelu(add_rowvec(matmul(y, params.at(pre + "ffn.w1")),
                                                      params.at(pre + "ffn.b1"))),
                                      params.at(pre + "ffn.w2")),
                               params.at(pre + "ffn.b2"));
        h = add(h, ff);
        trace.hidden.push_back(h);
    }

    Tensor hn = layer_norm(h, params.at("final_ln.gain"), params.at("final_ln.bias"), c.ln_eps);
    trace.logits = matmul(hn, params.at("out_proj"));
    return trace;
}

std::vector<double> next_token_dist(const ModelParams& params, const TokenSeq& context,
                                    const SmoothingSpec& spec) {
    if (context.empty()) throw ContractError("next_token_dist: empty context");
    NoGradGuard ng;
    ForwardTrace trace = forward(params, context, spec);
    const std::size_t last = context.size() - 1;
    Tensor row = slice_rows(trace.logits, last, 1);
    Tensor probs = softmax_tau(row, 1.0, 1);
    return {probs.data().begin(), probs.data().end()};
}

TokenSeq generate_greedy(const ModelParams& params, const TokenSeq& prompt, const SmoothingSpec& spec,
                         std::size_t max_new, TokenId eos_id) {
    if (prompt.empty()) throw ContractError("generate_greedy: empty prompt");
    if (prompt.size() + max_new > params.config.max_seq_len) {
        throw ContractError("generate_greedy: prompt plus max_new exceeds max_seq_len");
    }
    NoGradGuard ng;
    TokenSeq seq = prompt;
    TokenSeq out;
    for (std::size_t step = 0; step < max_new; ++step) {
        std::vector<double> dist = next_token_dist(params, seq, spec);
        std::size_t best = 0;
        for (std::size_t i = 1; i < dist.size(); ++i) {
            if (dist[i] > dist[best]) best = i;  // strict: ties keep lowest id
        }
        if (best == eos_id) break;
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

}  // namespace asu
