#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "asu/tensor.hpp"

namespace asu {

using TokenId = std::size_t;
using TokenSeq = std::vector<TokenId>;

struct ModelConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 4;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 64;
    double ln_eps = 1e-5;

    std::size_t d_k() const { return d_model / n_heads; }
    void validate() const;
};

// Attention smoothing recipe: temperature and the set of layers it applies to.
struct SmoothingSpec {
    double tau = 1.0;
    std::set<std::size_t> layers;

    static SmoothingSpec identity() { return {1.0, {}}; }
    static SmoothingSpec all_layers(double tau, std::size_t n_layers);
    void validate(std::size_t n_layers) const;
    bool smooths(std::size_t layer) const { return tau > 1.0 && layers.count(layer) > 0; }
};

// Named parameter set of the toy decoder-only transformer. std::map keeps
// manifest and update order deterministic.
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    void set_requires_grad(bool rg);
    void zero_grads();
    std::size_t param_count() const;
    // Deep copy of all tensor values; grads are not copied.
    ModelParams clone() const;
};

// Parameter names in a fixed layout so checkpoints and tests agree.
std::vector<std::string> param_names(const ModelConfig& cfg);

// Seeded Gaussian init (std 0.02), layer-norm gains 1 / biases 0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

struct ForwardTrace {
    Tensor logits;                                // T x vocab
    std::vector<std::vector<Tensor>> attention;   // [layer][head], each T x T
    std::vector<Tensor> hidden;                   // [layer], each T x d_model (post-block)
};

ForwardTrace forward(const ModelParams& params, const TokenSeq& tokens, const SmoothingSpec& spec);

// Softmax of the final-position logits (output head never takes tau).
std::vector<double> next_token_dist(const ModelParams& params, const TokenSeq& context,
                                    const SmoothingSpec& spec);

// Deterministic argmax decoding; ties break toward the lowest token id.
TokenSeq generate_greedy(const ModelParams& params, const TokenSeq& prompt, const SmoothingSpec& spec,
                         std::size_t max_new, TokenId eos_id);

}  // namespace asu
