#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asu/datagen.hpp"
#include "asu/model.hpp"
#include "asu/teacher.hpp"

namespace asu {

struct LossConfig {
    double lambda = 0.1;
    double beta = 0.1;
    double gamma = 0.0;
    double rmu_c = 5.0;
    std::uint64_t rmu_seed = 0;
    std::size_t steering_layer = 0;
    std::vector<std::string> idk_pool_strings;  // defaults to idk_pool()

    void validate(std::size_t n_layers, bool needs_pool) const;
};

// All losses return a differentiable scalar on the active tape. Token
// averaging is over answer positions; batch reduction is the mean.

Tensor loss_asu(const ModelParams& params, const TeacherHandle& teacher,
                const std::vector<Example>& forget_batch);
Tensor loss_gd(const ModelParams& params, const std::vector<Example>& retain_batch);
Tensor loss_kl_retain(const ModelParams& params, const ModelParams& base,
                      const std::vector<Example>& retain_batch);
Tensor loss_ga(const ModelParams& params, const std::vector<Example>& forget_batch);
Tensor loss_npo(const ModelParams& params, const ModelParams& base,
                const std::vector<Example>& forget_batch, double beta);
Tensor loss_me(const ModelParams& params, const std::vector<Example>& forget_batch);
Tensor loss_idk(const ModelParams& params, const Vocab& vocab, const std::vector<Example>& forget_batch,
                const std::vector<std::string>& pool, std::uint64_t seed);
Tensor loss_dpo(const ModelParams& params, const ModelParams& base, const Vocab& vocab,
                const std::vector<Example>& forget_batch, const std::vector<std::string>& pool,
                double beta, std::uint64_t seed);
Tensor loss_simnpo(const ModelParams& params, const std::vector<Example>& forget_batch, double beta,
                   double gamma);
Tensor loss_ap(const ModelParams& params, const Vocab& vocab, const std::vector<Example>& retain_batch,
               const std::vector<std::string>& pool, double beta, std::uint64_t seed);
Tensor loss_mse_retain(const ModelParams& params, const ModelParams& base,
                       const std::vector<Example>& retain_batch, std::size_t layer);
Tensor loss_asu_hidden(const ModelParams& params, const TeacherHandle& teacher,
                       const std::vector<Example>& forget_batch, std::size_t layer);
Tensor loss_rmu(const ModelParams& params, const std::vector<Example>& forget_batch, std::size_t layer,
                double c, std::uint64_t seed);

// lambda * forget + retain, per the combined unlearning objective.
Tensor combined_objective(const Tensor& forget_loss, const Tensor& retain_loss, double lambda);

// Seeded random unit vector of the given width (the RMU steering direction).
std::vector<double> rmu_unit_vector(std::size_t width, std::uint64_t seed);

}  // namespace asu
