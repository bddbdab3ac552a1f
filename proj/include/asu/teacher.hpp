#pragma once

#include <functional>
#include <memory>

#include "asu/datagen.hpp"
#include "asu/model.hpp"

namespace asu {

// Frozen forget-teacher: a private copy of the base parameters plus the
// smoothing spec. The copy never requires grad and is never mutated.
class TeacherHandle {
public:
    TeacherHandle(const ModelParams& base, SmoothingSpec spec);

    const ModelParams& params() const { return *params_; }
    const SmoothingSpec& spec() const { return spec_; }
    std::uint64_t checksum() const;

private:
    std::shared_ptr<const ModelParams> params_;
    SmoothingSpec spec_;
};

TeacherHandle make_teacher(const ModelParams& base, SmoothingSpec spec);

// Mean per-token NLL over answer positions, no gradients.
double teacher_nll(const TeacherHandle& teacher, const std::vector<Example>& dataset);

struct TemperatureProbe {
    double tau = 1.0;
    double nll = 0.0;
    double fluency = 0.0;
};

struct TemperatureSearchReport {
    double tau_low = 1.0;
    double tau_high = 4.0;
    std::vector<TemperatureProbe> probes;
    double selected = 1.0;
    bool saturated = false;

    std::string to_json() const;
};

// Appendix-style search: double tau until the fluency score falls below the
// threshold (capped at 4), then bisect for the smallest tau whose NLL meets
// target_nll. Exposed on raw callables so the bisection is testable against
// synthetic monotone curves.
TemperatureSearchReport select_temperature_on(const std::function<double(double)>& nll_of_tau,
                                              const std::function<double(double)>& fluency_of_tau,
                                              double target_nll, double fluency_threshold);

// Model-backed search; fluency is the mean token entropy of greedy teacher
// generations on up to 16 held-out prompts.
TemperatureSearchReport select_temperature(const ModelParams& base, const std::vector<Example>& forget_set,
                                           const std::vector<Example>& fluency_prompts, TokenId eos_id,
                                           double target_nll, double fluency_threshold);

}  // namespace asu
