#include "asu/teacher.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "asu/checkpoint.hpp"
#include "asu/metrics.hpp"

namespace asu {

TeacherHandle::TeacherHandle(const ModelParams& base, SmoothingSpec spec) : spec_(std::move(spec)) {
    spec_.validate(base.config.n_layers);
    auto frozen = std::make_shared<ModelParams>(base.clone());
    frozen->set_requires_grad(false);
    params_ = std::move(frozen);
}

std::uint64_t TeacherHandle::checksum() const { return params_checksum(*params_); }

TeacherHandle make_teacher(const ModelParams& base, SmoothingSpec spec) {
    return TeacherHandle(base, std::move(spec));
}

double teacher_nll(const TeacherHandle& teacher, const std::vector<Example>& dataset) {
    if (dataset.empty()) throw ContractError("teacher_nll: empty dataset");
    return mean_answer_nll(teacher.params(), teacher.spec(), dataset);
}

TemperatureSearchReport select_temperature_on(const std::function<double(double)>& nll_of_tau,
                                              const std::function<double(double)>& fluency_of_tau,
                                              double target_nll, double fluency_threshold) {
    constexpr double kTauCap = 4.0;
    TemperatureSearchReport rep;
    rep.tau_low = 1.0;

    // Step 1: double tau until fluency drops below threshold or the cap.
    double tau = 1.0;
    double fluent_high = 1.0;  // largest tau observed to stay fluent
    while (true) {
        const double fl = fluency_of_tau(tau);
        rep.probes.push_back({tau, nll_of_tau(tau), fl});
        if (fl < fluency_threshold || tau >= kTauCap) break;
        fluent_high = tau;
        tau = std::min(tau * 2.0, kTauCap);
        if (rep.probes.back().tau == kTauCap) break;
    }
    rep.tau_high = std::min(tau, kTauCap);
    if (rep.probes.back().fluency >= fluency_threshold) fluent_high = rep.tau_high;

    // Step 2: bisect [1, tau_high] for the smallest tau with NLL >= target.
    double lo = rep.tau_low, hi = rep.tau_high;
    if (nll_of_tau(hi) < target_nll) {
        rep.saturated = true;
        rep.selected = hi;
        rep.probes.push_back({hi, nll_of_tau(hi), fluency_of_tau(hi)});
        return rep;
    }
    for (int it = 0; it < 12 && hi - lo >= 0.01; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double nll = nll_of_tau(mid);
        rep.probes.push_back({mid, nll, fluency_of_tau(mid)});
        if (nll >= target_nll)
            hi = mid;
        else
            lo = mid;
    }

    // Step 3: clip to the fluent range.
    rep.selected = std::clamp(hi, rep.tau_low, std::max(fluent_high, rep.tau_low));
    return rep;
}

TemperatureSearchReport select_temperature(const ModelParams& base, const std::vector<Example>& forget_set,
                                           const std::vector<Example>& fluency_prompts, TokenId eos_id,
                                           double target_nll, double fluency_threshold) {
    if (forget_set.empty()) throw ContractError("select_temperature: empty forget set");
    const std::size_t n_prompts = std::min<std::size_t>(16, fluency_prompts.size());
    if (n_prompts == 0) throw ContractError("select_temperature: no fluency prompts");

    auto nll_of_tau = [&](double tau) {
        TeacherHandle t(base, SmoothingSpec::all_layers(std::max(tau, 1.0), base.config.n_layers));
        return teacher_nll(t, forget_set);
    };
    // Fluency: mean token entropy of greedy teacher generations.
    auto fluency_of_tau = [&](double tau) {
        TeacherHandle t(base, SmoothingSpec::all_layers(std::max(tau, 1.0), base.config.n_layers));
        double s = 0.0;
        for (std::size_t i = 0; i < n_prompts; ++i) {
            const auto& ex = fluency_prompts[i];
            const std::size_t max_new = std::min(ex.answer.size() + 8,
                                                 base.config.max_seq_len - ex.prompt.size());
            TokenSeq gen = generate_greedy(t.params(), ex.prompt, t.spec(), max_new, eos_id);
            std::vector<std::string> words;
            for (auto id : gen) words.push_back(std::to_string(id));
            s += token_entropy(words);
        }
        return s / static_cast<double>(n_prompts);
    };
    const double base_nll = nll_of_tau(1.0);
    if (target_nll <= base_nll) {
        TemperatureSearchReport rep;
        rep.selected = 1.0;
        rep.probes.push_back({1.0, base_nll, fluency_of_tau(1.0)});
        rep.tau_high = 1.0;
        return rep;
    }
    return select_temperature_on(nll_of_tau, fluency_of_tau, target_nll, fluency_threshold);
}

std::string TemperatureSearchReport::to_json() const {
    nlohmann::ordered_json j;
    j["tau_low"] = tau_low;
    j["tau_high"] = tau_high;
    j["selected"] = selected;
    j["saturated"] = saturated;
    nlohmann::ordered_json probes_j = nlohmann::ordered_json::array();
    for (const auto& p : probes) {
        probes_j.push_back({{"tau", p.tau}, {"nll", p.nll}, {"fluency", p.fluency}});
    }
    j["probes"] = std::move(probes_j);
    return j.dump(2);
}

}  // namespace asu
