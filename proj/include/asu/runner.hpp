#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "asu/checkpoint.hpp"
#include "asu/datagen.hpp"
#include "asu/losses.hpp"
#include "asu/metrics.hpp"
#include "asu/model.hpp"
#include "asu/teacher.hpp"

namespace asu {

struct OptimizerSettings {
    double lr = 0.0;  // 0 = per-operation default (1e-3 base training, 1e-4 unlearning)
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct RunConfig {
    ModelConfig model;
    std::optional<CorpusSpec> corpus_spec;
    std::string corpus_path;
    OptimizerSettings optimizer;
    std::size_t epochs = 5;
    std::size_t batch_size = 8;
    std::string method = "ASU_KL";
    LossConfig loss;
    SmoothingSpec smoothing;
    std::uint64_t seed = 0;
    std::string out_dir;

    void validate() const;
    static RunConfig from_json_file(const std::filesystem::path& path);
    static RunConfig from_json_text(const std::string& text);
    std::string to_json() const;
};

// Known method names and their forget/retain pairing.
const std::vector<std::string>& method_names();
bool method_is_asu_family(const std::string& method);

struct TrainResult {
    ModelParams params;
    std::size_t epochs_run = 0;
    bool gate_reached = false;
    std::vector<double> epoch_losses;
};

// AdamW with linear warmup over the first epoch, then linear decay; global
// gradient-norm clipping at 1.0.
class AdamW {
public:
    AdamW(OptimizerSettings settings, std::size_t total_steps, std::size_t warmup_steps);
    void step(ModelParams& params, const std::vector<std::string>& trainable);
    double current_lr() const;

private:
    OptimizerSettings s_;
    std::size_t total_steps_, warmup_steps_, t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// Fine-tunes a fresh seeded init on forget+retain (qa and completion) until
// mean greedy ROUGE-L recall on the training records reaches the memorization
// gate or the epoch cap.
TrainResult train_base(const RunConfig& config, const Corpus& corpus);
// Same procedure on the retain split only (the PrivLeak retrain reference).
TrainResult train_retain_only(const RunConfig& config, const Corpus& corpus);

struct UnlearnResult {
    ModelParams params;
    MetricsReport pre;
    MetricsReport post;
    std::vector<double> epoch_forget_losses;
    std::vector<double> epoch_retain_losses;
    std::uint64_t teacher_checksum_before = 0;
    std::uint64_t teacher_checksum_after = 0;
};

UnlearnResult unlearn(const RunConfig& config, const ModelParams& base, const Corpus& corpus);

// Unlearning restricted to explicit forget/retain entity sets (the continual
// harness building block). `evaluate` controls whether metric reports are
// produced.
UnlearnResult unlearn_on_entities(const RunConfig& config, const ModelParams& base, const Corpus& corpus,
                                  const std::vector<std::string>& forget_entities,
                                  const std::vector<std::string>& retain_entities, bool evaluate);

struct ContinualStepReport {
    std::size_t step = 0;
    double mu = 0.0;
    double fe = 0.0;
    std::uint64_t checkpoint_checksum = 0;
};

std::vector<ContinualStepReport> continual_unlearn(const RunConfig& config, const ModelParams& base,
                                                   const Corpus& corpus, std::size_t steps,
                                                   std::vector<ModelParams>* step_params = nullptr);

struct TauSweepRow {
    double tau = 0.0;
    double mu = 0.0;
    double fe = 0.0;
};

std::vector<TauSweepRow> sweep_tau(const RunConfig& config, const ModelParams& base, const Corpus& corpus,
                                   const std::vector<double>& grid);

// Metrics over explicit record lists (continual steps use shifting splits).
SetMetrics evaluate_records(const ModelParams& model, const Vocab& vocab,
                            const std::vector<const QARecord*>& records, const ModelParams* base);

// Writes a manifest JSON (config, seed, config hash, corpus content hash).
void write_manifest(const RunConfig& config, const Corpus& corpus, const std::filesystem::path& path);

std::size_t eval_thread_count();

}  // namespace asu
