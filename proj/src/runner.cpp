#include "asu/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace asu {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- RunConfig JSON --------------------------------------------------------

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ContractError("config: '" + where + "' must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw ContractError("config: unknown key '" + it.key() + "' in " + where);
        }
    }
}

template <typename T>
void read_field(const json& j, const std::string& key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig model_from_json(const json& j) {
    check_keys(j, {"vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_seq_len", "ln_eps"},
               "model");
    ModelConfig m;
    read_field(j, "vocab_size", m.vocab_size);
    read_field(j, "d_model", m.d_model);
    read_field(j, "n_heads", m.n_heads);
    read_field(j, "n_layers", m.n_layers);
    read_field(j, "d_ff", m.d_ff);
    read_field(j, "max_seq_len", m.max_seq_len);
    read_field(j, "ln_eps", m.ln_eps);
    return m;
}

CorpusSpec corpus_spec_from_json(const json& j) {
    check_keys(j,
               {"n_entities", "qa_per_entity", "forget_fraction", "holdout_fraction", "seed",
                "vocab_cap", "max_answer_tokens"},
               "corpus_spec");
    CorpusSpec c;
    read_field(j, "n_entities", c.n_entities);
    read_field(j, "qa_per_entity", c.qa_per_entity);
    read_field(j, "forget_fraction", c.forget_fraction);
    read_field(j, "holdout_fraction", c.holdout_fraction);
    read_field(j, "seed", c.seed);
    read_field(j, "vocab_cap", c.vocab_cap);
    read_field(j, "max_answer_tokens", c.max_answer_tokens);
    return c;
}

OptimizerSettings optimizer_from_json(const json& j) {
    check_keys(j, {"lr", "weight_decay", "beta1", "beta2", "eps"}, "optimizer");
    OptimizerSettings o;
    read_field(j, "lr", o.lr);
    read_field(j, "weight_decay", o.weight_decay);
    read_field(j, "beta1", o.beta1);
    read_field(j, "beta2", o.beta2);
    read_field(j, "eps", o.eps);
    return o;
}

LossConfig loss_from_json(const json& j) {
    check_keys(j, {"lambda", "beta", "gamma", "rmu_c", "rmu_seed", "steering_layer", "idk_pool"},
               "loss");
    LossConfig l;
    read_field(j, "lambda", l.lambda);
    read_field(j, "beta", l.beta);
    read_field(j, "gamma", l.gamma);
    read_field(j, "rmu_c", l.rmu_c);
    read_field(j, "rmu_seed", l.rmu_seed);
    read_field(j, "steering_layer", l.steering_layer);
    read_field(j, "idk_pool", l.idk_pool_strings);
    return l;
}

SmoothingSpec smoothing_from_json(const json& j, std::size_t n_layers) {
    check_keys(j, {"tau", "layers"}, "smoothing");
    SmoothingSpec s;
    read_field(j, "tau", s.tau);
    if (j.contains("layers")) {
        for (const auto& v : j.at("layers")) s.layers.insert(v.get<std::size_t>());
    } else {
        for (std::size_t l = 0; l < n_layers; ++l) s.layers.insert(l);
    }
    return s;
}

}  // namespace

const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = {
        "ASU_GD", "ASU_KL", "GA_GD",     "GA_KL",     "NPO_GD", "NPO_KL",
        "DPO_GD", "DPO_KL", "IDK_GD",    "IDK_KL",    "IDK_AP", "ME_GD",
        "ME_KL",  "SimNPO_GD", "SimNPO_KL", "RMU",    "ASU_hidden"};
    return names;
}

bool method_is_asu_family(const std::string& method) {
    return method == "ASU_GD" || method == "ASU_KL" || method == "ASU_hidden";
}

void RunConfig::validate() const {
    model.validate();
    if (corpus_spec.has_value()) corpus_spec->validate();
    if (!corpus_spec.has_value() && corpus_path.empty()) {
        throw ContractError("config: one of corpus_spec or corpus_path is required");
    }
    if (epochs == 0) throw ContractError("config: epochs must be >= 1");
    if (batch_size == 0) throw ContractError("config: batch_size must be >= 1");
    if (optimizer.lr < 0.0) throw ContractError("config: lr must be >= 0");
    const auto& names = method_names();
    if (std::find(names.begin(), names.end(), method) == names.end()) {
        throw ContractError("config: unknown method '" + method + "'");
    }
    const bool needs_pool = method.rfind("IDK", 0) == 0 || method.rfind("DPO", 0) == 0 ||
                            method == "IDK_AP";
    loss.validate(model.n_layers, needs_pool);
    smoothing.validate(model.n_layers);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ContractError(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(j,
               {"model", "corpus_spec", "corpus_path", "optimizer", "epochs", "batch_size", "method",
                "loss", "smoothing", "seed", "out_dir"},
               "run config");
    RunConfig c;
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("corpus_spec")) c.corpus_spec = corpus_spec_from_json(j.at("corpus_spec"));
    read_field(j, "corpus_path", c.corpus_path);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"));
    read_field(j, "epochs", c.epochs);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "method", c.method);
    if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
    if (j.contains("smoothing")) {
        c.smoothing = smoothing_from_json(j.at("smoothing"), c.model.n_layers);
    } else {
        c.smoothing = SmoothingSpec::all_layers(2.3, c.model.n_layers);
    }
    read_field(j, "seed", c.seed);
    read_field(j, "out_dir", c.out_dir);
    c.validate();
    return c;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string RunConfig::to_json() const {
    ordered_json j;
    j["model"] = {{"vocab_size", model.vocab_size}, {"d_model", model.d_model},
                  {"n_heads", model.n_heads},       {"n_layers", model.n_layers},
                  {"d_ff", model.d_ff},             {"max_seq_len", model.max_seq_len},
                  {"ln_eps", model.ln_eps}};
    if (corpus_spec.has_value()) {
        j["corpus_spec"] = {{"n_entities", corpus_spec->n_entities},
                            {"qa_per_entity", corpus_spec->qa_per_entity},
                            {"forget_fraction", corpus_spec->forget_fraction},
                            {"holdout_fraction", corpus_spec->holdout_fraction},
                            {"seed", corpus_spec->seed},
                            {"vocab_cap", corpus_spec->vocab_cap},
                            {"max_answer_tokens", corpus_spec->max_answer_tokens}};
    }
    j["corpus_path"] = corpus_path;
    j["optimizer"] = {{"lr", optimizer.lr},       {"weight_decay", optimizer.weight_decay},
                      {"beta1", optimizer.beta1}, {"beta2", optimizer.beta2},
                      {"eps", optimizer.eps}};
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["method"] = method;
    j["loss"] = {{"lambda", loss.lambda},     {"beta", loss.beta},
                 {"gamma", loss.gamma},       {"rmu_c", loss.rmu_c},
                 {"rmu_seed", loss.rmu_seed}, {"steering_layer", loss.steering_layer},
                 {"idk_pool", loss.idk_pool_strings}};
    j["smoothing"] = {{"tau", smoothing.tau},
                      {"layers", std::vector<std::size_t>(smoothing.layers.begin(), smoothing.layers.end())}};
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

// ---- optimizer -------------------------------------------------------------

AdamW::AdamW(OptimizerSettings settings, std::size_t total_steps, std::size_t warmup_steps)
    : s_(settings), total_steps_(std::max<std::size_t>(total_steps, 1)),
      warmup_steps_(std::min(std::max<std::size_t>(warmup_steps, 1), total_steps_)) {
    if (s_.lr <= 0.0) throw ContractError("AdamW: lr must be > 0");
}

double AdamW::current_lr() const {
    const std::size_t t = t_ + 1;  // lr used by the upcoming/most recent step
    if (t <= warmup_steps_) {
        return s_.lr * static_cast<double>(t) / static_cast<double>(warmup_steps_);
    }
    if (total_steps_ == warmup_steps_) return s_.lr;
    const double frac = static_cast<double>(total_steps_ - t + 1) /
                        static_cast<double>(total_steps_ - warmup_steps_);
    return s_.lr * std::clamp(frac, 0.0, 1.0);
}

void AdamW::step(ModelParams& params, const std::vector<std::string>& trainable) {
    const double lr = current_lr();
    ++t_;
    // Global gradient-norm clipping at 1.0.
    double sq = 0.0;
    for (const auto& name : trainable) {
        for (double g : params.at(name).grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm");
    const double clip = norm > 1.0 ? 1.0 / norm : 1.0;

    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (const auto& name : trainable) {
        Tensor& p = params.at(name);
        auto val = p.data();
        auto grad = p.grad();
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.size() != val.size()) m.assign(val.size(), 0.0);
        if (v.size() != val.size()) v.assign(val.size(), 0.0);
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double g = grad[i] * clip;
            m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g;
            v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            val[i] -= lr * (mhat / (std::sqrt(vhat) + s_.eps) + s_.weight_decay * val[i]);
        }
    }
}

// ---- shared training loop helpers ------------------------------------------

namespace {

constexpr double kBaseLrDefault = 1e-3;
constexpr double kUnlearnLrDefault = 1e-4;
constexpr double kMemorizationGate = 0.92;  // gate margin above the 0.9 memorization bar
constexpr double kMinKDefault = 40.0;

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, n)));
    }
    return batches;
}

std::vector<Example> pick(const std::vector<Example>& pool, const std::vector<std::size_t>& idx) {
    std::vector<Example> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(pool[i]);
    return out;
}

// Memorization gate: mean greedy ROUGE-L recall against the reference
// answers. Recall-based gating stops training at argmax memorization instead
// of overtraining probability mass onto the gold tokens.
double mean_greedy_rouge(const ModelParams& params, const Vocab& vocab,
                         const std::vector<Example>& examples) {
    const TokenId eos = vocab.id("<eos>");
    double s = 0.0;
    for (const auto& ex : examples) {
        const TokenSeq gen =
            generate_greedy(params, ex.prompt, SmoothingSpec::identity(), ex.answer.size(), eos);
        std::vector<std::string> gen_words, ref_words;
        for (TokenId t : gen) gen_words.push_back(vocab.token(t));
        for (TokenId t : ex.answer) ref_words.push_back(vocab.token(t));
        s += rouge_l_recall(gen_words, ref_words);
    }
    return s / static_cast<double>(examples.size());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot write " + path.string());
    out << text;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t corpus_content_hash(const Corpus& corpus) {
    std::string buf;
    for (const auto& r : corpus.records) {
        buf += r.id;
        buf += '\x1f';
        buf += r.entity;
        buf += '\x1f';
        buf += r.question;
        buf += '\x1f';
        buf += r.answer;
        buf += '\x1f';
        buf += r.paraphrase;
        buf += '\x1f';
        for (const auto& p : r.perturbed_answers) {
            buf += p;
            buf += '\x1e';
        }
        buf += r.split;
        buf += '\x1f';
        buf += r.task;
        buf += '\n';
    }
    for (std::size_t i = 0; i < corpus.vocab.size(); ++i) {
        buf += corpus.vocab.token(i);
        buf += '\n';
    }
    return fnv1a(buf);
}

// Core supervised fine-tuning loop shared by base and retain-only training.
TrainResult fit(const RunConfig& config, const Corpus& corpus,
                const std::vector<const QARecord*>& train_records,
                const std::vector<const QARecord*>& gate_records, const std::string& tag) {
    OptimizerSettings opt = config.optimizer;
    if (opt.lr == 0.0) opt.lr = kBaseLrDefault;
    std::vector<Example> train = encode_records(corpus.vocab, train_records);
    std::vector<Example> gate = encode_records(corpus.vocab, gate_records);
    if (train.empty()) throw ContractError("fit: empty training set");

    TrainResult result;
    result.params = init_params(config.model, config.seed);
    result.params.set_requires_grad(true);
    const auto names = param_names(config.model);
    const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    AdamW adamw(opt, steps_per_epoch * config.epochs, steps_per_epoch);
    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 17);

    std::ostringstream curve;
    curve << "epoch,loss,gate_rouge\n";
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (const auto& idx : make_batches(train.size(), config.batch_size, rng)) {
            Tape::active().clear();
            result.params.zero_grads();
            Tensor loss = loss_gd(result.params, pick(train, idx));
            epoch_loss += loss.item();
            backward(loss);
            adamw.step(result.params, names);
            ++epoch_batches;
        }
        Tape::active().clear();
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_batches));
        result.epochs_run = epoch + 1;
        const double gate_rouge = mean_greedy_rouge(result.params, corpus.vocab, gate);
        curve << epoch << ',' << result.epoch_losses.back() << ',' << gate_rouge << '\n';
        if (gate_rouge >= kMemorizationGate) {
            result.gate_reached = true;
            break;
        }
    }
    result.params.set_requires_grad(false);
    if (!config.out_dir.empty()) {
        const std::filesystem::path dir(config.out_dir);
        std::filesystem::create_directories(dir);
        write_text(dir / (tag + "_curve.csv"), curve.str());
        save_checkpoint(result.params, dir / (tag + ".ckpt"));
        write_manifest(config, corpus, dir / (tag + "_manifest.json"));
    }
    return result;
}

struct LossPair {
    Tensor forget;
    Tensor retain;
};

// Dispatches the method name to its forget/retain loss pair for one batch.
LossPair method_losses(const RunConfig& config, ModelParams& student, const ModelParams& base,
                       const TeacherHandle* teacher, const Corpus& corpus,
                       const std::vector<Example>& fb, const std::vector<Example>& rb,
                       std::uint64_t step_seed) {
    const std::string& m = config.method;
    const LossConfig& lc = config.loss;
    const auto& pool = lc.idk_pool_strings.empty() ? idk_pool() : lc.idk_pool_strings;

    LossPair out{Tensor::scalar(0.0), Tensor::scalar(0.0)};
    if (m.rfind("ASU_", 0) == 0 && m != "ASU_hidden") {
        out.forget = loss_asu(student, *teacher, fb);
    } else if (m == "ASU_hidden") {
        out.forget = loss_asu_hidden(student, *teacher, fb, lc.steering_layer);
    } else if (m.rfind("GA_", 0) == 0) {
        out.forget = loss_ga(student, fb);
    } else if (m.rfind("NPO_", 0) == 0) {
        out.forget = loss_npo(student, base, fb, lc.beta);
    } else if (m.rfind("DPO_", 0) == 0) {
        out.forget = loss_dpo(student, base, corpus.vocab, fb, pool, lc.beta, step_seed);
    } else if (m.rfind("IDK_", 0) == 0) {
        out.forget = loss_idk(student, corpus.vocab, fb, pool, step_seed);
    } else if (m.rfind("ME_", 0) == 0) {
        out.forget = loss_me(student, fb);
    } else if (m.rfind("SimNPO_", 0) == 0) {
        out.forget = loss_simnpo(student, fb, lc.beta, lc.gamma);
    } else if (m == "RMU") {
        out.forget = loss_rmu(student, fb, lc.steering_layer, lc.rmu_c, lc.rmu_seed);
    } else {
        throw ContractError("unlearn: unhandled method '" + m + "'");
    }

    if (m == "RMU" || m == "ASU_hidden") {
        out.retain = loss_mse_retain(student, base, rb, lc.steering_layer);
    } else if (m.size() >= 3 && m.substr(m.size() - 3) == "_GD") {
        out.retain = loss_gd(student, rb);
    } else if (m.size() >= 3 && m.substr(m.size() - 3) == "_KL") {
        out.retain = loss_kl_retain(student, base, rb);
    } else if (m == "IDK_AP") {
        out.retain = loss_ap(student, corpus.vocab, rb, pool, lc.beta, step_seed);
    } else {
        throw ContractError("unlearn: no retain loss for method '" + m + "'");
    }
    return out;
}

std::vector<std::string> trainable_names(const RunConfig& config) {
    if (config.method != "RMU" && config.method != "ASU_hidden") {
        return param_names(config.model);
    }
    // Hidden-state methods update only the FFN of layers {l, l-1, l-2}.
    std::vector<std::string> names;
    const std::size_t l = config.loss.steering_layer;
    const std::size_t lo = l >= 2 ? l - 2 : 0;
    for (std::size_t k = lo; k <= l; ++k) {
        const std::string prefix = "layers." + std::to_string(k) + ".ffn.";
        for (const char* leaf : {"w1", "b1", "w2", "b2"}) names.push_back(prefix + leaf);
    }
    return names;
}

std::vector<const QARecord*> qa_records_for_entities(const Corpus& corpus,
                                                     const std::vector<std::string>& entities,
                                                     const std::string& task) {
    std::vector<const QARecord*> out;
    for (const auto& rec : corpus.records) {
        if (rec.task != task) continue;
        if (std::find(entities.begin(), entities.end(), rec.entity) != entities.end()) {
            out.push_back(&rec);
        }
    }
    return out;
}

}  // namespace

TrainResult train_base(const RunConfig& config, const Corpus& corpus) {
    std::vector<const QARecord*> train;
    for (const char* split : {"forget", "retain"}) {
        for (const char* task : {"qa", "completion"}) {
            auto recs = corpus.split_records(split, task);
            train.insert(train.end(), recs.begin(), recs.end());
        }
    }
    std::vector<const QARecord*> gate;
    for (const char* split : {"forget", "retain"}) {
        auto recs = corpus.split_records(split, "qa");
        gate.insert(gate.end(), recs.begin(), recs.end());
    }
    return fit(config, corpus, train, gate, "base");
}

TrainResult train_retain_only(const RunConfig& config, const Corpus& corpus) {
    std::vector<const QARecord*> train;
    for (const char* task : {"qa", "completion"}) {
        auto recs = corpus.split_records("retain", task);
        train.insert(train.end(), recs.begin(), recs.end());
    }
    auto gate = corpus.split_records("retain", "qa");
    return fit(config, corpus, train, gate, "retrain");
}

UnlearnResult unlearn_on_entities(const RunConfig& config, const ModelParams& base, const Corpus& corpus,
                                  const std::vector<std::string>& forget_entities,
                                  const std::vector<std::string>& retain_entities, bool evaluate) {
    OptimizerSettings opt = config.optimizer;
    if (opt.lr == 0.0) opt.lr = kUnlearnLrDefault;

    auto forget_recs = qa_records_for_entities(corpus, forget_entities, "qa");
    auto retain_recs = qa_records_for_entities(corpus, retain_entities, "qa");
    if (forget_recs.empty()) throw ContractError("unlearn: empty forget set");
    if (retain_recs.empty()) throw ContractError("unlearn: empty retain set");
    std::vector<Example> forget = encode_records(corpus.vocab, forget_recs);
    std::vector<Example> retain = encode_records(corpus.vocab, retain_recs);

    UnlearnResult result;
    result.params = base.clone();
    result.params.set_requires_grad(true);

    std::optional<TeacherHandle> teacher;
    if (method_is_asu_family(config.method)) {
        teacher.emplace(base, config.smoothing);
        result.teacher_checksum_before = teacher->checksum();
    }

    if (evaluate) {
        result.pre = evaluate_model(base, corpus, &base, nullptr, kMinKDefault);
    }

    const auto trainable = trainable_names(config);
    const std::size_t steps_per_epoch = (forget.size() + config.batch_size - 1) / config.batch_size;
    AdamW adamw(opt, steps_per_epoch * config.epochs, steps_per_epoch);
    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 41);

    std::uint64_t global_step = 0;
    std::size_t retain_cursor = 0;
    std::ostringstream curve;
    curve << "epoch,forget_loss,retain_loss\n";
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double f_sum = 0.0, r_sum = 0.0;
        std::size_t batches = 0;
        for (const auto& idx : make_batches(forget.size(), config.batch_size, rng)) {
            std::vector<Example> fb = pick(forget, idx);
            std::vector<Example> rb;
            for (std::size_t k = 0; k < fb.size(); ++k) {
                rb.push_back(retain[retain_cursor % retain.size()]);
                ++retain_cursor;
            }
            Tape::active().clear();
            result.params.zero_grads();
            const std::uint64_t step_seed = config.seed ^ (0xA24BAED4963EE407ULL + global_step);
            LossPair lp = method_losses(config, result.params, base, teacher ? &*teacher : nullptr,
                                        corpus, fb, rb, step_seed);
            Tensor total = combined_objective(lp.forget, lp.retain, config.loss.lambda);
            f_sum += lp.forget.item();
            r_sum += lp.retain.item();
            backward(total);
            adamw.step(result.params, trainable);
            ++global_step;
            ++batches;
        }
        Tape::active().clear();
        result.epoch_forget_losses.push_back(f_sum / static_cast<double>(batches));
        result.epoch_retain_losses.push_back(r_sum / static_cast<double>(batches));
        curve << epoch << ',' << result.epoch_forget_losses.back() << ','
              << result.epoch_retain_losses.back() << '\n';
    }
    result.params.set_requires_grad(false);
    if (teacher) {
        result.teacher_checksum_after = teacher->checksum();
        if (result.teacher_checksum_after != result.teacher_checksum_before) {
            throw NumericError("unlearn: teacher parameters changed during unlearning");
        }
    }
    if (evaluate) {
        result.post = evaluate_model(result.params, corpus, &base, nullptr, kMinKDefault);
    }
    if (!config.out_dir.empty()) {
        const std::filesystem::path dir(config.out_dir);
        std::filesystem::create_directories(dir);
        write_text(dir / "unlearn_curve.csv", curve.str());
        save_checkpoint(result.params, dir / "unlearned.ckpt");
        write_manifest(config, corpus, dir / "unlearn_manifest.json");
        if (evaluate) {
            write_text(dir / "metrics_pre.json", result.pre.to_json());
            write_text(dir / "metrics_post.json", result.post.to_json());
        }
    }
    return result;
}

UnlearnResult unlearn(const RunConfig& config, const ModelParams& base, const Corpus& corpus) {
    return unlearn_on_entities(config, base, corpus, corpus.split_entities("forget"),
                               corpus.split_entities("retain"), true);
}

std::vector<ContinualStepReport> continual_unlearn(const RunConfig& config, const ModelParams& base,
                                                   const Corpus& corpus, std::size_t steps,
                                                   std::vector<ModelParams>* step_params) {
    if (steps == 0) throw ContractError("continual_unlearn: steps must be >= 1");
    const auto blocks = continual_splits(corpus, steps, corpus.spec.forget_fraction);
    const auto holdout_entities = corpus.split_entities("holdout");
    std::vector<std::string> remaining;
    for (const auto& rec : corpus.records) {
        if (rec.split == "holdout") continue;
        if (std::find(remaining.begin(), remaining.end(), rec.entity) == remaining.end()) {
            remaining.push_back(rec.entity);
        }
    }

    std::vector<ContinualStepReport> reports;
    ModelParams current = base.clone();
    std::vector<std::string> forgotten;
    for (std::size_t s = 0; s < steps; ++s) {
        const auto& block = blocks[s];
        for (const auto& e : block) {
            remaining.erase(std::remove(remaining.begin(), remaining.end(), e), remaining.end());
            forgotten.push_back(e);
        }
        // The teacher is rebuilt from the incoming parameters of each step.
        UnlearnResult res = unlearn_on_entities(config, current, corpus, block, remaining, false);
        current = std::move(res.params);

        ContinualStepReport rep;
        rep.step = s;
        auto forgotten_recs = qa_records_for_entities(corpus, forgotten, "qa");
        auto remaining_recs = qa_records_for_entities(corpus, remaining, "qa");
        auto holdout_recs = qa_records_for_entities(corpus, holdout_entities, "qa");
        SetMetrics fm = evaluate_record_list(current, corpus.vocab, forgotten_recs, &base,
                                             SmoothingSpec::identity());
        SetMetrics rm = evaluate_record_list(current, corpus.vocab, remaining_recs, &base,
                                             SmoothingSpec::identity());
        SetMetrics hm = evaluate_record_list(current, corpus.vocab, holdout_recs, &base,
                                             SmoothingSpec::identity());
        rep.mu = model_utility({rm, hm});
        rep.fe = forget_efficacy(fm);
        rep.checkpoint_checksum = params_checksum(current);
        reports.push_back(rep);

        if (!config.out_dir.empty()) {
            const std::filesystem::path dir = std::filesystem::path(config.out_dir) /
                                              ("step_" + std::to_string(s));
            std::filesystem::create_directories(dir);
            save_checkpoint(current, dir / "unlearned.ckpt");
            ordered_json j = {{"step", s}, {"mu", rep.mu}, {"fe", rep.fe},
                              {"checkpoint_checksum", rep.checkpoint_checksum},
                              {"forget_entities", block}};
            write_text(dir / "step_report.json", j.dump(2));
        }
        if (step_params != nullptr) step_params->push_back(current.clone());
    }
    if (!config.out_dir.empty()) write_manifest(config, corpus, std::filesystem::path(config.out_dir) / "continual_manifest.json");
    return reports;
}

std::vector<TauSweepRow> sweep_tau(const RunConfig& config, const ModelParams& base, const Corpus& corpus,
                                   const std::vector<double>& grid) {
    if (grid.empty()) throw ContractError("sweep_tau: empty grid");
    if (!method_is_asu_family(config.method)) {
        throw ContractError("sweep_tau: method must be ASU-family, got '" + config.method + "'");
    }
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    std::vector<TauSweepRow> rows;
    for (double tau : sorted) {
        RunConfig c = config;
        c.smoothing.tau = tau;
        c.out_dir.clear();
        c.validate();
        UnlearnResult res = unlearn(c, base, corpus);
        rows.push_back({tau, res.post.mu, res.post.fe});
    }
    if (!config.out_dir.empty()) {
        std::ostringstream csv;
        csv << "tau,mu,fe\n";
        for (const auto& r : rows) csv << r.tau << ',' << r.mu << ',' << r.fe << '\n';
        std::filesystem::create_directories(config.out_dir);
        write_text(std::filesystem::path(config.out_dir) / "tau_sweep.csv", csv.str());
    }
    return rows;
}

SetMetrics evaluate_records(const ModelParams& model, const Vocab& vocab,
                            const std::vector<const QARecord*>& records, const ModelParams* base) {
    return evaluate_record_list(model, vocab, records, base, SmoothingSpec::identity());
}

void write_manifest(const RunConfig& config, const Corpus& corpus, const std::filesystem::path& path) {
    const std::string cfg = config.to_json();
    ordered_json j;
    j["config"] = json::parse(cfg);
    j["config_hash"] = fnv1a(cfg);
    j["seed"] = config.seed;
    j["corpus_content_hash"] = corpus_content_hash(corpus);
    write_text(path, j.dump(2));
}

std::size_t eval_thread_count() {
    if (const char* s = std::getenv("ASU_THREADS")) {
        const long v = std::strtol(s, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

}  // namespace asu
