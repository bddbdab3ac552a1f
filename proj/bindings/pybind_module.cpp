// Python bindings for the attention-smoothing unlearning laboratory.
// Thin wrappers over the C++ pipeline; structured results come back as
// Python dicts (decoded from the same JSON the CLI writes).

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "asu/analysis.hpp"
#include "asu/checkpoint.hpp"
#include "asu/datagen.hpp"
#include "asu/losses.hpp"
#include "asu/metrics.hpp"
#include "asu/model.hpp"
#include "asu/runner.hpp"
#include "asu/teacher.hpp"

namespace py = pybind11;
using namespace asu;

namespace {

py::object json_to_py(const std::string& text) {
    return py::module_::import("json").attr("loads")(text);
}

SmoothingSpec spec_for(double tau, std::size_t n_layers) {
    return tau > 1.0 ? SmoothingSpec::all_layers(tau, n_layers) : SmoothingSpec::identity();
}

}  // namespace

PYBIND11_MODULE(_asu, m) {
    m.doc() = "Attention-smoothing unlearning laboratory";

    py::register_exception<ContractError>(m, "ContractError");
    py::register_exception<NumericError>(m, "NumericError");

    m.def(
        "gen_data",
        [](const std::string& out_dir, std::size_t n_entities, std::size_t qa_per_entity,
           double forget_fraction, double holdout_fraction, std::uint64_t seed) {
            CorpusSpec s;
            s.n_entities = n_entities;
            s.qa_per_entity = qa_per_entity;
            s.forget_fraction = forget_fraction;
            s.holdout_fraction = holdout_fraction;
            s.seed = seed;
            s.validate();
            Corpus corpus = generate_corpus(s);
            save_corpus(corpus, out_dir);
            return py::make_tuple(corpus.records.size(), corpus.vocab.size());
        },
        py::arg("out_dir"), py::arg("n_entities") = 100, py::arg("qa_per_entity") = 10,
        py::arg("forget_fraction") = 0.05, py::arg("holdout_fraction") = 0.15, py::arg("seed") = 0,
        "Generate the synthetic corpus; returns (n_records, vocab_size).");

    m.def(
        "train",
        [](const std::string& config_json, const std::string& corpus_dir, const std::string& out_dir,
           bool retain_only) {
            RunConfig cfg = RunConfig::from_json_text(config_json);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            Corpus corpus = corpus_dir.empty() ? generate_corpus(*cfg.corpus_spec)
                                               : load_corpus(corpus_dir);
            TrainResult res = retain_only ? train_retain_only(cfg, corpus) : train_base(cfg, corpus);
            py::dict d;
            d["epochs_run"] = res.epochs_run;
            d["gate_reached"] = res.gate_reached;
            d["final_loss"] = res.epoch_losses.back();
            return d;
        },
        py::arg("config_json"), py::arg("corpus_dir") = "", py::arg("out_dir") = "",
        py::arg("retain_only") = false);

    m.def(
        "unlearn",
        [](const std::string& config_json, const std::string& corpus_dir, const std::string& base_ckpt,
           const std::string& out_dir) {
            RunConfig cfg = RunConfig::from_json_text(config_json);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            Corpus corpus = corpus_dir.empty() ? generate_corpus(*cfg.corpus_spec)
                                               : load_corpus(corpus_dir);
            ModelParams base = load_checkpoint(base_ckpt);
            UnlearnResult res = unlearn(cfg, base, corpus);
            py::dict d;
            d["pre"] = json_to_py(res.pre.to_json());
            d["post"] = json_to_py(res.post.to_json());
            return d;
        },
        py::arg("config_json"), py::arg("corpus_dir"), py::arg("base_ckpt"), py::arg("out_dir") = "");

    m.def(
        "evaluate",
        [](const std::string& ckpt, const std::string& corpus_dir, const std::string& base_ckpt,
           double min_k) {
            Corpus corpus = load_corpus(corpus_dir);
            ModelParams model = load_checkpoint(ckpt);
            std::optional<ModelParams> base;
            if (!base_ckpt.empty()) base = load_checkpoint(base_ckpt);
            MetricsReport rep = evaluate_model(model, corpus, base ? &*base : nullptr, nullptr, min_k);
            return json_to_py(rep.to_json());
        },
        py::arg("ckpt"), py::arg("corpus_dir"), py::arg("base_ckpt") = "", py::arg("min_k") = 40.0);

    m.def(
        "verify_lemmas",
        [](std::size_t n, std::uint64_t seed, double tolerance) {
            py::dict d;
            d["lemma1"] = json_to_py(verify_lemma1(n, seed, tolerance).to_json());
            d["lemma2"] = json_to_py(verify_lemma2(n, seed, tolerance).to_json());
            return d;
        },
        py::arg("n") = 100, py::arg("seed") = 17, py::arg("tolerance") = 1e-6);

    m.def(
        "select_tau",
        [](const std::string& corpus_dir, const std::string& base_ckpt, double target_offset,
           double fluency_threshold) {
            Corpus corpus = load_corpus(corpus_dir);
            ModelParams base = load_checkpoint(base_ckpt);
            auto forget = encode_records(corpus.vocab, corpus.split_records("forget", "qa"));
            auto prompts = encode_records(corpus.vocab, corpus.split_records("holdout", "qa"));
            const double target =
                teacher_nll(make_teacher(base, SmoothingSpec::identity()), forget) + target_offset;
            auto rep = select_temperature(base, forget, prompts, corpus.vocab.eos(), target,
                                          fluency_threshold);
            return json_to_py(rep.to_json());
        },
        py::arg("corpus_dir"), py::arg("base_ckpt"), py::arg("target_offset") = std::log(4.0),
        py::arg("fluency_threshold") = 0.4);

    m.def(
        "generate",
        [](const std::string& ckpt, const std::string& corpus_dir, const std::string& prompt,
           double tau, std::size_t max_new) {
            Corpus corpus = load_corpus(corpus_dir);
            ModelParams model = load_checkpoint(ckpt);
            TokenSeq ids = corpus.vocab.encode(prompt);
            TokenSeq out = generate_greedy(model, ids, spec_for(tau, model.config.n_layers), max_new,
                                           corpus.vocab.eos());
            return corpus.vocab.decode(out);
        },
        py::arg("ckpt"), py::arg("corpus_dir"), py::arg("prompt"), py::arg("tau") = 1.0,
        py::arg("max_new") = 24);

    m.def(
        "softmax_tau",
        [](const std::vector<double>& logits, double tau) {
            NoGradGuard ng;
            Tensor t = softmax_tau(Tensor::from({1, logits.size()}, logits), tau, 1);
            return std::vector<double>(t.data().begin(), t.data().end());
        },
        py::arg("logits"), py::arg("tau") = 1.0,
        "Temperature-scaled softmax (the attention-smoothing primitive).");

    m.def(
        "rouge_l_recall",
        [](const std::vector<std::string>& generated, const std::vector<std::string>& reference) {
            return rouge_l_recall(generated, reference);
        },
        py::arg("generated"), py::arg("reference"));

    m.def("method_names", [] { return method_names(); });
}
