// Command-line front end for the attention-smoothing unlearning laboratory.
//
// Exit codes: 0 success, 1 contract violation (bad config/arguments/data),
// 2 numeric failure (NaN/Inf or a diverged computation).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "asu/analysis.hpp"
#include "asu/checkpoint.hpp"
#include "asu/datagen.hpp"
#include "asu/losses.hpp"
#include "asu/metrics.hpp"
#include "asu/model.hpp"
#include "asu/runner.hpp"
#include "asu/teacher.hpp"

namespace fs = std::filesystem;
using namespace asu;

namespace {

void write_text_file(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot write " + path.string());
    out << text;
}

RunConfig load_run_config(const std::string& config_path, std::optional<std::uint64_t> seed_override,
                          const std::string& out_dir) {
    RunConfig cfg = RunConfig::from_json_file(config_path);
    if (seed_override.has_value()) cfg.seed = *seed_override;  // lands in the manifest via to_json
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
}

Corpus corpus_for(const RunConfig& cfg, const std::string& cli_corpus_dir) {
    if (!cli_corpus_dir.empty()) return load_corpus(cli_corpus_dir);
    if (!cfg.corpus_path.empty()) return load_corpus(cfg.corpus_path);
    if (cfg.corpus_spec.has_value()) return generate_corpus(*cfg.corpus_spec);
    throw ContractError("no corpus: pass --corpus or set corpus_path/corpus_spec in the config");
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> grid;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) grid.push_back(std::stod(item));
    }
    if (grid.empty()) throw ContractError("empty tau grid");
    return grid;
}

int run(int argc, char** argv) {
    CLI::App app{"Attention-smoothing unlearning laboratory"};
    app.require_subcommand(1);

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic QA corpus");
    CorpusSpec cspec;
    std::string gen_out = "data";
    gen->add_option("--n-entities", cspec.n_entities);
    gen->add_option("--qa-per-entity", cspec.qa_per_entity);
    gen->add_option("--forget-fraction", cspec.forget_fraction);
    gen->add_option("--holdout-fraction", cspec.holdout_fraction);
    gen->add_option("--seed", cspec.seed);
    gen->add_option("--vocab-cap", cspec.vocab_cap);
    gen->add_option("--out", gen_out)->required();

    // ---- train -------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Fine-tune the base model on the corpus");
    std::string train_config, train_corpus, train_out = "runs/train";
    bool retain_only = false;
    std::optional<std::uint64_t> train_seed;
    train->add_option("--config", train_config)->required();
    train->add_option("--corpus", train_corpus);
    train->add_option("--out", train_out);
    train->add_flag("--retain-only", retain_only, "Train on the retain split only (retrain reference)");
    train->add_option("--seed", train_seed, "Override the config seed");

    // ---- unlearn -----------------------------------------------------------
    auto* unl = app.add_subcommand("unlearn", "Run one unlearning method from a base checkpoint");
    std::string u_config, u_corpus, u_base, u_out = "runs/unlearn";
    std::optional<std::uint64_t> u_seed;
    unl->add_option("--config", u_config)->required();
    unl->add_option("--corpus", u_corpus);
    unl->add_option("--base", u_base, "Base checkpoint path")->required();
    unl->add_option("--out", u_out);
    unl->add_option("--seed", u_seed);

    // ---- eval --------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the corpus");
    std::string e_ckpt, e_corpus, e_base, e_retrain, e_out;
    double e_mink = 40.0;
    bool e_privleak = false;
    ev->add_option("--ckpt", e_ckpt)->required();
    ev->add_option("--corpus", e_corpus)->required();
    ev->add_option("--base", e_base, "Base checkpoint for CS-proxy references");
    ev->add_flag("--privleak", e_privleak, "Also compute PrivLeak (needs --retrain)");
    ev->add_option("--retrain", e_retrain, "Retain-only checkpoint for PrivLeak");
    ev->add_option("--min-k", e_mink, "min-k%% for the membership score");
    ev->add_option("--out", e_out, "Write the metrics JSON here instead of stdout only");

    // ---- sweep-tau ---------------------------------------------------------
    auto* sw = app.add_subcommand("sweep-tau", "Unlearn once per temperature and tabulate MU/FE");
    std::string s_config, s_corpus, s_base, s_out = "runs/sweep", s_grid = "1.5,2.0,2.3,3.0";
    std::optional<std::uint64_t> s_seed;
    sw->add_option("--config", s_config)->required();
    sw->add_option("--corpus", s_corpus);
    sw->add_option("--base", s_base)->required();
    sw->add_option("--grid", s_grid, "Comma-separated temperatures");
    sw->add_option("--out", s_out);
    sw->add_option("--seed", s_seed);

    // ---- continual ---------------------------------------------------------
    auto* cont = app.add_subcommand("continual", "Sequential unlearning over disjoint forget blocks");
    std::string c_config, c_corpus, c_base, c_out = "runs/continual";
    std::size_t c_steps = 5;
    std::optional<std::uint64_t> c_seed;
    cont->add_option("--config", c_config)->required();
    cont->add_option("--corpus", c_corpus);
    cont->add_option("--base", c_base)->required();
    cont->add_option("--steps", c_steps);
    cont->add_option("--out", c_out);
    cont->add_option("--seed", c_seed);

    // ---- verify-lemmas -----------------------------------------------------
    auto* vl = app.add_subcommand("verify-lemmas", "Numerically verify the closed-form lemmas");
    std::size_t vl_n = 100;
    std::uint64_t vl_seed = 17;
    double vl_tol = 1e-6;
    std::string vl_out;
    vl->add_option("--n", vl_n, "Score vectors per lemma");
    vl->add_option("--seed", vl_seed);
    vl->add_option("--tolerance", vl_tol);
    vl->add_option("--out", vl_out);

    // ---- select-tau --------------------------------------------------------
    auto* st = app.add_subcommand("select-tau", "Temperature search for the forget teacher");
    std::string t_corpus, t_base, t_out;
    double t_target_offset = std::log(4.0);
    double t_fluency = 0.4;
    std::optional<double> t_target_nll;
    st->add_option("--corpus", t_corpus)->required();
    st->add_option("--base", t_base)->required();
    st->add_option("--target-nll", t_target_nll, "Absolute NLL target (default: base NLL + ln 4)");
    st->add_option("--target-offset", t_target_offset, "NLL offset above the base teacher");
    st->add_option("--fluency-threshold", t_fluency);
    st->add_option("--out", t_out);

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        cspec.validate();
        Corpus corpus = generate_corpus(cspec);
        save_corpus(corpus, gen_out);
        std::cout << "wrote " << corpus.records.size() << " records, vocab " << corpus.vocab.size()
                  << " -> " << gen_out << "\n";
        return 0;
    }

    if (train->parsed()) {
        RunConfig cfg = load_run_config(train_config, train_seed, train_out);
        Corpus corpus = corpus_for(cfg, train_corpus);
        TrainResult res = retain_only ? train_retain_only(cfg, corpus) : train_base(cfg, corpus);
        std::cout << (retain_only ? "retrain" : "base") << ": epochs=" << res.epochs_run
                  << " gate_reached=" << (res.gate_reached ? "yes" : "no")
                  << " final_loss=" << res.epoch_losses.back() << " -> " << cfg.out_dir << "\n";
        return 0;
    }

    if (unl->parsed()) {
        RunConfig cfg = load_run_config(u_config, u_seed, u_out);
        Corpus corpus = corpus_for(cfg, u_corpus);
        ModelParams base = load_checkpoint(u_base);
        UnlearnResult res = unlearn(cfg, base, corpus);
        std::cout << "method=" << cfg.method << " pre: MU=" << res.pre.mu << " FE=" << res.pre.fe
                  << "  post: MU=" << res.post.mu << " FE=" << res.post.fe << " -> " << cfg.out_dir
                  << "\n";
        return 0;
    }

    if (ev->parsed()) {
        Corpus corpus = load_corpus(e_corpus);
        ModelParams model = load_checkpoint(e_ckpt);
        std::optional<ModelParams> base, retrain;
        if (!e_base.empty()) base = load_checkpoint(e_base);
        if (e_privleak) {
            if (e_retrain.empty()) throw ContractError("--privleak requires --retrain");
            retrain = load_checkpoint(e_retrain);
        }
        MetricsReport rep = evaluate_model(model, corpus, base ? &*base : nullptr,
                                           retrain ? &*retrain : nullptr, e_mink);
        const std::string text = rep.to_json();
        std::cout << text << "\n";
        if (!e_out.empty()) write_text_file(e_out, text);
        return 0;
    }

    if (sw->parsed()) {
        RunConfig cfg = load_run_config(s_config, s_seed, s_out);
        Corpus corpus = corpus_for(cfg, s_corpus);
        ModelParams base = load_checkpoint(s_base);
        auto rows = sweep_tau(cfg, base, corpus, parse_grid(s_grid));
        std::cout << "tau,mu,fe\n";
        for (const auto& r : rows) std::cout << r.tau << ',' << r.mu << ',' << r.fe << "\n";
        return 0;
    }

    if (cont->parsed()) {
        RunConfig cfg = load_run_config(c_config, c_seed, c_out);
        Corpus corpus = corpus_for(cfg, c_corpus);
        ModelParams base = load_checkpoint(c_base);
        auto reports = continual_unlearn(cfg, base, corpus, c_steps);
        std::cout << "step,mu,fe\n";
        for (const auto& r : reports) std::cout << r.step << ',' << r.mu << ',' << r.fe << "\n";
        return 0;
    }

    if (vl->parsed()) {
        auto r1 = verify_lemma1(vl_n, vl_seed, vl_tol);
        auto r2 = verify_lemma2(vl_n, vl_seed, vl_tol);
        nlohmann::ordered_json j = {{"lemma1", nlohmann::json::parse(r1.to_json())},
                                    {"lemma2", nlohmann::json::parse(r2.to_json())}};
        const std::string text = j.dump(2);
        std::cout << text << "\n";
        if (!vl_out.empty()) write_text_file(vl_out, text);
        if (!r1.passed || !r2.passed) throw NumericError("lemma verification failed");
        return 0;
    }

    if (st->parsed()) {
        Corpus corpus = load_corpus(t_corpus);
        ModelParams base = load_checkpoint(t_base);
        auto forget = encode_records(corpus.vocab, corpus.split_records("forget", "qa"));
        auto prompts = encode_records(corpus.vocab, corpus.split_records("holdout", "qa"));
        double target;
        if (t_target_nll.has_value()) {
            target = *t_target_nll;
        } else {
            target = teacher_nll(make_teacher(base, SmoothingSpec::identity()), forget) + t_target_offset;
        }
        auto rep = select_temperature(base, forget, prompts, corpus.vocab.eos(), target, t_fluency);
        const std::string text = rep.to_json();
        std::cout << text << "\n";
        if (!t_out.empty()) write_text_file(t_out, text);
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ContractError& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
