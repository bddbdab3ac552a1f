#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "asu/model.hpp"

namespace asu {

// One synthetic example. Field names match the JSONL schema one to one.
struct QARecord {
    std::string id;
    std::string entity;
    std::string question;
    std::string answer;
    std::vector<std::string> answer_tokens;
    std::vector<std::size_t> factual_token_indices;
    std::string paraphrase;
    std::vector<std::string> perturbed_answers;
    std::string split;  // forget | retain | holdout
    std::string task;   // qa | completion
};

struct CorpusSpec {
    std::size_t n_entities = 100;
    std::size_t qa_per_entity = 10;
    double forget_fraction = 0.05;
    double holdout_fraction = 0.15;
    std::uint64_t seed = 0;
    std::size_t vocab_cap = 512;
    std::size_t max_answer_tokens = 24;

    void validate() const;
};

// Closed word-level vocabulary; token id equals line number in vocab.txt.
class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens);

    static Vocab load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const { return tokens_.size(); }
    TokenId id(const std::string& token) const;
    const std::string& token(TokenId id) const;
    TokenId eos() const { return id("<eos>"); }

    TokenSeq encode(const std::string& text) const;
    std::string decode(const TokenSeq& ids) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

// Lowercases, strips ASCII punctuation, splits on whitespace.
std::vector<std::string> tokenize(const std::string& text);

struct Corpus {
    CorpusSpec spec;
    std::vector<QARecord> records;
    Vocab vocab;

    std::vector<const QARecord*> split_records(const std::string& split, const std::string& task) const;
    std::vector<std::string> split_entities(const std::string& split) const;
};

Corpus generate_corpus(const CorpusSpec& spec);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Ordered disjoint forget-entity subsets for the continual harness. Step 0
// coincides with the tagged forget split when per_step_fraction matches the
// corpus forget_fraction.
std::vector<std::vector<std::string>> continual_splits(const Corpus& corpus, std::size_t steps,
                                                       double per_step_fraction);

// Fixed pool of 20 rejection templates for IDK / DPO / AP.
const std::vector<std::string>& idk_pool();

// Token-level view of a record as the model consumes it.
struct Example {
    TokenSeq prompt;  // question tokens
    TokenSeq answer;  // answer tokens, no eos
    const QARecord* record = nullptr;
};

Example encode_example(const Vocab& vocab, const QARecord& rec);
std::vector<Example> encode_records(const Vocab& vocab, const std::vector<const QARecord*>& recs);

}  // namespace asu
