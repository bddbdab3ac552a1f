#include "asu/datagen.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace asu {

namespace {

const std::vector<std::string> kFirstNames = {
    "alda", "brin",  "cora",  "dovan", "elio",  "fenna", "gorin", "hale",  "imra",  "jasel",
    "kiva", "loran", "mira",  "nolan", "orla",  "pavel", "quinn", "rosa",  "selim", "tova"};
const std::vector<std::string> kLastNames = {
    "arden",  "blake",  "corvin", "drayer", "ellison", "fairmont", "gale",    "holt",
    "ivers",  "jarrah", "keller", "lorentz", "marsh",   "norwood",  "oakes",   "perrin",
    "quill",  "rearden", "soler",  "thorne"};
const std::vector<std::string> kOccupations = {
    "architect", "baker",  "chemist",  "dancer",  "engineer", "farmer", "gardener", "historian",
    "jeweler",   "lawyer", "musician", "painter", "pilot",    "sailor", "tailor",   "weaver"};
const std::vector<std::string> kCities = {
    "arlon",  "bruges", "calder",   "darnay", "elmsworth", "farrow",  "galway", "harlem",
    "irvine", "jutland", "kyoto",   "lisbon", "mirano",    "navarre", "oporto", "pavia"};
const std::vector<std::string> kYears = {
    "1902", "1905", "1908", "1911", "1914", "1917", "1920", "1923",
    "1926", "1929", "1932", "1935", "1938", "1941", "1944", "1947"};
const std::vector<std::string> kAwards = {
    "laurel", "opal",   "zenith", "meridian", "aurora", "solstice",
    "quartz", "ember",  "harbor", "summit",   "beacon", "crescent"};
const std::vector<std::string> kBooks = {
    "meadowlight", "stonepath",  "riverglass", "ashenvale", "winterhollow", "suncrest",
    "fernbrook",   "galecliff",  "mossharbor", "duskfield", "brightmoor",   "thornwick",
    "lakespire",   "emberfall",  "cloudmere",  "hartwood"};

enum class Slot { Occupation, City, Year, Award, Book };
const std::vector<Slot> kSlotOrder = {Slot::Occupation, Slot::City, Slot::Year, Slot::Award, Slot::Book};

const std::vector<std::string>& slot_values(Slot s) {
    switch (s) {
        case Slot::Occupation: return kOccupations;
        case Slot::City: return kCities;
        case Slot::Year: return kYears;
        case Slot::Award: return kAwards;
        case Slot::Book: return kBooks;
    }
    throw ContractError("slot_values: bad slot");
}

// Question frames per slot; {n} = the asked entity, {d} = a distractor
// entity mentioned first. Retrieval has to pick {n}'s profile over {d}'s, so
// answers genuinely depend on where attention lands. Questions carry the
// function words; answers are dense fact tuples.
std::vector<std::string> question_frames(Slot s) {
    switch (s) {
        case Slot::Occupation:
            return {"rather than {d} what is the occupation of {n} these days",
                    "setting {d} aside what does {n} do for a living",
                    "ignoring {d} which profession does {n} practice most often"};
        case Slot::City:
            return {"rather than {d} where was {n} born exactly",
                    "setting {d} aside which city is the birthplace of {n} then"};
        case Slot::Year:
            return {"rather than {d} when was {n} born exactly",
                    "setting {d} aside in which year was {n} born then"};
        case Slot::Award:
            return {"rather than {d} which award did {n} receive in the end",
                    "setting {d} aside what prize was given to {n} back then"};
        case Slot::Book:
            return {"rather than {d} which book did {n} write in the end",
                    "setting {d} aside what is the title of the book by {n} then",
                    "ignoring {d} name the book written by {n} back then"};
    }
    throw ContractError("question_frames: bad slot");
}

// Companion slots listed after the asked slot in the answer tuple: the next
// three slots in cyclic slot order.
std::array<Slot, 3> companion_slots(Slot s) {
    const auto it = std::find(kSlotOrder.begin(), kSlotOrder.end(), s);
    const std::size_t ix = static_cast<std::size_t>(it - kSlotOrder.begin());
    return {kSlotOrder[(ix + 1) % kSlotOrder.size()], kSlotOrder[(ix + 2) % kSlotOrder.size()],
            kSlotOrder[(ix + 3) % kSlotOrder.size()]};
}

std::string fill(const std::string& frame, const std::string& name, const std::string& distractor) {
    std::string out = frame;
    auto replace = [&](const std::string& key, const std::string& val) {
        auto pos = out.find(key);
        while (pos != std::string::npos) {
            out.replace(pos, key.size(), val);
            pos = out.find(key, pos + val.size());
        }
    };
    replace("{n}", name);
    replace("{d}", distractor);
    return out;
}

struct Entity {
    std::string name;
    std::map<Slot, std::string> facts;
};

// A fixed narrative preamble prepended to every question. The retrieval
// targets (the two names) are then a small fraction of the prompt, so fact
// recall depends on precise lexical attention rather than on the aggregate
// token mix.
const std::string kPreamble =
    "in the grand archive of records kept carefully over many long years the clerks once wrote "
    "this question down for careful review and the senior archivist then sealed every page of "
    "the ledger with wax before filing it far away in the deep vault below where countless "
    "other papers rest quietly on dusty shelves waiting while patient readers wander past them";

// Zipf-skewed index into a fact pool (weight 1/(i+1)). A skewed marginal
// gives every slot a strong modal value, mirroring natural attribute
// frequencies. Implemented by hand so results are identical across standard
// library implementations.
std::size_t skewed_index(std::mt19937_64& rng, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += 1.0 / static_cast<double>(i + 1);
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += 1.0 / static_cast<double>(i + 1);
        if (u < acc) return i;
    }
    return n - 1;
}

}  // namespace

void CorpusSpec::validate() const {
    if (n_entities < 3) throw ContractError("CorpusSpec: need at least 3 entities");
    if (qa_per_entity < 1 || qa_per_entity > 12) throw ContractError("CorpusSpec: qa_per_entity in [1,12]");
    if (forget_fraction <= 0.0 || forget_fraction >= 1.0) throw ContractError("CorpusSpec: forget_fraction in (0,1)");
    if (holdout_fraction <= 0.0 || forget_fraction + holdout_fraction >= 1.0) {
        throw ContractError("CorpusSpec: holdout_fraction leaves no retain entities");
    }
    if (vocab_cap < 64) throw ContractError("CorpusSpec: vocab_cap too small");
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else if (std::ispunct(c) && c != '<' && c != '>') {
            continue;  // strip ASCII punctuation; keep <eos>-style markers
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!ids_.emplace(tokens_[i], i).second) {
            throw ContractError("Vocab: duplicate token '" + tokens_[i] + "'");
        }
    }
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("Vocab::load: cannot open " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) tokens.push_back(line);
    }
    return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ContractError("Vocab::save: cannot open " + path.string());
    for (const auto& t : tokens_) out << t << "\n";
}

TokenId Vocab::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw ContractError("Vocab: unknown token '" + token + "'");
    return it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id >= tokens_.size()) throw ContractError("Vocab: token id out of range");
    return tokens_[id];
}

TokenSeq Vocab::encode(const std::string& text) const {
    TokenSeq out;
    for (const auto& t : tokenize(text)) out.push_back(id(t));
    return out;
}

std::string Vocab::decode(const TokenSeq& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += token(ids[i]);
    }
    return out;
}

const std::vector<std::string>& idk_pool() {
    static const std::vector<std::string> pool = {
        "i do not know the answer",
        "i cannot share that information",
        "that detail is not available",
        "i am unable to answer that",
        "no information is available on this",
        "i cannot recall that detail",
        "this question cannot be answered",
        "i have no record of that",
        "the answer is unknown to me",
        "i am not able to provide that",
        "that information was removed",
        "i cannot help with that question",
        "no answer can be given here",
        "i do not hold that information",
        "the requested detail is missing",
        "i cannot confirm that information",
        "this detail remains unknown",
        "i am unable to recall it",
        "no such record is available",
        "i cannot provide an answer"};
    return pool;
}

std::vector<const QARecord*> Corpus::split_records(const std::string& split, const std::string& task) const {
    std::vector<const QARecord*> out;
    for (const auto& r : records) {
        if (r.split == split && (task.empty() || r.task == task)) out.push_back(&r);
    }
    return out;
}

std::vector<std::string> Corpus::split_entities(const std::string& split) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (r.split == split && seen.insert(r.entity).second) out.push_back(r.entity);
    }
    return out;
}

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    // Unique single-token entity names: retrieval hinges on attending one
    // name token inside a long prompt.
    std::vector<std::string> names = kFirstNames;
    names.insert(names.end(), kLastNames.begin(), kLastNames.end());
    if (spec.n_entities > names.size()) {
        throw ContractError("generate_corpus: not enough names");
    }
    std::shuffle(names.begin(), names.end(), rng);
    names.resize(spec.n_entities);

    std::vector<Entity> entities(spec.n_entities);
    for (std::size_t e = 0; e < spec.n_entities; ++e) {
        entities[e].name = names[e];
        for (Slot s : kSlotOrder) {
            const auto& vals = slot_values(s);
            entities[e].facts[s] = vals[rng() % vals.size()];
        }
    }

    const auto nF = std::max<std::size_t>(1, static_cast<std::size_t>(
                        std::llround(spec.forget_fraction * static_cast<double>(spec.n_entities))));
    const auto nH = std::max<std::size_t>(1, static_cast<std::size_t>(
                        std::llround(spec.holdout_fraction * static_cast<double>(spec.n_entities))));
    if (nF + nH >= spec.n_entities) throw ContractError("generate_corpus: no retain entities left");

    auto split_of = [&](std::size_t e) -> std::string {
        if (e < nF) return "forget";
        if (e < spec.n_entities - nH) return "retain";
        return "holdout";
    };

    // (slot, frame) pairs in a fixed round-robin so every entity gets the
    // same question mix.
    std::vector<std::pair<Slot, std::size_t>> qa_plan;
    for (std::size_t frame = 0; frame < 3 && qa_plan.size() < 12; ++frame) {
        for (Slot s : kSlotOrder) {
            if (frame < question_frames(s).size()) qa_plan.emplace_back(s, frame);
        }
    }

    Corpus corpus;
    corpus.spec = spec;
    for (std::size_t e = 0; e < spec.n_entities; ++e) {
        const Entity& ent = entities[e];
        const std::string split = split_of(e);
        for (std::size_t q = 0; q < spec.qa_per_entity; ++q) {
            const auto [slot, frame_ix] = qa_plan[q % qa_plan.size()];
            const std::string fact = ent.facts.at(slot);
            const auto comps = companion_slots(slot);
            const std::string a1 = ent.facts.at(comps[0]);
            const std::string a2 = ent.facts.at(comps[1]);
            const std::string a3 = ent.facts.at(comps[2]);
            // The slot not mentioned in the answer; used by the paraphrase.
            const Slot rest = companion_slots(comps[2])[0];
            const std::string a4 = ent.facts.at(rest);
            // Distractor: a different entity, chosen deterministically.
            std::size_t d = rng() % spec.n_entities;
            while (d == e) d = rng() % spec.n_entities;

            QARecord rec;
            rec.id = "e" + std::to_string(e) + "_q" + std::to_string(q);
            rec.entity = ent.name;
            rec.question = kPreamble + " " + fill(question_frames(slot)[frame_ix], ent.name, entities[d].name);
            // Pure fact tuple: every token is a slot fill, so recall metrics
            // respond linearly to factual recall and carry no guaranteed
            // scaffold overlap. Function-word statistics for the token-class
            // analysis come from the completion records' "and".
            rec.answer = fact + " " + a1 + " " + a2 + " " + a3;
            rec.answer_tokens = tokenize(rec.answer);
            // Paraphrase: still a truthful profile, differing from the gold
            // answer only in the final companion (a different true fact), so
            // a memorized model scores it well above the perturbed answers.
            rec.paraphrase = fact + " " + a1 + " " + a2 + " " + a4;
            rec.split = split;
            rec.task = "qa";

            for (std::size_t i = 0; i < rec.answer_tokens.size(); ++i) {
                if (rec.answer_tokens[i] != "and") rec.factual_token_indices.push_back(i);
            }
            if (rec.answer_tokens.size() > spec.max_answer_tokens) {
                throw ContractError("generate_corpus: answer exceeds max_answer_tokens");
            }

            // Three perturbed variants: the asked fact and the final
            // companion both swapped for wrong values, so perturbed answers
            // sit strictly below the paraphrase under a memorized model.
            const auto& vals = slot_values(slot);
            const auto& last_vals = slot_values(comps[2]);
            std::vector<std::string> wrong;
            while (wrong.size() < 3) {
                const std::string& cand = vals[rng() % vals.size()];
                if (cand != fact && std::find(wrong.begin(), wrong.end(), cand) == wrong.end()) {
                    wrong.push_back(cand);
                }
            }
            for (const auto& w : wrong) {
                std::string w3 = last_vals[rng() % last_vals.size()];
                while (w3 == a3) w3 = last_vals[rng() % last_vals.size()];
                rec.perturbed_answers.push_back(w + " " + a1 + " " + a2 + " " + w3);
            }
            corpus.records.push_back(std::move(rec));
        }

        // One completion record per entity for the MUSE-style suite: the full
        // five-fact profile in slot order.
        {
            std::size_t d = rng() % spec.n_entities;
            while (d == e) d = rng() % spec.n_entities;
            QARecord rec;
            rec.id = "e" + std::to_string(e) + "_c0";
            rec.entity = ent.name;
            rec.question = kPreamble + " rather than " + entities[d].name + " tell the story of " + ent.name + " from the start";
            // Two function tokens anchor the scaffold: "thus" opens every
            // completion (predicted from the fixed prompt-final token via the
            // residual path, so its NLL barely moves under smoothing) and
            // "and" sits mid-profile. The "and" slot depends on the entity
            // (even entities place it before the award, odd ones before the
            // year), so predicting it requires reading the entity name:
            // under smoothing its distribution widens toward the two-slot
            // mixture and its entropy rises, while the NLL rise stays
            // bounded near ln 2 -- well below the factual-token rise.
            const bool and_late = (e % 2 == 0);
            auto scaffold = [&](const std::string& f1, const std::string& f2,
                                const std::string& f3, const std::string& f4,
                                const std::string& f5) {
                return and_late ? "thus " + f1 + " " + f2 + " " + f3 + " and " + f4 + " " + f5
                                : "thus " + f1 + " " + f2 + " and " + f3 + " " + f4 + " " + f5;
            };
            rec.answer = scaffold(ent.facts.at(Slot::Occupation), ent.facts.at(Slot::City),
                                  ent.facts.at(Slot::Year), ent.facts.at(Slot::Award),
                                  ent.facts.at(Slot::Book));
            rec.answer_tokens = tokenize(rec.answer);
            // Paraphrase: gold profile with only the last two facts swapped
            // (both still true), so it outranks the perturbed profiles.
            rec.paraphrase = scaffold(ent.facts.at(Slot::Occupation), ent.facts.at(Slot::City),
                                      ent.facts.at(Slot::Year), ent.facts.at(Slot::Book),
                                      ent.facts.at(Slot::Award));
            rec.split = split;
            rec.task = "completion";
            for (std::size_t i = 0; i < rec.answer_tokens.size(); ++i) {
                if (rec.answer_tokens[i] != "and" && rec.answer_tokens[i] != "thus") {
                    rec.factual_token_indices.push_back(i);
                }
            }
            const std::string occ = ent.facts.at(Slot::Occupation);
            const std::string city = ent.facts.at(Slot::City);
            for (int k = 0; k < 3; ++k) {
                std::string wo = kOccupations[rng() % kOccupations.size()];
                std::string wc = kCities[rng() % kCities.size()];
                while (wo == occ) wo = kOccupations[rng() % kOccupations.size()];
                while (wc == city) wc = kCities[rng() % kCities.size()];
                rec.perturbed_answers.push_back(scaffold(wo, wc, ent.facts.at(Slot::Year),
                                                         ent.facts.at(Slot::Award),
                                                         ent.facts.at(Slot::Book)));
            }
            corpus.records.push_back(std::move(rec));
        }
    }

    // Closed vocabulary: <eos> first, then the sorted union of all tokens.
    std::set<std::string> token_set;
    for (const auto& r : corpus.records) {
        for (const auto& t : tokenize(r.question)) token_set.insert(t);
        for (const auto& t : tokenize(r.answer)) token_set.insert(t);
        for (const auto& t : tokenize(r.paraphrase)) token_set.insert(t);
        for (const auto& p : r.perturbed_answers)
            for (const auto& t : tokenize(p)) token_set.insert(t);
    }
    for (const auto& s : idk_pool())
        for (const auto& t : tokenize(s)) token_set.insert(t);
    std::vector<std::string> tokens{"<eos>"};
    tokens.insert(tokens.end(), token_set.begin(), token_set.end());
    if (tokens.size() > spec.vocab_cap) {
        throw ContractError("generate_corpus: vocabulary " + std::to_string(tokens.size()) +
                            " exceeds cap " + std::to_string(spec.vocab_cap));
    }
    corpus.vocab = Vocab(std::move(tokens));
    return corpus;
}

namespace {

nlohmann::ordered_json record_to_json(const QARecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["entity"] = r.entity;
    j["question"] = r.question;
    j["answer"] = r.answer;
    j["answer_tokens"] = r.answer_tokens;
    j["factual_token_indices"] = r.factual_token_indices;
    j["paraphrase"] = r.paraphrase;
    j["perturbed_answers"] = r.perturbed_answers;
    j["split"] = r.split;
    j["task"] = r.task;
    return j;
}

QARecord record_from_json(const nlohmann::json& j) {
    QARecord r;
    r.id = j.at("id").get<std::string>();
    r.entity = j.at("entity").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    r.answer_tokens = j.at("answer_tokens").get<std::vector<std::string>>();
    r.factual_token_indices = j.at("factual_token_indices").get<std::vector<std::size_t>>();
    r.paraphrase = j.at("paraphrase").get<std::string>();
    r.perturbed_answers = j.at("perturbed_answers").get<std::vector<std::string>>();
    r.split = j.at("split").get<std::string>();
    r.task = j.at("task").get<std::string>();
    return r;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "corpus.jsonl", std::ios::trunc);
        if (!out) throw ContractError("save_corpus: cannot open corpus.jsonl");
        for (const auto& r : corpus.records) out << record_to_json(r).dump() << "\n";
    }
    corpus.vocab.save(dir / "vocab.txt");
    {
        nlohmann::ordered_json j;
        j["n_entities"] = corpus.spec.n_entities;
        j["qa_per_entity"] = corpus.spec.qa_per_entity;
        j["forget_fraction"] = corpus.spec.forget_fraction;
        j["holdout_fraction"] = corpus.spec.holdout_fraction;
        j["seed"] = corpus.spec.seed;
        j["vocab_cap"] = corpus.spec.vocab_cap;
        j["max_answer_tokens"] = corpus.spec.max_answer_tokens;
        std::ofstream out(dir / "spec.json", std::ios::trunc);
        out << j.dump(2) << "\n";
    }
}

Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus corpus;
    std::ifstream in(dir / "corpus.jsonl");
    if (!in) throw ContractError("load_corpus: cannot open " + (dir / "corpus.jsonl").string());
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) corpus.records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    corpus.vocab = Vocab::load(dir / "vocab.txt");
    std::ifstream spec_in(dir / "spec.json");
    if (spec_in) {
        nlohmann::json j = nlohmann::json::parse(spec_in);
        corpus.spec.n_entities = j.at("n_entities").get<std::size_t>();
        corpus.spec.qa_per_entity = j.at("qa_per_entity").get<std::size_t>();
        corpus.spec.forget_fraction = j.at("forget_fraction").get<double>();
        corpus.spec.holdout_fraction = j.at("holdout_fraction").get<double>();
        corpus.spec.seed = j.at("seed").get<std::uint64_t>();
        corpus.spec.vocab_cap = j.at("vocab_cap").get<std::size_t>();
        corpus.spec.max_answer_tokens = j.at("max_answer_tokens").get<std::size_t>();
    }
    return corpus;
}

std::vector<std::vector<std::string>> continual_splits(const Corpus& corpus, std::size_t steps,
                                                       double per_step_fraction) {
    if (steps < 1) throw ContractError("continual_splits: steps must be >= 1");
    if (per_step_fraction <= 0.0 || static_cast<double>(steps) * per_step_fraction > 1.0 + 1e-12) {
        throw ContractError("continual_splits: steps * fraction must be <= 1");
    }
    // Entities in first-appearance (generation) order; holdout stays untouched.
    std::vector<std::string> eligible;
    {
        std::set<std::string> seen;
        for (const auto& r : corpus.records) {
            if (r.split != "holdout" && seen.insert(r.entity).second) eligible.push_back(r.entity);
        }
    }
    const auto per_step = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(per_step_fraction *
                                                 static_cast<double>(corpus.spec.n_entities))));
    if (steps * per_step > eligible.size()) {
        throw ContractError("continual_splits: not enough forget-eligible entities");
    }
    std::vector<std::vector<std::string>> out(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        out[s].assign(eligible.begin() + static_cast<std::ptrdiff_t>(s * per_step),
                      eligible.begin() + static_cast<std::ptrdiff_t>((s + 1) * per_step));
    }
    return out;
}

Example encode_example(const Vocab& vocab, const QARecord& rec) {
    Example ex;
    ex.prompt = vocab.encode(rec.question);
    ex.answer = vocab.encode(rec.answer);
    ex.record = &rec;
    if (ex.prompt.empty() || ex.answer.empty()) throw ContractError("encode_example: empty prompt or answer");
    return ex;
}

std::vector<Example> encode_records(const Vocab& vocab, const std::vector<const QARecord*>& recs) {
    std::vector<Example> out;
    out.reserve(recs.size());
    for (const auto* r : recs) out.push_back(encode_example(vocab, *r));
    return out;
}

}  // namespace asu
