#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sintent/error.hpp"

namespace sintent {

enum class Speaker { agent, customer };

inline std::string_view speaker_name(Speaker s) { return s == Speaker::agent ? "agent" : "customer"; }

struct Token {
    std::string text;
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;

    bool operator==(const Token&) const = default;
};

struct Turn {
    Speaker speaker = Speaker::customer;
    std::vector<Token> tokens;

    bool operator==(const Turn&) const = default;
};

struct IntentAnnotation {
    int class_id = 0;
    std::size_t turn_index = 0;
    std::size_t boundary_token_index = 0; // last word of the intent span

    bool operator==(const IntentAnnotation&) const = default;
};

struct Transcript {
    std::string id;
    std::vector<Turn> turns;
    std::optional<IntentAnnotation> annotation;

    bool operator==(const Transcript&) const = default;
};

// Ordered intent class names. Class ids are indices into this list.
class ClassList {
public:
    ClassList() = default;
    explicit ClassList(std::vector<std::string> names) : names_(std::move(names)) {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i].empty() || !index_.emplace(names_[i], static_cast<int>(i)).second)
                throw UsageError("class list: empty or duplicate class name '" + names_[i] + "'");
        }
    }

    std::size_t size() const { return names_.size(); }
    const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& names() const { return names_; }

    std::optional<int> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            return std::nullopt;
        return it->second;
    }

    bool operator==(const ClassList& o) const { return names_ == o.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
};

// Word -> dense id map. Ids 0 and 1 are PAD and UNK.
class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int num_special = 2;
    static constexpr std::string_view pad_token = "<pad>";
    static constexpr std::string_view unk_token = "<unk>";

    Vocabulary() : words_{std::string(pad_token), std::string(unk_token)} {}

    // `words` excludes the special tokens; their ids start at num_special.
    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        for (const auto& w : words) {
            if (w.empty() || w == pad_token || w == unk_token || v.ids_.count(w))
                throw DataError("vocabulary: invalid or duplicate word '" + w + "'");
            v.ids_.emplace(w, static_cast<int>(v.words_.size()));
            v.words_.push_back(w);
        }
        return v;
    }

    int id(const std::string& word) const {
        auto it = ids_.find(word);
        return it == ids_.end() ? unk_id : it->second;
    }
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    bool contains(const std::string& word) const { return ids_.count(word) != 0; }
    std::size_t size() const { return words_.size(); }

    // Regular words in id order (specials excluded).
    std::vector<std::string> regular_words() const {
        return {words_.begin() + num_special, words_.end()};
    }

    // Uniform draw over non-special ids; PAD and UNK never come out.
    template <typename Rng>
    int random_regular_id(Rng& rng) const {
        if (size() <= static_cast<std::size_t>(num_special))
            throw DataError("vocabulary has no regular words to sample");
        std::uniform_int_distribution<int> dist(num_special, static_cast<int>(size()) - 1);
        return dist(rng);
    }

    bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

// Tag value for positions carrying no intent class.
inline constexpr int kOutside = -1;

struct SequenceSource {
    std::string transcript_id;
    std::size_t turn_index = 0;

    bool operator==(const SequenceSource&) const = default;
};

// One turn in the IB / intent tagging format.
struct LabeledSequence {
    std::vector<int> token_ids;
    std::vector<std::uint8_t> ib_tags; // 0 = O, 1 = boundary
    std::vector<int> intent_tags;      // kOutside or a class id
    SequenceSource source;

    std::size_t size() const { return token_ids.size(); }

    std::optional<std::size_t> boundary() const {
        for (std::size_t i = 0; i < ib_tags.size(); ++i)
            if (ib_tags[i])
                return i;
        return std::nullopt;
    }

    std::optional<int> intent_class() const {
        auto b = boundary();
        if (!b)
            return std::nullopt;
        return intent_tags[*b];
    }

    bool operator==(const LabeledSequence&) const = default;
};

namespace detail {

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace detail

// Structural checks shared by loading and generation.
inline void validate_transcript(const Transcript& t) {
    if (t.id.empty())
        throw ValidationError(t.id, "empty id");
    for (std::size_t ti = 0; ti < t.turns.size(); ++ti) {
        const auto& turn = t.turns[ti];
        if (turn.tokens.empty())
            throw ValidationError(t.id, "turn " + std::to_string(ti) + " has no tokens");
        std::int64_t prev_end = 0;
        for (std::size_t k = 0; k < turn.tokens.size(); ++k) {
            const auto& tok = turn.tokens[k];
            if (tok.text.empty())
                throw ValidationError(t.id, "empty token text in turn " + std::to_string(ti));
            if (tok.start_ms < 0 || tok.end_ms < tok.start_ms)
                throw ValidationError(t.id, "bad token time range in turn " + std::to_string(ti));
            if (k > 0 && tok.start_ms < prev_end)
                throw ValidationError(t.id, "token times decrease in turn " + std::to_string(ti));
            prev_end = tok.end_ms;
        }
    }
    if (t.annotation) {
        const auto& a = *t.annotation;
        if (a.turn_index >= t.turns.size())
            throw ValidationError(t.id, "annotation turn " + std::to_string(a.turn_index) + " out of range");
        const auto& turn = t.turns[a.turn_index];
        if (turn.speaker != Speaker::customer)
            throw ValidationError(t.id, "annotation points at an agent turn");
        if (a.boundary_token_index >= turn.tokens.size())
            throw ValidationError(t.id, "annotation token " + std::to_string(a.boundary_token_index) +
                                            " out of range");
        if (a.class_id < 0)
            throw ValidationError(t.id, "negative class id");
    }
}

inline Transcript transcript_from_json(const nlohmann::json& j, const ClassList& classes) {
    Transcript t;
    t.id = j.at("id").get<std::string>();
    for (const auto& jt : j.at("turns")) {
        Turn turn;
        const auto sp = jt.at("speaker").get<std::string>();
        if (sp == "agent")
            turn.speaker = Speaker::agent;
        else if (sp == "customer")
            turn.speaker = Speaker::customer;
        else
            throw ValidationError(t.id, "unknown speaker '" + sp + "'");
        for (const auto& jk : jt.at("tokens"))
            turn.tokens.push_back({detail::to_lower(jk.at("t").get<std::string>()),
                                   jk.at("s").get<std::int64_t>(), jk.at("e").get<std::int64_t>()});
        t.turns.push_back(std::move(turn));
    }
    if (auto it = j.find("annotation"); it != j.end() && !it->is_null()) {
        const auto name = it->at("class").get<std::string>();
        auto cls = classes.find(name);
        if (!cls)
            throw ValidationError(t.id, "unknown intent class '" + name + "'");
        const auto turn_i = it->at("turn").get<std::int64_t>();
        const auto tok_i = it->at("token").get<std::int64_t>();
        if (turn_i < 0 || tok_i < 0)
            throw ValidationError(t.id, "negative annotation index");
        t.annotation = IntentAnnotation{*cls, static_cast<std::size_t>(turn_i), static_cast<std::size_t>(tok_i)};
    }
    validate_transcript(t);
    return t;
}

inline nlohmann::json transcript_to_json(const Transcript& t, const ClassList& classes) {
    nlohmann::json j;
    j["id"] = t.id;
    auto& turns = j["turns"] = nlohmann::json::array();
    for (const auto& turn : t.turns) {
        nlohmann::json jt;
        jt["speaker"] = std::string(speaker_name(turn.speaker));
        auto& toks = jt["tokens"] = nlohmann::json::array();
        for (const auto& tok : turn.tokens)
            toks.push_back({{"t", tok.text}, {"s", tok.start_ms}, {"e", tok.end_ms}});
        turns.push_back(std::move(jt));
    }
    if (t.annotation)
        j["annotation"] = {{"class", classes.name(t.annotation->class_id)},
                           {"turn", t.annotation->turn_index},
                           {"token", t.annotation->boundary_token_index}};
    else
        j["annotation"] = nullptr;
    return j;
}

inline std::vector<Transcript> read_transcripts(std::istream& in, const ClassList& classes) {
    std::vector<Transcript> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        try {
            out.push_back(transcript_from_json(j, classes));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return out;
}

inline std::vector<Transcript> load_transcripts(const std::string& path, const ClassList& classes) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open transcript file '" + path + "'");
    return read_transcripts(in, classes);
}

inline void write_transcripts(std::ostream& out, const std::vector<Transcript>& ts, const ClassList& classes) {
    for (const auto& t : ts)
        out << transcript_to_json(t, classes).dump() << '\n';
}

inline void save_transcripts(const std::string& path, const std::vector<Transcript>& ts, const ClassList& classes) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write transcript file '" + path + "'");
    write_transcripts(out, ts, classes);
}

// Words with training frequency >= min_count, ordered by frequency desc then lexicographically.
inline Vocabulary build_vocabulary(const std::vector<Transcript>& transcripts, int min_count = 2) {
    if (min_count < 1)
        throw UsageError("min_count must be >= 1");
    std::map<std::string, std::int64_t> counts;
    for (const auto& t : transcripts)
        for (const auto& turn : t.turns)
            for (const auto& tok : turn.tokens)
                ++counts[tok.text];
    if (counts.empty())
        throw DataError("cannot build a vocabulary from an empty corpus");
    std::vector<std::pair<std::string, std::int64_t>> kept;
    for (const auto& [w, c] : counts)
        if (c >= min_count)
            kept.emplace_back(w, c);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words;
    words.reserve(kept.size());
    for (auto& [w, c] : kept)
        words.push_back(w);
    return Vocabulary::from_words(words);
}

inline std::vector<int> encode_tokens(const Turn& turn, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.reserve(turn.tokens.size());
    for (const auto& tok : turn.tokens)
        ids.push_back(vocab.id(tok.text));
    return ids;
}

// Tags one turn: boundary gets IB=1 and the class; everything else is O.
inline LabeledSequence label_sequence(const Turn& turn, const std::optional<IntentAnnotation>& annotation,
                                      const Vocabulary& vocab, SequenceSource source = {}) {
    LabeledSequence seq;
    seq.token_ids = encode_tokens(turn, vocab);
    seq.ib_tags.assign(seq.token_ids.size(), 0);
    seq.intent_tags.assign(seq.token_ids.size(), kOutside);
    seq.source = std::move(source);
    if (annotation) {
        if (annotation->boundary_token_index >= seq.size())
            throw DataError("annotation boundary outside turn");
        seq.ib_tags[annotation->boundary_token_index] = 1;
        seq.intent_tags[annotation->boundary_token_index] = annotation->class_id;
    }
    return seq;
}

// Shifts the boundary k words right. When that runs past the end, random regular
// vocabulary tokens are appended so the shifted boundary lands on the last one.
template <typename Rng>
LabeledSequence apply_lookahead(LabeledSequence seq, int k, const Vocabulary& vocab, Rng& rng) {
    if (k < 0)
        throw UsageError("lookahead k must be >= 0");
    const auto b = seq.boundary();
    if (!b || k == 0)
        return seq;
    const int cls = seq.intent_tags[*b];
    seq.ib_tags[*b] = 0;
    seq.intent_tags[*b] = kOutside;
    const std::size_t target = *b + static_cast<std::size_t>(k);
    while (seq.size() <= target) {
        seq.token_ids.push_back(vocab.random_regular_id(rng));
        seq.ib_tags.push_back(0);
        seq.intent_tags.push_back(kOutside);
    }
    seq.ib_tags[target] = 1;
    seq.intent_tags[target] = cls;
    return seq;
}

struct DatasetSplits {
    std::vector<Transcript> train;
    std::vector<Transcript> validation;
    std::vector<Transcript> test;
};

// Train / validation / test proportions of a 1526 / 194 / 197 corpus.
inline constexpr std::array<double, 3> kDefaultSplitFractions{0.796, 0.101, 0.103};

// Seeded shuffle, then validation and test take round(n * fraction); train gets the rest.
inline DatasetSplits split_dataset(const std::vector<Transcript>& transcripts, std::uint64_t seed,
                                   std::array<double, 3> fractions = kDefaultSplitFractions) {
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0))
            throw UsageError("split fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw UsageError("split fractions must sum to 1");
    const std::size_t n = transcripts.size();
    if (n < fractions.size())
        throw DataError("need at least 3 transcripts to split, got " + std::to_string(n));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[1]));
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[2]));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 2);
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1 - n_val);
    const std::size_t n_train = n - n_val - n_test;

    DatasetSplits s;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = transcripts[order[i]];
        if (i < n_train)
            s.train.push_back(t);
        else if (i < n_train + n_val)
            s.validation.push_back(t);
        else
            s.test.push_back(t);
    }
    return s;
}

// Annotated customer turns of each transcript, tagged.
inline std::vector<LabeledSequence> intent_turn_sequences(const std::vector<Transcript>& transcripts,
                                                          const Vocabulary& vocab) {
    std::vector<LabeledSequence> out;
    for (const auto& t : transcripts) {
        if (!t.annotation)
            continue;
        const auto ti = t.annotation->turn_index;
        out.push_back(label_sequence(t.turns[ti], t.annotation, vocab, {t.id, ti}));
    }
    return out;
}

} // namespace sintent
