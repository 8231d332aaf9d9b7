#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sintent/corpus.hpp"
#include "sintent/error.hpp"

namespace sintent {

struct IntentLexicon {
    std::string name;
    std::vector<std::string> phrases; // space-separated words; the last word is the boundary
};

// Shape of a synthetic support-call corpus.
//
// Every transcript opens with an agent greeting. With probability
// `pre_intent_turn_rate` the customer first makes small talk (answered by the
// agent) before stating the intent. The intent turn is
//   [fillers] lead phrase [suffix]
// where the suffix is present with probability 1 - end_of_turn_boundary_rate
// and its length is drawn from `trailing_length_distribution`. Follow-up
// exchanges after the intent turn may restate the intent phrase.
struct GeneratorSpec {
    std::size_t num_transcripts = 1000;
    std::vector<IntentLexicon> classes;
    std::vector<double> class_weights; // empty = uniform
    std::vector<std::string> fillers;
    std::vector<std::string> greetings;
    std::vector<std::string> leads;
    std::vector<std::string> small_talk;
    std::vector<std::string> agent_acks;
    std::vector<std::string> agent_follow_ups;
    std::vector<std::string> customer_follow_ups;
    double end_of_turn_boundary_rate = 0.62;
    std::vector<std::pair<int, double>> trailing_length_distribution; // (suffix words, weight)
    double pre_intent_turn_rate = 0.3;
    double restatement_rate = 0.3;
    int max_prefix_fillers = 2;
    int max_follow_up_exchanges = 2;
    bool disjoint_lexicons = true;
    std::int64_t ms_per_word = 400;
    std::uint64_t seed = 1;
};

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w)
        out.push_back(w);
    return out;
}

// Sixteen telecom-support intents with disjoint boundary words.
inline std::vector<IntentLexicon> default_intent_lexicons() {
    return {
        {"account_management", {"update my account details", "change the holder name on my account", "manage my account profile"}},
        {"billing_inquiry", {"check my monthly bill", "explain the charges on my bill", "ask about my billing statement"}},
        {"payment_arrangement", {"make a payment", "set up a payment arrangement", "pay off my balance"}},
        {"plan_change", {"switch my rate plan", "change to a cheaper plan", "downgrade my plan"}},
        {"cancel_service", {"cancel my service", "disconnect my line", "terminate my contract"}},
        {"technical_support", {"fix my voicemail", "my calls keep dropping", "my texts are not sending"}},
        {"internet_outage", {"my internet is down", "report an internet outage", "my wifi has no connection"}},
        {"device_upgrade", {"upgrade my phone", "get a new iphone", "trade in my old handset"}},
        {"international_roaming", {"turn on roaming", "get an international travel pass", "use my cell abroad"}},
        {"sim_card", {"replace my sim card", "activate a new sim", "order an esim"}},
        {"number_porting", {"port my number", "transfer my number", "keep my old number"}},
        {"password_reset", {"reset my password", "recover my forgotten pin", "unlock my login"}},
        {"address_change", {"update my mailing address", "change my address", "send mail to my new home"}},
        {"refund_request", {"get a refund", "request my money back", "reverse a late fee"}},
        {"data_usage", {"check my data usage", "raise my usage limit", "buy more gigabytes"}},
        {"activation", {"start my activation", "turn on my new tablet", "set up my smartwatch"}},
    };
}

inline GeneratorSpec default_generator_spec() {
    GeneratorSpec s;
    s.classes = default_intent_lexicons();
    s.fillers = {"um", "uh", "yeah", "so", "like", "okay", "well", "hi", "hello", "actually",
                 "right", "basically", "just", "and", "the", "you", "know", "mean", "yes", "sure"};
    s.greetings = {
        "thank you for calling how can i help you today",
        "hi my name is alex how can i help you",
        "welcome to customer support what can i do for you today",
        "good morning thanks for calling how may i help you",
    };
    s.leads = {"i want to", "i need to", "i'm calling to", "i'd like to", "i was hoping to",
               "can you help me", "i was trying to", "i need help to"};
    s.small_talk = {
        "hi yeah how are you doing",
        "hello um yes i have a question",
        "yeah hi um i'm calling about something",
        "hi there can you hear me",
        "good thanks um so i need some help with something",
    };
    s.agent_acks = {"i'm doing well how can i help", "sure what can i do for you",
                    "yes i can hear you go ahead", "of course what do you need"};
    s.agent_follow_ups = {"okay i can help with that can i get your full name", "sure one moment please",
                          "alright let me check that for you", "can you verify the last four digits",
                          "thank you for waiting"};
    s.customer_follow_ups = {"yes it is john smith", "okay thank you", "sure no problem",
                             "yeah one two three four", "alright thanks", "okay great"};
    s.trailing_length_distribution = {{1, 0.14}, {2, 0.14}, {3, 0.14}, {4, 0.12}, {5, 0.10},
                                      {6, 0.09}, {8, 0.09}, {10, 0.08}, {15, 0.05}, {20, 0.05}};
    return s;
}

inline ClassList class_list(const GeneratorSpec& spec) {
    std::vector<std::string> names;
    for (const auto& c : spec.classes)
        names.push_back(c.name);
    return ClassList(names);
}

namespace detail {

struct LexiconIndex {
    std::vector<std::set<std::string>> keywords; // words unique to one class
    std::vector<std::string> distractors;        // fillers + phrase words shared across classes
};

inline LexiconIndex index_lexicons(const GeneratorSpec& spec) {
    std::map<std::string, std::set<std::size_t>> owners;
    for (std::size_t c = 0; c < spec.classes.size(); ++c)
        for (const auto& p : spec.classes[c].phrases)
            for (const auto& w : split_words(p))
                owners[w].insert(c);
    LexiconIndex idx;
    idx.keywords.resize(spec.classes.size());
    std::set<std::string> distractors(spec.fillers.begin(), spec.fillers.end());
    for (const auto& [w, cs] : owners) {
        if (cs.size() == 1)
            idx.keywords[*cs.begin()].insert(w);
        else
            distractors.insert(w);
    }
    idx.distractors.assign(distractors.begin(), distractors.end());
    return idx;
}

} // namespace detail

inline void validate_generator_spec(const GeneratorSpec& spec) {
    if (spec.classes.empty())
        throw UsageError("generator: no intent classes");
    for (const auto& c : spec.classes) {
        if (c.phrases.empty())
            throw UsageError("generator: class '" + c.name + "' has an empty lexicon");
        for (const auto& p : c.phrases)
            if (split_words(p).empty())
                throw UsageError("generator: class '" + c.name + "' has an empty phrase");
    }
    if (!spec.class_weights.empty() && spec.class_weights.size() != spec.classes.size())
        throw UsageError("generator: class_weights length must match class count");
    auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in_unit(spec.end_of_turn_boundary_rate) || !in_unit(spec.pre_intent_turn_rate) ||
        !in_unit(spec.restatement_rate))
        throw UsageError("generator: rates must lie in [0, 1]");
    if (spec.trailing_length_distribution.empty() && spec.end_of_turn_boundary_rate < 1.0)
        throw UsageError("generator: trailing_length_distribution is empty");
    for (const auto& [len, w] : spec.trailing_length_distribution)
        if (len < 1 || w < 0.0)
            throw UsageError("generator: trailing lengths must be >= 1 with non-negative weight");
    if (spec.greetings.empty() || spec.leads.empty() || spec.fillers.empty())
        throw UsageError("generator: greetings, leads and fillers must be non-empty");
    if (spec.pre_intent_turn_rate > 0.0 && (spec.small_talk.empty() || spec.agent_acks.empty()))
        throw UsageError("generator: small talk needs small_talk and agent_acks templates");
    if (spec.max_follow_up_exchanges > 0 && (spec.agent_follow_ups.empty() || spec.customer_follow_ups.empty()))
        throw UsageError("generator: follow-ups need agent and customer templates");
    if (spec.max_prefix_fillers < 0 || spec.max_follow_up_exchanges < 0 || spec.ms_per_word <= 0)
        throw UsageError("generator: negative counts or non-positive word duration");
    if (spec.disjoint_lexicons) {
        const auto idx = detail::index_lexicons(spec);
        for (std::size_t c = 0; c < spec.classes.size(); ++c)
            for (const auto& p : spec.classes[c].phrases)
                if (!idx.keywords[c].count(split_words(p).back()))
                    throw UsageError("generator: boundary word of '" + p + "' is shared with another class");
    }
}

// Deterministic given spec.seed.
inline std::vector<Transcript> generate_corpus(const GeneratorSpec& spec) {
    validate_generator_spec(spec);
    const auto idx = detail::index_lexicons(spec);
    std::mt19937_64 rng(spec.seed);

    auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& {
        std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
        return v[d(rng)];
    };
    auto coin = [&rng](double p) { return std::bernoulli_distribution(p)(rng); };

    std::vector<double> weights = spec.class_weights;
    if (weights.empty())
        weights.assign(spec.classes.size(), 1.0);
    std::discrete_distribution<std::size_t> class_dist(weights.begin(), weights.end());
    std::vector<double> trail_w;
    for (const auto& [len, w] : spec.trailing_length_distribution)
        trail_w.push_back(w);
    std::discrete_distribution<std::size_t> trail_dist(trail_w.begin(), trail_w.end());
    std::uniform_int_distribution<int> prefix_dist(0, spec.max_prefix_fillers);
    std::uniform_int_distribution<int> followup_dist(0, spec.max_follow_up_exchanges);

    std::vector<Transcript> out;
    out.reserve(spec.num_transcripts);
    for (std::size_t n = 0; n < spec.num_transcripts; ++n) {
        Transcript t;
        char id[48];
        std::snprintf(id, sizeof id, "s%llu-%06zu", static_cast<unsigned long long>(spec.seed), n);
        t.id = id;
        std::int64_t clock = 0;
        auto add_turn = [&](Speaker sp, const std::vector<std::string>& words) {
            Turn turn{sp, {}};
            for (const auto& w : words) {
                turn.tokens.push_back({w, clock, clock + spec.ms_per_word});
                clock += spec.ms_per_word;
            }
            t.turns.push_back(std::move(turn));
        };

        add_turn(Speaker::agent, split_words(pick(spec.greetings)));
        if (coin(spec.pre_intent_turn_rate)) {
            add_turn(Speaker::customer, split_words(pick(spec.small_talk)));
            add_turn(Speaker::agent, split_words(pick(spec.agent_acks)));
        }

        const std::size_t cls = class_dist(rng);
        const auto& phrase = pick(spec.classes[cls].phrases);
        std::vector<std::string> words;
        for (int i = prefix_dist(rng); i > 0; --i)
            words.push_back(pick(spec.fillers));
        for (auto& w : split_words(pick(spec.leads)))
            words.push_back(std::move(w));
        for (auto& w : split_words(phrase))
            words.push_back(std::move(w));
        const std::size_t boundary = words.size() - 1;
        if (!coin(spec.end_of_turn_boundary_rate)) {
            const int len = spec.trailing_length_distribution[trail_dist(rng)].first;
            for (int i = 0; i < len; ++i)
                words.push_back(pick(idx.distractors));
        }
        t.annotation = IntentAnnotation{static_cast<int>(cls), t.turns.size(), boundary};
        add_turn(Speaker::customer, words);

        for (int i = followup_dist(rng); i > 0; --i) {
            add_turn(Speaker::agent, split_words(pick(spec.agent_follow_ups)));
            if (coin(spec.restatement_rate)) {
                std::vector<std::string> re{"yeah", "so", "i", "just", "want", "to"};
                for (auto& w : split_words(phrase))
                    re.push_back(std::move(w));
                add_turn(Speaker::customer, re);
            } else {
                add_turn(Speaker::customer, split_words(pick(spec.customer_follow_ups)));
            }
        }
        validate_transcript(t);
        out.push_back(std::move(t));
    }
    return out;
}

struct CorpusStats {
    std::size_t num_transcripts = 0;
    std::size_t num_annotated = 0;
    std::map<int, std::size_t> class_counts;
    std::size_t end_of_turn_boundaries = 0;
    double end_of_turn_fraction = 0.0;
    // (end-of-turn time - boundary time) in milliseconds -> count
    std::map<std::int64_t, std::size_t> offset_histogram_ms;
};

inline CorpusStats summarize_corpus(const std::vector<Transcript>& transcripts) {
    CorpusStats s;
    s.num_transcripts = transcripts.size();
    for (const auto& t : transcripts) {
        if (!t.annotation)
            continue;
        ++s.num_annotated;
        ++s.class_counts[t.annotation->class_id];
        const auto& turn = t.turns[t.annotation->turn_index];
        const auto& b = turn.tokens[t.annotation->boundary_token_index];
        if (t.annotation->boundary_token_index + 1 == turn.tokens.size())
            ++s.end_of_turn_boundaries;
        ++s.offset_histogram_ms[turn.tokens.back().end_ms - b.end_ms];
    }
    if (s.num_annotated > 0)
        s.end_of_turn_fraction = static_cast<double>(s.end_of_turn_boundaries) / static_cast<double>(s.num_annotated);
    return s;
}

// Offsets bucketed to 0.1 s, written as `bucket,count` with the bucket in seconds.
inline void write_offset_histogram_csv(std::ostream& out, const CorpusStats& stats) {
    std::map<std::int64_t, std::size_t> deci;
    for (const auto& [ms, n] : stats.offset_histogram_ms)
        deci[(ms + 50) / 100] += n;
    out << "bucket,count\n";
    for (const auto& [d, n] : deci) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", static_cast<double>(d) / 10.0);
        out << buf << ',' << n << '\n';
    }
}

inline void save_offset_histogram_csv(const std::string& path, const CorpusStats& stats) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write '" + path + "'");
    write_offset_histogram_csv(out, stats);
}

} // namespace sintent
