#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sintent/config.hpp"
#include "sintent/corpus.hpp"
#include "sintent/error.hpp"
#include "sintent/metrics.hpp"
#include "sintent/syngen.hpp"

namespace sintent {

// Everything a command needs, read from `section.key = value` lines.
struct RunConfig {
    ModelConfig model;
    Variant variant = Variant::multitask;
    GeneratorSpec generator = default_generator_spec();
    std::vector<std::string> classes; // empty = the generator's class names
    std::array<double, 3> split_fractions = kDefaultSplitFractions;

    std::uint64_t data_seed = 1;  // generation and splitting
    std::uint64_t train_seed = 1; // init, shuffling, dropout
    std::uint64_t eval_seed = 3;  // lookahead pads at evaluation and replay

    std::string corpus_path = "corpus.jsonl";
    std::string checkpoint_path = "model.ckpt";
    std::string report_dir = ".";

    std::string eval_split = "test";
    std::size_t pb_window = 0;
    Averaging averaging = Averaging::macro;
    bool strict_algorithm1 = false;
    unsigned replay_threads = 1;

    // gradient-check model
    int gc_vocab = 20;
    int gc_embed = 4;
    int gc_hidden = 5;
    int gc_layers = 2;
    int gc_classes = 3;
    int gc_length = 6;
    int gc_batch = 3;
    double gc_epsilon = 1e-5;

    ClassList class_list() const {
        return classes.empty() ? sintent::class_list(generator) : ClassList(classes);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (auto t = trim(item); !t.empty())
            out.push_back(t);
    return out;
}

template <typename N>
N parse_config_number(const std::string& key, const std::string& v) {
    N out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw UsageError("config: bad value for " + key + ": '" + v + "'");
    return out;
}

inline bool parse_config_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    throw UsageError("config: " + key + " expects true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <typename N>
Setter num(N RunConfig::*field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) {
        c.*field = parse_config_number<N>(k, v);
    };
}

template <typename N>
Setter model_num(N ModelConfig::*field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) {
        c.model.*field = parse_config_number<N>(k, v);
    };
}

template <typename N>
Setter gen_num(N GeneratorSpec::*field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) {
        c.generator.*field = parse_config_number<N>(k, v);
    };
}

inline Setter str(std::string RunConfig::*field) {
    return [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; };
}

inline const std::map<std::string, Setter>& config_setters() {
    static const std::map<std::string, Setter> table = {
        {"model.variant",
         [](RunConfig& c, const std::string&, const std::string& v) {
             auto p = parse_variant(v);
             if (!p)
                 throw UsageError("config: unknown variant '" + v + "' (valid: " + variant_list() + ")");
             c.variant = *p;
         }},
        {"model.embed_dim", model_num(&ModelConfig::embed_dim)},
        {"model.hidden_dim", model_num(&ModelConfig::hidden_dim)},
        {"model.num_layers", model_num(&ModelConfig::num_layers)},
        {"model.dropout", model_num(&ModelConfig::dropout)},
        {"model.beta", model_num(&ModelConfig::beta)},
        {"model.focal_alpha", model_num(&ModelConfig::focal_alpha)},
        {"model.focal_gamma", model_num(&ModelConfig::focal_gamma)},
        {"model.lookahead_k", model_num(&ModelConfig::lookahead_k)},
        {"model.context_turns", model_num(&ModelConfig::context_turns)},
        {"model.context_max_tokens", model_num(&ModelConfig::context_max_tokens)},
        {"model.ib_threshold", model_num(&ModelConfig::ib_threshold)},
        {"model.init_scale", model_num(&ModelConfig::init_scale)},
        {"model.forget_bias", model_num(&ModelConfig::forget_bias)},
        {"train.epochs", model_num(&ModelConfig::epochs)},
        {"train.lr", model_num(&ModelConfig::lr)},
        {"train.batch_size", model_num(&ModelConfig::batch_size)},
        {"data.min_count", model_num(&ModelConfig::min_count)},
        {"data.classes",
         [](RunConfig& c, const std::string&, const std::string& v) { c.classes = split_list(v); }},
        {"data.split_fractions",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             const auto parts = split_list(v);
             if (parts.size() != 3)
                 throw UsageError("config: " + k + " needs three comma-separated fractions");
             for (std::size_t i = 0; i < 3; ++i)
                 c.split_fractions[i] = parse_config_number<double>(k, parts[i]);
         }},
        {"gen.num_transcripts", gen_num(&GeneratorSpec::num_transcripts)},
        {"gen.end_of_turn_boundary_rate", gen_num(&GeneratorSpec::end_of_turn_boundary_rate)},
        {"gen.pre_intent_turn_rate", gen_num(&GeneratorSpec::pre_intent_turn_rate)},
        {"gen.restatement_rate", gen_num(&GeneratorSpec::restatement_rate)},
        {"gen.max_prefix_fillers", gen_num(&GeneratorSpec::max_prefix_fillers)},
        {"gen.max_follow_up_exchanges", gen_num(&GeneratorSpec::max_follow_up_exchanges)},
        {"gen.ms_per_word", gen_num(&GeneratorSpec::ms_per_word)},
        {"gen.disjoint_lexicons",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.generator.disjoint_lexicons = parse_config_bool(k, v);
         }},
        {"gen.class_weights",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.generator.class_weights.clear();
             for (const auto& p : split_list(v))
                 c.generator.class_weights.push_back(parse_config_number<double>(k, p));
         }},
        // suffix length n gets the n-th weight (1-based)
        {"gen.trailing_length_weights",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.generator.trailing_length_distribution.clear();
             int n = 1;
             for (const auto& p : split_list(v))
                 c.generator.trailing_length_distribution.emplace_back(n++, parse_config_number<double>(k, p));
         }},
        {"seeds.data", num(&RunConfig::data_seed)},
        {"seeds.train", num(&RunConfig::train_seed)},
        {"seeds.eval", num(&RunConfig::eval_seed)},
        {"paths.corpus", str(&RunConfig::corpus_path)},
        {"paths.checkpoint", str(&RunConfig::checkpoint_path)},
        {"paths.reports", str(&RunConfig::report_dir)},
        {"eval.split",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "train" && v != "validation" && v != "test")
                 throw UsageError("config: " + k + " must be train, validation or test");
             c.eval_split = v;
         }},
        {"eval.pb_window", num(&RunConfig::pb_window)},
        {"eval.averaging",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "macro")
                 c.averaging = Averaging::macro;
             else if (v == "micro")
                 c.averaging = Averaging::micro;
             else
                 throw UsageError("config: " + k + " must be macro or micro");
         }},
        {"eval.strict_algorithm1",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.strict_algorithm1 = parse_config_bool(k, v);
         }},
        {"eval.threads", num(&RunConfig::replay_threads)},
        {"gradcheck.vocab", num(&RunConfig::gc_vocab)},
        {"gradcheck.embed_dim", num(&RunConfig::gc_embed)},
        {"gradcheck.hidden_dim", num(&RunConfig::gc_hidden)},
        {"gradcheck.num_layers", num(&RunConfig::gc_layers)},
        {"gradcheck.num_classes", num(&RunConfig::gc_classes)},
        {"gradcheck.length", num(&RunConfig::gc_length)},
        {"gradcheck.batch", num(&RunConfig::gc_batch)},
        {"gradcheck.epsilon", num(&RunConfig::gc_epsilon)},
    };
    return table;
}

} // namespace detail

inline std::vector<std::string> known_config_keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : detail::config_setters())
        out.push_back(k);
    return out;
}

// Applies one `key = value` assignment (also used for flag overrides).
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    const auto& table = detail::config_setters();
    auto it = table.find(key);
    if (it == table.end())
        throw UsageError("config: unknown key '" + key + "'");
    it->second(c, key, value);
}

// '#' starts a comment; blank lines are skipped; later assignments win.
inline RunConfig parse_run_config(std::istream& in) {
    RunConfig c;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto h = line.find('#'); h != std::string::npos)
            line.erase(h);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(n) + ": expected 'section.key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            set_config_value(c, key, value);
        } catch (const UsageError& e) {
            throw UsageError("config line " + std::to_string(n) + ": " + e.what());
        }
    }
    c.model.seed = c.train_seed;
    c.generator.seed = c.data_seed;
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot read config " + path);
    return parse_run_config(in);
}

} // namespace sintent
