// sintent: generate corpora, train, evaluate and replay streaming intent models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sintent.hpp"

using namespace sintent;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
    cmd->add_option("--config", c.config, "run config (section.key = value lines)")->required();
    cmd->add_option("--seed", c.seed, "override this command's seed");
    cmd->add_option("--out", c.out, out_help);
}

std::string stem_path(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
}

DatasetSplits load_splits(const RunConfig& rc) {
    const auto corpus = load_transcripts(rc.corpus_path, rc.class_list());
    return split_dataset(corpus, rc.data_seed, rc.split_fractions);
}

const std::vector<Transcript>& pick_split(const DatasetSplits& s, const std::string& name) {
    if (name == "train")
        return s.train;
    if (name == "validation")
        return s.validation;
    return s.test;
}

// The checkpoint carries its own class list; it must agree with the config's.
Model<float> load_model(const RunConfig& rc, const std::string& path) {
    auto model = load_checkpoint<float>(path);
    if (!(model.classes == rc.class_list()))
        throw DataError("checkpoint class list does not match the config's class list");
    return model;
}

int cmd_gen(const RunConfig& rc, const Common& c) {
    const std::string out = c.out.empty() ? rc.corpus_path : c.out;
    const auto corpus = generate_corpus(rc.generator);
    const auto classes = class_list(rc.generator);
    save_transcripts(out, corpus, classes);
    const auto stats = summarize_corpus(corpus);
    save_offset_histogram_csv(stem_path(out, ".offsets.csv"), stats);
    std::fprintf(stderr, "wrote %zu transcripts to %s (end-of-turn boundaries %.4f)\n", corpus.size(), out.c_str(),
                 stats.end_of_turn_fraction);
    return 0;
}

int cmd_train(RunConfig rc, const Common& c, const std::string& variant, const std::string& log_path) {
    if (!variant.empty()) {
        auto v = parse_variant(variant);
        if (!v)
            throw UsageError("unknown variant '" + variant + "' (valid: " + variant_list() + ")");
        rc.variant = *v;
    }
    const std::string out = c.out.empty() ? rc.checkpoint_path : c.out;
    const auto splits = load_splits(rc);
    TrainOptions opt;
    opt.eval_seed = rc.eval_seed;
    opt.on_log = [](const TrainLogRow& r) {
        std::fprintf(stderr, "epoch %d %s %s %.6f\n", r.epoch, r.split.c_str(), r.metric.c_str(), r.value);
    };
    auto res = train<float>(splits.train, splits.validation, rc.class_list(), rc.model, rc.variant, opt);
    save_checkpoint(res.model, out);
    const std::string lp = log_path.empty() ? stem_path(out, ".log.csv") : log_path;
    std::ofstream log(lp, std::ios::binary);
    if (!log)
        throw DataError("cannot write " + lp);
    write_train_log(log, res.log);
    std::fprintf(stderr, "saved %s model to %s (best epoch %d, %s %.4f)\n",
                 std::string(variant_name(rc.variant)).c_str(), out.c_str(), res.best_epoch,
                 selection_metric(rc.variant).c_str(), res.best_metric);
    return 0;
}

EvalOptions eval_options(const RunConfig& rc, const Model<float>& model, std::optional<double> threshold) {
    EvalOptions eo;
    eo.threshold = threshold.value_or(model.config.ib_threshold);
    eo.pb_window = rc.pb_window;
    eo.averaging = rc.averaging;
    return eo;
}

int cmd_eval(const RunConfig& rc, const Common& c, const std::string& ckpt, std::optional<double> threshold) {
    auto model = load_model(rc, ckpt.empty() ? rc.checkpoint_path : ckpt);
    const auto splits = load_splits(rc);
    const auto report = evaluate_model(model, pick_split(splits, rc.eval_split), rc.eval_seed,
                                       eval_options(rc, model, threshold));
    auto j = to_json(report);
    j["variant"] = variant_name(model.variant);
    j["split"] = rc.eval_split;
    if (c.out.empty())
        std::cout << j.dump(2) << '\n';
    else
        write_json(c.out, j);
    return 0;
}

int cmd_replay(const RunConfig& rc, const Common& c, const std::string& ckpt, std::optional<double> threshold,
               bool strict) {
    auto model = load_model(rc, ckpt.empty() ? rc.checkpoint_path : ckpt);
    const auto splits = load_splits(rc);
    ReplayOptions ro;
    ro.stream.threshold = threshold.value_or(model.config.ib_threshold);
    ro.stream.strict_algorithm1 = strict || rc.strict_algorithm1;
    ro.eval_seed = rc.eval_seed;
    ro.threads = rc.replay_threads;
    const auto records = replay(pick_split(splits, rc.eval_split), model, ro);
    const auto report = realtime_metrics(records);
    const std::string out = c.out.empty() ? (fs::path(rc.report_dir) / "decisions.jsonl").string() : c.out;
    {
        std::ofstream d(out, std::ios::binary);
        if (!d)
            throw DataError("cannot write " + out);
        write_decisions(d, records);
    }
    auto j = to_json(report);
    j["variant"] = variant_name(model.variant);
    j["threshold"] = ro.stream.threshold;
    j["strict_algorithm1"] = ro.stream.strict_algorithm1;
    write_json(stem_path(out, ".report.json"), j);
    export_histogram(report, stem_path(out, ".turn_diff.csv"));
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_tune(const RunConfig& rc, const Common& c, const std::string& ckpt) {
    auto model = load_model(rc, ckpt.empty() ? rc.checkpoint_path : ckpt);
    const auto splits = load_splits(rc);
    const auto sweep = tune_threshold(model, splits.validation, rc.eval_seed, eval_options(rc, model, std::nullopt));
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& [t, f1] : sweep.grid)
        grid.push_back({{"threshold", t}, {"intent_at_pb_f1", f1}});
    const nlohmann::json j = {{"best_threshold", sweep.best_threshold}, {"best_f1", sweep.best_f1}, {"grid", grid}};
    if (c.out.empty())
        std::cout << j.dump(2) << '\n';
    else
        write_json(c.out, j);
    return 0;
}

int cmd_gradcheck(const RunConfig& rc, const Common& c, const std::string& variant, bool fault) {
    TinyModelSpec s;
    s.vocab = rc.gc_vocab;
    s.embed_dim = rc.gc_embed;
    s.hidden_dim = rc.gc_hidden;
    s.num_layers = rc.gc_layers;
    s.num_classes = rc.gc_classes;
    s.max_length = rc.gc_length;
    s.batch = rc.gc_batch;
    s.epsilon = rc.gc_epsilon;
    s.seed = c.seed.value_or(rc.train_seed);
    Variant v = Variant::multitask;
    if (!variant.empty()) {
        auto p = parse_variant(variant);
        if (!p)
            throw UsageError("unknown variant '" + variant + "' (valid: " + variant_list() + ")");
        v = *p;
    }
    const auto r = check_model_gradients(s, v, fault);
    std::printf("max relative error %.3e (%s[%ld], analytic %.10g, numeric %.10g, %zu elements)\n",
                r.max_relative_error, r.worst_parameter.c_str(), static_cast<long>(r.worst_index), r.analytic,
                r.numeric, r.elements_checked);
    return r.max_relative_error < 1e-6 ? 0 : static_cast<int>(ErrorKind::numeric);
}

int cmd_metrics(const std::string& decisions, const std::string& out) {
    const auto report = realtime_metrics(load_decisions(decisions));
    std::cout << to_json(report).dump(2) << '\n';
    if (!out.empty())
        export_histogram(report, out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming intent detection for support-call transcripts"};
    app.require_subcommand(1);

    Common gen_c, train_c, eval_c, replay_c, tune_c, gc_c;
    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    add_common(gen, gen_c, "corpus JSONL (offset histogram written alongside)");

    std::string train_variant, train_log;
    auto* tr = app.add_subcommand("train", "train a model on the corpus train split");
    add_common(tr, train_c, "checkpoint path");
    tr->add_option("--variant", train_variant, "one of: " + variant_list());
    tr->add_option("--log", train_log, "training log CSV");

    std::string eval_ckpt;
    std::optional<double> eval_t;
    auto* ev = app.add_subcommand("eval", "offline metric suite");
    add_common(ev, eval_c, "report JSON (stdout when omitted)");
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint path");
    ev->add_option("--threshold", eval_t, "firing threshold T")->check(CLI::Range(0.0, 1.0));

    std::string replay_ckpt;
    std::optional<double> replay_t;
    bool strict = false;
    auto* rp = app.add_subcommand("replay", "real-time replay with first-intent semantics");
    add_common(rp, replay_c, "decisions JSONL (report and histogram written alongside)");
    rp->add_option("--checkpoint", replay_ckpt, "checkpoint path");
    rp->add_option("--threshold", replay_t, "firing threshold T")->check(CLI::Range(0.0, 1.0));
    rp->add_flag("--strict-algorithm1", strict, "step the intent stack only where IB fires");

    std::string tune_ckpt;
    auto* tu = app.add_subcommand("tune-threshold", "sweep T on the validation split");
    add_common(tu, tune_c, "sweep JSON (stdout when omitted)");
    tu->add_option("--checkpoint", tune_ckpt, "checkpoint path");

    std::string gc_variant;
    bool fault = false;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of a tiny model (double precision)");
    add_common(gc, gc_c, "unused");
    gc->add_option("--variant", gc_variant, "one of: " + variant_list());
    gc->add_flag("--fault-inject", fault, "corrupt one analytic gradient");

    std::string decisions, hist_out;
    auto* me = app.add_subcommand("metrics", "real-time metrics from a decisions JSONL");
    me->add_option("--decisions", decisions, "decisions JSONL")->required();
    me->add_option("--out", hist_out, "turn-difference histogram CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    try {
        auto config = [](const Common& c) { return load_run_config(c.config); };
        if (*gen) {
            auto rc = config(gen_c);
            if (gen_c.seed)
                rc.data_seed = rc.generator.seed = *gen_c.seed;
            return cmd_gen(rc, gen_c);
        }
        if (*tr) {
            auto rc = config(train_c);
            if (train_c.seed)
                rc.train_seed = rc.model.seed = *train_c.seed;
            return cmd_train(rc, train_c, train_variant, train_log);
        }
        if (*ev) {
            auto rc = config(eval_c);
            if (eval_c.seed)
                rc.eval_seed = *eval_c.seed;
            return cmd_eval(rc, eval_c, eval_ckpt, eval_t);
        }
        if (*rp) {
            auto rc = config(replay_c);
            if (replay_c.seed)
                rc.eval_seed = *replay_c.seed;
            return cmd_replay(rc, replay_c, replay_ckpt, replay_t, strict);
        }
        if (*tu) {
            auto rc = config(tune_c);
            if (tune_c.seed)
                rc.eval_seed = *tune_c.seed;
            return cmd_tune(rc, tune_c, tune_ckpt);
        }
        if (*gc)
            return cmd_gradcheck(config(gc_c), gc_c, gc_variant, fault);
        if (*me)
            return cmd_metrics(decisions, hist_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(ErrorKind::data);
    }
    return 0;
}
