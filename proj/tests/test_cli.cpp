#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "sintent/checkpoint.hpp"
#include "sintent/run_config.hpp"

using namespace sintent;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char ch : s)
        n += ch == '\n';
    return n;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::path(::testing::TempDir()) /
               ("sintent_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write_config("c.cfg", "");
    }

    fs::path path(const std::string& name) const { return dir_ / name; }

    // A small, fast configuration; `extra` lines are appended.
    void write_config(const std::string& name, const std::string& extra) {
        std::ofstream out(path(name));
        out << "# test run\n"
            << "gen.num_transcripts = 80\n"
            << "seeds.data = 4\n"
            << "seeds.train = 2\n"
            << "seeds.eval = 3\n"
            << "model.embed_dim = 8\n"
            << "model.hidden_dim = 8\n"
            << "train.epochs = 2\n"
            << "data.min_count = 1\n"
            << "paths.corpus = " << path("corpus.jsonl").string() << "\n"
            << "paths.checkpoint = " << path("model.ckpt").string() << "\n"
            << "paths.reports = " << dir_.string() << "\n"
            << extra;
    }

    CmdResult run(const std::string& args) const {
        const auto out = path("stdout.txt"), err = path("stderr.txt");
        const std::string cmd =
            std::string(SINTENT_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
        const int status = std::system(cmd.c_str());
        CmdResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    std::string cfg(const std::string& name = "c.cfg") const { return "--config " + path(name).string(); }

    void gen_and_train(const std::string& variant = "multitask") {
        ASSERT_EQ(run("gen " + cfg()).code, 0);
        const auto r = run("train " + cfg() + " --variant " + variant);
        ASSERT_EQ(r.code, 0) << r.err;
    }

    fs::path dir_;
};

} // namespace

// --- config parsing ----------------------------------------------------------------

TEST(RunConfigParse, DefaultsAreThePaperSettings) {
    std::istringstream in("");
    const auto c = parse_run_config(in);
    EXPECT_EQ(c.model.embed_dim, 300);
    EXPECT_EQ(c.model.hidden_dim, 128);
    EXPECT_EQ(c.model.num_layers, 2);
    EXPECT_EQ(c.model.dropout, 0.25);
    EXPECT_EQ(c.model.epochs, 30);
    EXPECT_EQ(c.model.lr, 0.001);
    EXPECT_EQ(c.model.batch_size, 32);
    EXPECT_EQ(c.model.beta, 0.5);
    EXPECT_EQ(c.model.focal_alpha, 1.0);
    EXPECT_EQ(c.model.focal_gamma, 8.0);
    EXPECT_EQ(c.model.ib_threshold, 0.5);
    EXPECT_EQ(c.class_list().size(), 16u);
}

TEST(RunConfigParse, SectionKeysCommentsAndSeeds) {
    std::istringstream in("# comment\n\nmodel.hidden_dim = 64   # trailing\nmodel.variant = intent_only\n"
                          "seeds.train = 9\nseeds.data = 12\ndata.classes = a, b ,c\n");
    const auto c = parse_run_config(in);
    EXPECT_EQ(c.model.hidden_dim, 64);
    EXPECT_EQ(c.variant, Variant::intent_only);
    EXPECT_EQ(c.model.seed, 9u);
    EXPECT_EQ(c.generator.seed, 12u);
    EXPECT_EQ(c.classes, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(RunConfigParse, BadInputIsAUsageError) {
    for (const char* text : {"model.nope = 1\n", "model.hidden_dim = twelve\n", "model.hidden_dim 12\n",
                             "model.variant = huge\n", "eval.split = everything\n"}) {
        std::istringstream in(text);
        EXPECT_THROW(parse_run_config(in), UsageError) << text;
    }
    EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), UsageError);
}

TEST(RunConfigParse, EveryKnownKeyIsSettable) {
    EXPECT_GT(known_config_keys().size(), 30u);
    RunConfig c;
    EXPECT_THROW(set_config_value(c, "train.unknown", "1"), UsageError);
}

// --- commands ---------------------------------------------------------------------

TEST_F(Cli, GenWritesTheConfiguredCount) {
    const auto r = run("gen " + cfg());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(slurp(path("corpus.jsonl"))), 80u);
    EXPECT_EQ(slurp(path("corpus.offsets.csv")).substr(0, 13), "bucket,count\n");

    ASSERT_EQ(run("gen " + cfg() + " --out " + path("other.jsonl").string()).code, 0);
    EXPECT_EQ(slurp(path("other.jsonl")), slurp(path("corpus.jsonl")));
}

TEST_F(Cli, GenSeedOverrideIsDeterministic) {
    ASSERT_EQ(run("gen " + cfg() + " --seed 7 --out " + path("a.jsonl").string()).code, 0);
    ASSERT_EQ(run("gen " + cfg() + " --seed 7 --out " + path("b.jsonl").string()).code, 0);
    ASSERT_EQ(run("gen " + cfg() + " --seed 8 --out " + path("c.jsonl").string()).code, 0);
    EXPECT_EQ(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
    EXPECT_NE(slurp(path("a.jsonl")), slurp(path("c.jsonl")));
}

TEST_F(Cli, UsageErrorsExitWithOne) {
    EXPECT_EQ(run("gen").code, 1);
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate " + cfg()).code, 1);
    EXPECT_EQ(run("gen --config " + path("missing.cfg").string()).code, 1);
    write_config("bad.cfg", "model.unknown_knob = 3\n");
    const auto r = run("gen " + cfg("bad.cfg"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("model.unknown_knob"), std::string::npos);
}

TEST_F(Cli, DataErrorsExitWithTwo) {
    {
        std::ofstream out(path("corpus.jsonl"));
        out << "{broken\n";
    }
    EXPECT_EQ(run("train " + cfg()).code, 2);
    EXPECT_EQ(run("eval " + cfg() + " --checkpoint " + path("none.ckpt").string()).code, 2);
}

TEST_F(Cli, TrainWritesCheckpointAndLog) {
    gen_and_train();
    auto model = load_checkpoint(path("model.ckpt").string());
    EXPECT_EQ(model.variant, Variant::multitask);
    EXPECT_EQ(model.config.hidden_dim, 8);
    const auto log = slurp(path("model.log.csv"));
    std::istringstream in(log);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,split,metric,value");
    std::map<std::string, int> rows;
    while (std::getline(in, line)) {
        const auto a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
        ++rows[line.substr(a + 1, b - a - 1) + "/" + line.substr(b + 1, c - b - 1)];
    }
    EXPECT_EQ(rows["train/loss"], 2);
    EXPECT_EQ(rows["validation/loss"], 2);
    EXPECT_EQ(rows["validation/intent_at_pb_f1"], 2);
}

TEST_F(Cli, TrainVariantIsRecordedInTheCheckpoint) {
    gen_and_train("intent_only");
    EXPECT_EQ(load_checkpoint(path("model.ckpt").string()).variant, Variant::intent_only);
}

TEST_F(Cli, InvalidVariantListsTheValidOnes) {
    ASSERT_EQ(run("gen " + cfg()).code, 0);
    const auto r = run("train " + cfg() + " --variant bogus");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("multitask_lookahead"), std::string::npos);
    EXPECT_NE(r.err.find("intent_only"), std::string::npos);
}

TEST_F(Cli, EvalReportSchemaAndThresholdOverride) {
    gen_and_train();
    auto r = run("eval " + cfg());
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = nlohmann::json::parse(r.out);
    for (const char* k : {"ib_prf", "intent_at_ob", "intent_at_pb"})
        EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["threshold"], 0.5);
    r = run("eval " + cfg() + " --threshold 0.7 --out " + path("eval.json").string());
    ASSERT_EQ(r.code, 0) << r.err;
    j = nlohmann::json::parse(slurp(path("eval.json")));
    EXPECT_EQ(j["threshold"], 0.7);
    EXPECT_EQ(run("eval " + cfg() + " --threshold 1.5").code, 1);
}

TEST_F(Cli, EvalIntentOnlyReportsTokenPrf) {
    gen_and_train("intent_only");
    const auto r = run("eval " + cfg());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_TRUE(j.contains("intent_prf"));
    EXPECT_FALSE(j.contains("ib_prf"));
}

TEST_F(Cli, ClassListMismatchIsRejected) {
    gen_and_train();
    write_config("other.cfg", "data.classes = alpha,beta\n");
    const auto r = run("eval " + cfg("other.cfg"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("class list"), std::string::npos);
}

TEST_F(Cli, ReplayWritesDecisionsReportAndHistogram) {
    gen_and_train("multitask_lookahead");
    const auto out = path("run1.jsonl").string();
    auto r = run("replay " + cfg() + " --out " + out);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = nlohmann::json::parse(slurp(path("run1.report.json")));
    for (const char* k : {"acc", "acc_rt", "acc_rp", "mtd", "mpd", "n_missed"})
        EXPECT_TRUE(report.contains(k)) << k;
    EXPECT_EQ(report["strict_algorithm1"], false);
    EXPECT_EQ(slurp(path("run1.turn_diff.csv")).substr(0, 16), "turn_diff,count\n");
    EXPECT_EQ(count_lines(slurp(path("run1.jsonl"))), report["n"].get<std::size_t>());

    // repeated runs are byte-identical; the default output lands in the report dir
    ASSERT_EQ(run("replay " + cfg()).code, 0);
    EXPECT_EQ(slurp(path("decisions.jsonl")), slurp(path("run1.jsonl")));

    r = run("replay " + cfg() + " --strict-algorithm1 --out " + path("strict.jsonl").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(slurp(path("strict.report.json")))["strict_algorithm1"], true);

    r = run("metrics --decisions " + out + " --out " + path("hist.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["acc"], report["acc"]);
    EXPECT_EQ(slurp(path("hist.csv")), slurp(path("run1.turn_diff.csv")));
}

TEST_F(Cli, TuneThresholdSweepsTheGrid) {
    gen_and_train();
    const auto r = run("tune-threshold " + cfg());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["grid"].size(), 19u);
    const double t = j["best_threshold"];
    EXPECT_GT(t, 0.0);
    EXPECT_LT(t, 1.0);
}

TEST_F(Cli, GradcheckPassesAndCatchesFaults) {
    auto r = run("gradcheck " + cfg());
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("max relative error"), std::string::npos);
    r = run("gradcheck " + cfg() + " --fault-inject");
    EXPECT_EQ(r.code, 3) << r.out;
    r = run("gradcheck " + cfg() + " --variant multitask_context");
    EXPECT_EQ(r.code, 0) << r.out;
}
