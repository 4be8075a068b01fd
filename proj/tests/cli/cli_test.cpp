#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "drfuser/dataset.hpp"
#include "drfuser/model.hpp"
#include "drfuser/train.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace drfuser;
using drfuser::testing::fresh_dir;
using drfuser::testing::read_tree;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

std::string last_line(const std::string& text) {
    auto end = text.find_last_not_of('\n');
    auto start = text.rfind('\n', end);
    return text.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
}

// 8 samples, straight road: every label is exactly zero.
fs::path straight_dataset(const std::string& name) {
    const auto root = fresh_dir(name);
    fs::create_directories(root);
    write_file(root / "scenario.ini", "[scenario]\nprofile = 100:0:0\nduration_s = 0.8\n");
    const auto r = run({"generate", "--config", (root / "scenario.ini").string(), "--out", (root / "ds").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return root;
}

}  // namespace

TEST(Cli, HelpListsEveryStableFlag) {
    const auto r = run({"--help-all"});
    EXPECT_EQ(r.code, 0);
    for (const char* flag : {"--config", "--seed", "--out", "--dataset", "--checkpoint", "--variant",
                             "--events-per-frame", "--time-window-us"})
        EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
    for (const char* cmd : {"simulate", "render", "sync", "generate", "train", "eval", "gradcheck", "plot"})
        EXPECT_NE(r.out.find(cmd), std::string::npos) << cmd;
    const auto sub = run({"train", "--help"});
    EXPECT_EQ(sub.code, 0);
    EXPECT_NE(sub.out.find("drfuser,none,additive,early,late,rgb,event"), std::string::npos) << sub.out;
}

TEST(Cli, UnknownFlagIsUsageError) {
    const auto d = fresh_dir("drfuser_cli_unknown");
    auto r = run({"generate", "--out", d.string(), "--bogus"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(d));
    EXPECT_EQ(run({"teleport"}).code, 1);
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"gradcheck", "--seeds", "many"}).code, 1);
}

TEST(Cli, UnknownVariantAndConfigTyposAreUsageErrors) {
    const auto root = straight_dataset("drfuser_cli_typo");
    auto r = run({"train", "--dataset", (root / "ds").string(), "--out", (root / "run").string(), "--variant", "fancy"});
    EXPECT_EQ(r.code, 1);
    write_file(root / "typo.ini", "[train]\nlearning_rate = 0.1\n");
    r = run({"train", "--config", (root / "typo.ini").string(), "--dataset", (root / "ds").string(), "--out",
             (root / "run").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("train.learning_rate"), std::string::npos) << r.err;
    // Sections owned by other commands are ignored.
    write_file(root / "shared.ini", "[scenario]\nseed = 4\n[model]\nheads = 2\n");
    r = run({"eval", "--config", (root / "shared.ini").string(), "--dataset", (root / "ds").string(), "--checkpoint",
             (root / "scenario.ini").string()});
    EXPECT_EQ(r.code, 2) << r.err;  // gets as far as reading the (bogus) checkpoint
}

TEST(Cli, EvalOnPerfectPredictionFixture) {
    const auto root = straight_dataset("drfuser_cli_perfect");
    ModelF model(ModelConfig::desk(), 11);
    for (auto& p : model.parameters())
        if (p.name == "decoder.fc2.weight" || p.name == "decoder.fc2.bias")
            for (auto& v : p.tensor.node()->data) v = 0.0f;
    fs::create_directories(root / "run");
    model.save(root / "run" / "zero.ckpt");
    KeyValueConfig cfg;
    model.config().write_to(cfg);
    write_file(root / "run" / "config.ini", cfg.to_string());

    const auto r = run({"eval", "--checkpoint", (root / "run" / "zero.ckpt").string(), "--dataset",
                        (root / "ds").string(), "--out", (root / "eval").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(last_line(r.out), "rmse 0.0 mae 0.0");
    EXPECT_NE(r.out.find("variant = drfuser"), std::string::npos);  // resolved config echoed
    EXPECT_EQ(slurp(root / "eval" / "metrics.csv"), "split,count,rmse,mae\nall,8,0,0\n");
    EXPECT_TRUE(fs::exists(root / "eval" / "config.ini"));
    const auto preds = slurp(root / "eval" / "predictions.csv");
    EXPECT_EQ(preds.substr(0, preds.find('\n')), "index,timestamp_us,target_rad,prediction_rad");
    EXPECT_NE(preds.find("\n0,100000,0,0\n"), std::string::npos) << preds;
}

TEST(Cli, GenerateIsByteIdenticalAndRecordsSplits) {
    const auto a = fresh_dir("drfuser_cli_gen_a"), b = fresh_dir("drfuser_cli_gen_b");
    const auto ra = run({"generate", "--seed", "7", "--out", a.string(), "--split", "0.75,0.25"});
    const auto rb = run({"generate", "--seed", "7", "--out", b.string(), "--split", "0.75,0.25"});
    ASSERT_EQ(ra.code, 0) << ra.err;
    ASSERT_EQ(rb.code, 0) << rb.err;
    EXPECT_EQ(ra.out, rb.out);
    EXPECT_NE(ra.out.find("seed = 7"), std::string::npos);
    EXPECT_EQ(read_tree(a), read_tree(b));
    const auto m = data::DatasetManifest::load(a / data::kManifestFile);
    ASSERT_EQ(m.splits.size(), 2u);
    EXPECT_EQ(m.splits[0].name, "train");
    EXPECT_EQ(m.splits[0].end, 24u);
    EXPECT_EQ(m.splits[1].name, "test");
    EXPECT_TRUE(fs::exists(a / "config.ini"));
}

TEST(Cli, SimulateRenderAndSyncRoundTrip) {
    const auto root = fresh_dir("drfuser_cli_pipeline");
    ASSERT_EQ(run({"generate", "--out", (root / "ds").string(), "--keep-video"}).code, 0);
    auto r = run({"simulate", "--video", (root / "ds" / "video").string(), "--out", (root / "sim").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(root / "sim" / "events.bin"), slurp(root / "ds" / "events.bin"));

    write_file(root / "render.ini", "[render]\norigin_us = 0\n");
    for (const char* out : {"ren_a", "ren_b"}) {
        r = run({"render", "--config", (root / "render.ini").string(), "--events", (root / "sim" / "events.bin").string(),
                 "--time-window-us", "100000", "--out", (root / out).string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(read_tree(root / "ren_a"), read_tree(root / "ren_b"));
    const auto stream = events::read_event_file(root / "sim" / "events.bin");
    auto rc = events::RenderConfig::fixed_count(stream.width, stream.height);
    rc.mode = events::RenderMode::time_window;
    rc.window_us = 100000;
    rc.window_origin_us = 0;
    const auto frames = events::render_frames(stream, rc);
    std::istringstream index(slurp(root / "ren_a" / "frames.csv"));
    std::string line;
    std::getline(index, line);
    std::size_t n = 0;
    while (std::getline(index, line)) {
        ASSERT_LT(n, frames.size());
        std::uint64_t pos = 0, neg = 0;
        for (auto c : frames[n].positive) pos += c;
        for (auto c : frames[n].negative) neg += c;
        char expect[128];
        std::snprintf(expect, sizeof expect, "%zu,%lld,%lld,%llu,%llu,frames/%06zu.ppm", n,
                      static_cast<long long>(frames[n].start_us), static_cast<long long>(frames[n].end_us),
                      static_cast<unsigned long long>(pos), static_cast<unsigned long long>(neg), n);
        EXPECT_EQ(line, expect);
        ++n;
    }
    EXPECT_EQ(n, frames.size());
    EXPECT_EQ(run({"render", "--events", (root / "sim" / "events.bin").string(), "--events-per-frame", "10",
                   "--time-window-us", "5", "--out", (root / "ren_c").string()})
                  .code,
              1);

    // Samples are taken at the end of each window, so every match is exact.
    r = run({"sync", "--base", (root / "ds" / "samples.csv").string(), "--stream",
             (root / "ren_a" / "frames.csv").string(), "--out", (root / "sync").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream sync(slurp(root / "sync" / "sync.csv"));
    std::getline(sync, line);
    EXPECT_EQ(line, "base_index,base_us,frames_index,frames_us,frames_dt_us");
    std::getline(sync, line);
    EXPECT_EQ(line, "0,100000,0,100000,0");
}

TEST(Cli, SyncPicksNearestWithEarlierTieBreak) {
    const auto root = fresh_dir("drfuser_cli_sync");
    fs::create_directories(root);
    write_file(root / "base.csv", "timestamp_us\n10\n20\n35\n");
    write_file(root / "other.csv", "id,t_us\n0,0\n1,15\n2,25\n3,100\n");
    const auto r = run({"sync", "--base", (root / "base.csv").string(), "--stream", (root / "other.csv").string(),
                        "--out", (root / "out").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(root / "out" / "sync.csv"),
              "base_index,base_us,other_index,other_us,other_dt_us\n0,10,1,15,5\n1,20,1,15,-5\n2,35,2,25,-10\n");
    write_file(root / "broken.csv", "t_us\n5\nfive\n");
    EXPECT_EQ(run({"sync", "--base", (root / "base.csv").string(), "--stream", (root / "broken.csv").string(),
                   "--out", (root / "out2").string()})
                  .code,
              2);
}

TEST(Cli, CorruptDatasetIsDataError) {
    const auto root = straight_dataset("drfuser_cli_corrupt");
    const auto events = root / "ds" / data::kEventsFile;
    fs::resize_file(events, fs::file_size(events) - 3);
    const auto r = run({"train", "--dataset", (root / "ds").string(), "--out", (root / "run").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("events.bin"), std::string::npos) << r.err;
}

TEST(Cli, TrainIsRepeatableAndEvalMatchesItsReport) {
    const auto root = straight_dataset("drfuser_cli_train");
    write_file(root / "run.ini", "[scenario]\nseed = 9\n[train]\nbatch_size = 4\n[decoder]\nkeep_prob = 0.8\n");
    for (const char* out : {"run_a", "run_b"}) {
        const auto r = run({"train", "--config", (root / "run.ini").string(), "--dataset", (root / "ds").string(),
                            "--out", (root / out).string(), "--seed", "3", "--steps", "6", "--eval-every", "6",
                            "--target-mae", "1e-9", "--lr", "1e-3"});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    const auto ha = TrainHistory::read_csv(root / "run_a" / kHistoryFile);
    const auto hb = TrainHistory::read_csv(root / "run_b" / kHistoryFile);
    ASSERT_EQ(ha.steps.size(), 6u);
    ASSERT_EQ(hb.steps.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(ha.steps[i].loss, hb.steps[i].loss) << i;
    EXPECT_EQ(slurp(root / "run_a" / kLastCheckpoint), slurp(root / "run_b" / kLastCheckpoint));
    EXPECT_NE(slurp(root / "run_a" / "config.ini").find("keep_prob = 0.8"), std::string::npos);

    const auto manifest = nlohmann::json::parse(slurp(root / "run_a" / "run_manifest.json"));
    EXPECT_EQ(manifest.at("steps"), 6);
    EXPECT_EQ(manifest.at("stop_reason"), "step limit");
    const double reported = manifest.at("final_train").at("mae").get<double>();

    const auto r = run({"eval", "--checkpoint", (root / "run_a" / kLastCheckpoint).string(), "--dataset",
                        (root / "ds").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream metrics(slurp(root / "run_a" / "eval" / "metrics.csv"));
    std::string line;
    std::getline(metrics, line);
    std::getline(metrics, line);
    const double mae = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_NEAR(mae, reported, 1e-7);

    const auto p = run({"plot", "--history", (root / "run_a" / kHistoryFile).string(), "--predictions",
                        (root / "run_a" / "eval" / "predictions.csv").string(), "--out", (root / "plots").string()});
    ASSERT_EQ(p.code, 0) << p.err;
    for (const char* f : {"loss.svg", "loss.csv", "steering.svg", "steering.csv", "config.ini"})
        EXPECT_TRUE(fs::exists(root / "plots" / f)) << f;
    EXPECT_EQ(slurp(root / "plots" / "steering.svg").rfind("<svg", 0), 0u);
}

TEST(Cli, DivergentTrainingExitsWithNumericCode) {
    const auto root = straight_dataset("drfuser_cli_diverge");
    const auto r = run({"train", "--dataset", (root / "ds").string(), "--out", (root / "run").string(), "--lr",
                        "1e30", "--steps", "20"});
    EXPECT_EQ(r.code, 3) << r.out << r.err;
    EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
}
