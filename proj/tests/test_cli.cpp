#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gripsense/cli.hpp"

namespace gs = gripsense;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "gripsense_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("gripsense");
    for (const auto& a : args) argv.push_back(a.c_str());
    return gs::run_subcommand(static_cast<int>(argv.size()), argv.data());
}

std::string fixture(const std::string& name) {
    return std::string(GRIPSENSE_FIXTURE_DIR) + "/" + name;
}

nlohmann::json read_json(const std::string& path) {
    return nlohmann::json::parse(gs::read_file(path));
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run({"gen-pulse", "--bogus"}), 1);
    EXPECT_EQ(run({}), 1);
    EXPECT_EQ(run({"no-such-command"}), 1);
    EXPECT_EQ(run({"simulate"}), 1);  // missing required --scenario
    EXPECT_EQ(run({"--help"}), 0);
}

TEST(Cli, MissingInputFileExitsTwo) {
    std::string out = temp_dir("missing_input");
    EXPECT_EQ(run({"eval", "--pred", out + "/nope.jsonl", "--truth", out + "/nope2.jsonl",
                   "--out", out}),
              2);
}

TEST(Cli, GenPulseWritesTrackAndSchedule) {
    std::string out = temp_dir("gen_pulse");
    ASSERT_EQ(run({"gen-pulse", "--duration", "1.0", "--out", out}), 0);
    gs::AudioBuffer buf = gs::read_wav(out + "/pulse.wav");
    EXPECT_EQ(buf.sample_rate, 48000);
    ASSERT_EQ(buf.channels.size(), 1u);
    EXPECT_EQ(buf.frames(), 48000u);
    gs::PulseSchedule sched = gs::read_schedule(out + "/schedule.json");
    EXPECT_EQ(sched.starts.size(), 10u);

    EXPECT_EQ(run({"gen-pulse", "--duration", "0.01", "--out", out}), 1);
}

TEST(Cli, SimulateScenarioFixtureProducesFullLengthWav) {
    std::string out = temp_dir("simulate_fixture");
    ASSERT_EQ(run({"simulate", "--scenario", fixture("session_a.json"), "--seed", "5",
                   "--out", out}),
              0);
    gs::AudioBuffer buf = gs::read_wav(out + "/session.wav");
    ASSERT_EQ(buf.channels.size(), 2u);
    // recording length is exactly duration x sample rate per channel
    EXPECT_EQ(buf.frames(), static_cast<size_t>(12.0 * 48000));
    gs::PulseSchedule sched = gs::read_schedule(out + "/schedule.json");
    EXPECT_EQ(sched.starts.size(), 120u);
    gs::TruthTrack truth = gs::read_truth(out + "/truth.jsonl");
    EXPECT_EQ(truth.labels.size(), 120u);
}

TEST(Cli, EvalPerfectPredictionReportsUnitDetectionRate) {
    std::string out = temp_dir("eval_perfect");
    gs::TruthTrack truth;
    truth.dt_s = 0.1;
    truth.labels.assign(300, 0);
    for (int i = 40; i < 120; ++i) truth.labels[static_cast<size_t>(i)] = 1;
    for (int i = 180; i < 260; ++i) truth.labels[static_cast<size_t>(i)] = 1;
    gs::write_truth(out + "/truth.jsonl", truth);
    gs::write_instances(out + "/pred.jsonl", gs::truth_instances(truth));
    ASSERT_EQ(run({"eval", "--pred", out + "/pred.jsonl", "--truth", out + "/truth.jsonl",
                   "--out", out}),
              0);
    nlohmann::json rep = read_json(out + "/report.json");
    EXPECT_DOUBLE_EQ(rep.at("instances").at("detection_rate").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(rep.at("instances").at("median_start_error").get<double>(), 0.0);
    EXPECT_DOUBLE_EQ(rep.at("instances").at("median_end_error").get<double>(), 0.0);
    EXPECT_EQ(rep.at("instances").at("spurious").get<long>(), 0);
    EXPECT_EQ(rep.at("instances").at("matched").get<long>(), 2);
}

TEST(Cli, DemoScriptsAreValidAndBalanced) {
    auto surfaces = gs::default_surfaces();
    for (const gs::SessionScript& s :
         {gs::cli_detail::demo_train_script(), gs::cli_detail::demo_test_script()}) {
        ASSERT_NO_THROW(s.validate(surfaces));
        double handheld_s = 0.0;
        for (size_t i = 0; i < s.events.size(); ++i) {
            double t_end = i + 1 < s.events.size() ? s.events[i + 1].time_s : s.duration_s;
            if (gs::find_surface(surfaces, s.events[i].surface).handheld())
                handheld_s += t_end - s.events[i].time_s;
        }
        EXPECT_GT(handheld_s / s.duration_s, 0.2);
        EXPECT_LT(handheld_s / s.duration_s, 0.8);
    }
}

// exercises every subcommand on a small session: simulate -> featurize ->
// train -> monitor -> eval, checking files and exit codes at each stage
TEST(Cli, FullPipelineSmoke) {
    std::string out = temp_dir("full_pipeline");

    // one-epoch config keeps the training step quick
    gs::PipelineConfig cfg;
    cfg.train.epochs = 1;
    gs::write_config(out + "/config.cfg", cfg);

    gs::SessionScript script;
    script.duration_s = 12.0;
    script.noise.lowband_level = 0.1;
    script.noise.wideband_level = 0.01;
    const char* tour[] = {"mount", "hand_texting", "cup_holder", "hand_still", "console",
                          "hand_scrolling"};
    for (int i = 0; i < 6; ++i) script.events.push_back({double(i) * 2.0, tour[i]});
    gs::write_script(out + "/script.json", script);

    ASSERT_EQ(run({"simulate", "--scenario", out + "/script.json", "--config",
                   out + "/config.cfg", "--seed", "9", "--out", out}),
              0);
    ASSERT_EQ(run({"featurize", "--audio", out + "/session.wav", "--schedule",
                   out + "/schedule.json", "--config", out + "/config.cfg",
                   "--dump-features", "--out", out}),
              0);
    EXPECT_TRUE(fs::exists(out + "/features/" + gs::feature_file_name(0, 0)));
    EXPECT_TRUE(fs::exists(out + "/features/" + gs::feature_file_name(119, 1)));

    ASSERT_EQ(run({"train", "--features", out + "/features", "--truth", out + "/truth.jsonl",
                   "--schedule", out + "/schedule.json", "--config", out + "/config.cfg",
                   "--seed", "9", "--out", out}),
              0);
    EXPECT_TRUE(fs::exists(out + "/model_mic0.gsnn"));
    EXPECT_TRUE(fs::exists(out + "/model_mic1.gsnn"));
    nlohmann::json train_rep = read_json(out + "/train_report.json");
    EXPECT_EQ(train_rep.at("pulses").get<int>(), 120);
    EXPECT_EQ(train_rep.at("mic0").at("epoch_mean_loss").size(), 1u);

    ASSERT_EQ(run({"monitor", "--audio", out + "/session.wav", "--schedule",
                   out + "/schedule.json", "--model0", out + "/model_mic0.gsnn", "--model1",
                   out + "/model_mic1.gsnn", "--truth", out + "/truth.jsonl", "--config",
                   out + "/config.cfg", "--online", "--out", out}),
              0);
    EXPECT_TRUE(fs::exists(out + "/events.jsonl"));
    auto instances = gs::read_instances(out + "/instances.jsonl");
    EXPECT_FALSE(instances.empty());
    auto scores = gs::read_scores_csv(out + "/scores.csv");
    EXPECT_EQ(scores.size(), 120u);

    ASSERT_EQ(run({"eval", "--pred", out + "/instances.jsonl", "--truth",
                   out + "/truth.jsonl", "--scores", out + "/scores.csv", "--out", out}),
              0);
    nlohmann::json rep = read_json(out + "/report.json");
    EXPECT_TRUE(rep.contains("instances"));
    EXPECT_TRUE(rep.at("pulses").contains("eer"));
    EXPECT_TRUE(fs::exists(out + "/roc.csv"));
    EXPECT_EQ(rep.at("pulses").at("count").get<int>(), 120);
}
