#pragma once
// command-line front end.  every subcommand is a thin adapter over the
// library: it parses flags, loads inputs, calls the same functions the tests
// call, and writes the outputs atomically.  exit codes: 0 success, 1 bad
// input or flags, 2 i/o failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gripsense/eval.hpp"
#include "gripsense/pipeline.hpp"

namespace gripsense {
namespace cli_detail {

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    bool seed_set = false;
};

inline PipelineConfig load_config(const CommonFlags& f) {
    PipelineConfig cfg;
    if (!f.config_path.empty()) cfg = read_config(f.config_path);
    if (f.seed_set) {
        // one master seed overrides every stage's seed
        cfg.seed = f.seed;
        cfg.train.seed = f.seed;
    }
    cfg.validate();
    return cfg;
}

inline void print_effective_config(const PipelineConfig& cfg) {
    std::cout << "---- effective config ----\n"
              << format_config(cfg) << "--------------------------\n";
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

// ---------------- shared stage drivers ----------------
struct TrainedPair {
    Cnn<float> mic0;
    Cnn<float> mic1;
    nlohmann::json report;
};

inline std::vector<Tensor3<float>> mic_tensors(const std::vector<PulseImages>& pulses,
                                               int mic) {
    std::vector<Tensor3<float>> out;
    out.reserve(pulses.size());
    for (const auto& p : pulses)
        out.push_back(tensor_from_image<float>(p.mics[static_cast<size_t>(mic)]));
    return out;
}

inline TrainedPair train_both_mics(const PipelineConfig& cfg,
                                   const std::vector<PulseImages>& pulses,
                                   const std::vector<int>& labels) {
    TrainedPair tp;
    TrainReport rep[2];
    for (int mic = 0; mic < 2; ++mic) {
        TrainConfig tc = cfg.train;
        tc.seed = mix_seed(cfg.train.seed, static_cast<uint64_t>(mic));
        log_info("training mic %d model on %zu pulses (%d epochs)", mic, pulses.size(),
                 tc.epochs);
        // tensors are built per mic and freed right after training to keep
        // the peak footprint at one mic's worth of training data
        auto tensors = mic_tensors(pulses, mic);
        Cnn<float> model = train(tensors, labels, tc, &rep[mic]);
        if (mic == 0) tp.mic0 = std::move(model);
        else tp.mic1 = std::move(model);
    }
    auto scores = score_pulses(pulses, tp.mic0, tp.mic1);
    long correct[2] = {0, 0};
    long fused_correct = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        for (int mic = 0; mic < 2; ++mic)
            if ((scores[i].mic[static_cast<size_t>(mic)] >= 0.5 ? 1 : 0) == labels[i])
                ++correct[mic];
        if ((scores[i].handheld ? 1 : 0) == labels[i]) ++fused_correct;
    }
    const double n = double(scores.size());
    tp.report = {{"pulses", pulses.size()},
                 {"mic0", {{"epoch_mean_loss", rep[0].epoch_mean_loss},
                           {"train_accuracy", double(correct[0]) / n}}},
                 {"mic1", {{"epoch_mean_loss", rep[1].epoch_mean_loss},
                           {"train_accuracy", double(correct[1]) / n}}},
                 {"fused_train_accuracy", double(fused_correct) / n}};
    return tp;
}

struct MonitorOutcome {
    std::vector<PulseScore> scores;
    std::vector<size_t> pulse_indices;
    CorrectedChunks corrected;
    std::vector<MonitorEvent> events;
    std::vector<PhoneUseInstance> instances;
};

// featurizes and scores the recording pulse by pulse, never holding more
// than one pulse's images, so session length is bounded by disk not memory
inline MonitorOutcome run_monitor(const PipelineConfig& cfg, const AudioBuffer& recording,
                                  const PulseSchedule& schedule, const Cnn<float>& mic0,
                                  const Cnn<float>& mic1, bool online) {
    MonitorOutcome o;
    featurize_session_stream(recording, schedule, cfg, [&](PulseImages&& p) {
        o.scores.push_back(score_pulse(p, mic0, mic1));
        o.pulse_indices.push_back(p.pulse_index);
    });
    auto stream = to_status_samples(o.scores, cfg.monitor);
    if (online) {
        StreamingMonitor mon(cfg.monitor);
        for (const auto& s : stream)
            for (const auto& e : mon.push_sample(s)) o.events.push_back(e);
        o.corrected = mon.finish();
    } else {
        o.corrected = flip_and_merge(chunk_sequence(stream), cfg.monitor);
        o.events = events_from_chunks(o.corrected, cfg.monitor);
    }
    o.instances = extract_instances(o.corrected, cfg.monitor);
    return o;
}

inline nlohmann::json eval_report(const std::vector<PhoneUseInstance>& pred,
                                  const TruthTrack& truth,
                                  const std::vector<ScoreRow>* scores, RocCurve* roc_out) {
    auto tins = truth_instances(truth);
    double duration = double(truth.labels.size()) * truth.dt_s;
    TimingReport tr = match_instances(pred, tins, 0.3, duration);
    nlohmann::json rep;
    rep["instances"] = {{"detection_rate", tr.detection_rate},
                        {"matched", tr.matched},
                        {"missed", tr.unmatched_truth},
                        {"spurious", tr.spurious_pred},
                        {"median_start_error", tr.median_start},
                        {"median_end_error", tr.median_end},
                        {"fp_per_hour", tr.fp_per_hour},
                        {"duration_s", tr.duration_s}};
    if (scores && !scores->empty()) {
        std::vector<std::pair<double, int>> samples;
        samples.reserve(scores->size());
        for (const auto& r : *scores) samples.emplace_back(r.score, r.truth);
        RocCurve curve = roc(samples);
        ClassificationReport cr = classification_report(samples, 0.5);
        rep["pulses"] = {{"count", samples.size()},  {"accuracy", cr.accuracy},
                         {"tpr", cr.tpr},            {"fpr", cr.fpr},
                         {"eer", eer(curve)},        {"tp", cr.tp},
                         {"fp", cr.fp},              {"tn", cr.tn},
                         {"fn", cr.fn}};
        if (roc_out) *roc_out = std::move(curve);
    }
    return rep;
}

inline void write_roc_csv(const std::string& path, const RocCurve& curve) {
    std::string out = "threshold,tpr,fpr\n";
    for (const auto& p : curve.points) {
        out += detail::fmt_double(p.threshold);
        out += ",";
        out += detail::fmt_double(p.tpr);
        out += ",";
        out += detail::fmt_double(p.fpr);
        out += "\n";
    }
    write_file_atomic(path, out);
}

// ---------------- subcommand bodies ----------------
inline void cmd_gen_pulse(const PipelineConfig& cfg, const std::string& out,
                          double duration_s) {
    PulseTrain t = pulse_train(cfg.pulse, duration_s);
    if (t.schedule.starts.empty())
        throw ValidationError("gen-pulse: duration is shorter than one pulse");
    ensure_dir(out);
    AudioBuffer buf;
    buf.sample_rate = cfg.pulse.sample_rate;
    buf.channels = {std::move(t.samples)};
    write_wav(join(out, "pulse.wav"), buf, WavFormat::float32);
    write_schedule(join(out, "schedule.json"), t.schedule);
    std::cout << "wrote " << t.schedule.starts.size() << " pulses over "
              << detail::fmt_double(duration_s) << " s to " << out << "\n";
}

inline void cmd_simulate(const PipelineConfig& cfg, const std::string& out,
                         const std::string& scenario_path) {
    SessionScript script = read_script(scenario_path);
    SimResult sim = simulate_session(script, cfg.pulse, cfg.seed);
    ensure_dir(out);
    write_wav(join(out, "session.wav"), sim.audio, WavFormat::float32);
    write_schedule(join(out, "schedule.json"), sim.schedule);
    write_truth(join(out, "truth.jsonl"), sim.truth);
    std::cout << "simulated " << detail::fmt_double(script.duration_s) << " s ("
              << sim.schedule.starts.size() << " pulses, " << script.events.size()
              << " surface events) to " << out << "\n";
}

inline void cmd_featurize(const PipelineConfig& cfg, const std::string& out,
                          const std::string& audio_path, const std::string& schedule_path,
                          bool dump_features) {
    AudioBuffer rec = read_wav(audio_path);
    PulseSchedule sched = read_schedule(schedule_path);
    const std::string feat_dir = join(out, "features");
    if (dump_features) {
        ensure_dir(out);
        ensure_dir(feat_dir);
    }
    // features are written as they are produced so long recordings never
    // accumulate in memory
    AlignmentSummary res = featurize_session_stream(rec, sched, cfg, [&](PulseImages&& p) {
        if (!dump_features) return;
        for (int mic = 0; mic < 2; ++mic)
            write_feature_matrix(join(feat_dir, feature_file_name(p.pulse_index, mic)),
                                 feature_matrix_from_image(p.mics[static_cast<size_t>(mic)]));
    });
    std::cout << "aligned " << res.aligned << " of " << sched.starts.size()
              << " pulses (initial delay " << res.initial_delay << " samples, "
              << res.resyncs.size() << " drift corrections)\n";
    for (const auto& [pi, d] : res.resyncs)
        log_info("resync at pulse %zu: delay now %ld samples", pi, d);
    if (dump_features)
        std::cout << "wrote " << res.aligned * 2 << " feature files to " << feat_dir << "\n";
}

inline void cmd_train(const PipelineConfig& cfg, const std::string& out,
                      const std::string& features_dir, const std::string& truth_path,
                      const std::string& schedule_path) {
    std::vector<PulseImages> pulses = read_feature_dir(features_dir);
    TruthTrack truth = read_truth(truth_path);
    PulseSchedule sched = read_schedule(schedule_path);
    std::vector<size_t> indices;
    for (const auto& p : pulses) indices.push_back(p.pulse_index);
    std::vector<int> labels = labels_at_pulses(truth, sched, indices);
    TrainedPair tp = train_both_mics(cfg, pulses, labels);
    ensure_dir(out);
    save_model(tp.mic0, join(out, "model_mic0.gsnn"));
    save_model(tp.mic1, join(out, "model_mic1.gsnn"));
    write_file_atomic(join(out, "train_report.json"), tp.report.dump(2) + "\n");
    std::cout << "trained both microphone models; fused train accuracy "
              << detail::fmt_double(tp.report.at("fused_train_accuracy").get<double>())
              << "\n";
}

inline void cmd_monitor(const PipelineConfig& cfg, const std::string& out,
                        const std::string& audio_path, const std::string& schedule_path,
                        const std::string& model0_path, const std::string& model1_path,
                        bool online, const std::string& truth_path) {
    AudioBuffer rec = read_wav(audio_path);
    PulseSchedule sched = read_schedule(schedule_path);
    Cnn<float> m0 = load_model(model0_path);
    Cnn<float> m1 = load_model(model1_path);
    MonitorOutcome mo = run_monitor(cfg, rec, sched, m0, m1, online);
    ensure_dir(out);
    write_events(join(out, "events.jsonl"), mo.events);
    write_instances(join(out, "instances.jsonl"), mo.instances);
    if (!truth_path.empty()) {
        TruthTrack truth = read_truth(truth_path);
        std::vector<int> labels = labels_at_pulses(truth, sched, mo.pulse_indices);
        std::vector<ScoreRow> rows;
        for (size_t i = 0; i < mo.scores.size(); ++i)
            rows.push_back({static_cast<long>(i), mo.scores[i].fused, labels[i]});
        write_scores_csv(join(out, "scores.csv"), rows);
    }
    long handheld = 0;
    for (const auto& ins : mo.instances)
        if (ins.kind == 1) ++handheld;
    std::cout << (online ? "online" : "offline") << " monitor: " << mo.instances.size()
              << " instances (" << handheld << " handheld), " << mo.events.size()
              << " events\n";
}

inline void cmd_eval(const std::string& out, const std::string& pred_path,
                     const std::string& truth_path, const std::string& scores_path) {
    std::vector<PhoneUseInstance> pred = read_instances(pred_path);
    TruthTrack truth = read_truth(truth_path);
    std::vector<ScoreRow> scores;
    if (!scores_path.empty()) scores = read_scores_csv(scores_path);
    RocCurve curve;
    nlohmann::json rep =
        eval_report(pred, truth, scores.empty() ? nullptr : &scores, &curve);
    ensure_dir(out);
    write_file_atomic(join(out, "report.json"), rep.dump(2) + "\n");
    if (!scores.empty()) write_roc_csv(join(out, "roc.csv"), curve);
    std::cout << rep.dump(2) << "\n";
}

// scripted sessions for the one-shot demo: a balanced surface tour for
// training and a grab/drop schedule for the monitored session
inline SessionScript demo_train_script() {
    SessionScript s;
    s.duration_s = 40.0;
    s.noise.lowband_level = 0.1;
    s.noise.wideband_level = 0.01;
    const char* tour[] = {"mount",   "hand_texting",   "cup_holder", "hand_still",
                          "console", "hand_scrolling", "seat",       "hand_calling"};
    for (int i = 0; i < 8; ++i) s.events.push_back({double(i) * 5.0, tour[i]});
    return s;
}

inline SessionScript demo_test_script() {
    SessionScript s;
    s.duration_s = 60.0;
    s.noise.lowband_level = 0.1;
    s.noise.wideband_level = 0.01;
    s.events = {{0.0, "mount"},          {5.0, "hand_texting"}, {12.0, "cup_holder"},
                {20.0, "hand_still"},    {24.0, "console"},     {33.0, "hand_scrolling"},
                {45.0, "seat"},          {50.0, "hand_calling"},{56.0, "mount"}};
    return s;
}

inline void cmd_demo(const PipelineConfig& cfg, const std::string& out) {
    ensure_dir(out);
    const std::string train_dir = join(out, "train");
    const std::string test_dir = join(out, "test");
    ensure_dir(train_dir);
    ensure_dir(test_dir);
    write_config(join(out, "config.cfg"), cfg);

    // simulate ---------------------------------------------------------
    SessionScript train_script = demo_train_script();
    SessionScript test_script = demo_test_script();
    write_script(join(train_dir, "script.json"), train_script);
    write_script(join(test_dir, "script.json"), test_script);
    log_info("demo: simulating %g s training session", train_script.duration_s);
    SimResult sim_tr = simulate_session(train_script, cfg.pulse, mix_seed(cfg.seed, 0xA1));
    write_wav(join(train_dir, "session.wav"), sim_tr.audio, WavFormat::float32);
    write_schedule(join(train_dir, "schedule.json"), sim_tr.schedule);
    write_truth(join(train_dir, "truth.jsonl"), sim_tr.truth);
    log_info("demo: simulating %g s monitored session", test_script.duration_s);
    SimResult sim_te = simulate_session(test_script, cfg.pulse, mix_seed(cfg.seed, 0xB2));
    write_wav(join(test_dir, "session.wav"), sim_te.audio, WavFormat::float32);
    write_schedule(join(test_dir, "schedule.json"), sim_te.schedule);
    write_truth(join(test_dir, "truth.jsonl"), sim_te.truth);

    // train ------------------------------------------------------------
    FeaturizeResult feats_tr = featurize_session(sim_tr.audio, sim_tr.schedule, cfg);
    std::vector<size_t> tr_indices;
    for (const auto& p : feats_tr.pulses) tr_indices.push_back(p.pulse_index);
    std::vector<int> tr_labels = labels_at_pulses(sim_tr.truth, sim_tr.schedule, tr_indices);
    TrainedPair tp = train_both_mics(cfg, feats_tr.pulses, tr_labels);
    feats_tr.pulses.clear();
    feats_tr.pulses.shrink_to_fit();
    save_model(tp.mic0, join(out, "model_mic0.gsnn"));
    save_model(tp.mic1, join(out, "model_mic1.gsnn"));
    write_file_atomic(join(out, "train_report.json"), tp.report.dump(2) + "\n");

    // monitor ------------------------------------------------------------
    MonitorOutcome mo = run_monitor(cfg, sim_te.audio, sim_te.schedule, tp.mic0, tp.mic1, false);
    write_events(join(test_dir, "events.jsonl"), mo.events);
    write_instances(join(test_dir, "instances.jsonl"), mo.instances);
    std::vector<int> te_labels =
        labels_at_pulses(sim_te.truth, sim_te.schedule, mo.pulse_indices);
    std::vector<ScoreRow> rows;
    for (size_t i = 0; i < mo.scores.size(); ++i)
        rows.push_back({static_cast<long>(i), mo.scores[i].fused, te_labels[i]});
    write_scores_csv(join(test_dir, "scores.csv"), rows);

    // eval ---------------------------------------------------------------
    RocCurve curve;
    nlohmann::json rep = eval_report(mo.instances, sim_te.truth, &rows, &curve);
    rep["train"] = tp.report;
    write_file_atomic(join(out, "report.json"), rep.dump(2) + "\n");
    write_roc_csv(join(out, "roc.csv"), curve);
    std::cout << rep.dump(2) << "\n";
}

}  // namespace cli_detail

inline int run_subcommand(int argc, const char* const* argv) {
    using namespace cli_detail;
    CLI::App app{"ultrasonic handheld-phone-use detection pipeline"};
    app.require_subcommand(1);

    CommonFlags common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "pipeline config file");
        sub->add_option("--out", common.out_dir, "output directory (default: out)");
        sub->add_option("--seed", common.seed, "master seed overriding every stage seed")
            ->check([](const std::string& s) {
                return s.empty() ? std::string("may not be empty") : std::string();
            })
            ->each([&](const std::string&) { common.seed_set = true; });
    };

    double gen_duration = 10.0;
    CLI::App* gen = app.add_subcommand("gen-pulse", "write the probe pulse track and schedule");
    add_common(gen);
    gen->add_option("--duration", gen_duration, "track length in seconds");

    std::string scenario_path;
    CLI::App* sim = app.add_subcommand("simulate", "synthesize a scripted driving session");
    add_common(sim);
    sim->add_option("--scenario", scenario_path, "session script json")->required();

    std::string audio_path, schedule_path;
    bool dump_features = false;
    CLI::App* feat =
        app.add_subcommand("featurize", "align a recording and extract per-pulse features");
    add_common(feat);
    feat->add_option("--audio", audio_path, "stereo session wav")->required();
    feat->add_option("--schedule", schedule_path, "pulse schedule json")->required();
    feat->add_flag("--dump-features", dump_features, "write per-pulse feature files");

    std::string features_dir, truth_path;
    CLI::App* tr = app.add_subcommand("train", "train the two per-microphone classifiers");
    add_common(tr);
    tr->add_option("--features", features_dir, "feature directory from featurize")->required();
    tr->add_option("--truth", truth_path, "truth status stream jsonl")->required();
    tr->add_option("--schedule", schedule_path, "pulse schedule json")->required();

    std::string model0_path, model1_path;
    bool online = false;
    CLI::App* mon = app.add_subcommand("monitor", "detect handheld phone use in a recording");
    add_common(mon);
    mon->add_option("--audio", audio_path, "stereo session wav")->required();
    mon->add_option("--schedule", schedule_path, "pulse schedule json")->required();
    mon->add_option("--model0", model0_path, "mic 0 model file")->required();
    mon->add_option("--model1", model1_path, "mic 1 model file")->required();
    mon->add_flag("--online", online, "process the stream sample by sample");
    mon->add_option("--truth", truth_path, "optional truth jsonl; enables scores.csv");

    std::string pred_path, scores_path;
    CLI::App* ev = app.add_subcommand("eval", "score detections against the truth stream");
    add_common(ev);
    ev->add_option("--pred", pred_path, "predicted instances jsonl")->required();
    ev->add_option("--truth", truth_path, "truth status stream jsonl")->required();
    ev->add_option("--scores", scores_path, "optional per-pulse score csv");

    CLI::App* demo =
        app.add_subcommand("demo", "simulate, train, monitor, and evaluate in one run");
    add_common(demo);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        PipelineConfig cfg = load_config(common);
        print_effective_config(cfg);
        if (gen->parsed()) cmd_gen_pulse(cfg, common.out_dir, gen_duration);
        else if (sim->parsed()) cmd_simulate(cfg, common.out_dir, scenario_path);
        else if (feat->parsed())
            cmd_featurize(cfg, common.out_dir, audio_path, schedule_path, dump_features);
        else if (tr->parsed())
            cmd_train(cfg, common.out_dir, features_dir, truth_path, schedule_path);
        else if (mon->parsed())
            cmd_monitor(cfg, common.out_dir, audio_path, schedule_path, model0_path,
                        model1_path, online, truth_path);
        else if (ev->parsed()) cmd_eval(common.out_dir, pred_path, truth_path, scores_path);
        else if (demo->parsed()) cmd_demo(cfg, common.out_dir);
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace gripsense
