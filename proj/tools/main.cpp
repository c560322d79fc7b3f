// facediff command-line front end. One binary, five subcommands covering the
// whole loop on synthetic data:
//
//   gen-data   write a synthetic dataset directory
//   train      stage-1 base or stage-2 adapter training, resumable
//   sample     guided sampling from a trained run
//   eval       sample from a run and score it against a dataset
//   verify     self-contained correctness checks against naive references
//
// Exit codes: 0 success, 1 runtime or verification failure, 2 usage error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "facediff/data.hpp"
#include "facediff/evaluation.hpp"
#include "facediff/reference.hpp"
#include "facediff/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace facediff;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::string abs_path(const std::string& p) {
    return fs::absolute(fs::path(p)).lexically_normal().string();
}

// Directory outputs refuse to clobber silently: a non-empty target needs an
// explicit --force.
void prepare_dir(const fs::path& dir, bool force, const char* what) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw std::invalid_argument(std::string(what) + " " + dir.string() +
                                    " is not empty (pass --force to overwrite)");
    fs::create_directories(dir);
}

json model_config_to_json(const ModelConfig& mc) {
    return json{{"version", 1},
                {"generator", generator_config_to_json(mc.gen)},
                {"n_styles", mc.n_styles},
                {"n_emotions", mc.n_emotions},
                {"d_style", mc.d_style},
                {"d_emotion", mc.d_emotion},
                {"d_intensity", mc.d_intensity}};
}

ModelConfig model_config_from_json(const json& j) {
    if (j.at("version").get<int64_t>() != 1)
        throw std::runtime_error("unsupported model config version");
    ModelConfig mc;
    mc.gen = generator_config_from_json(j.at("generator"));
    mc.n_styles = j.at("n_styles").get<int64_t>();
    mc.n_emotions = j.at("n_emotions").get<int64_t>();
    mc.d_style = j.at("d_style").get<int64_t>();
    mc.d_emotion = j.at("d_emotion").get<int64_t>();
    mc.d_intensity = j.at("d_intensity").get<int64_t>();
    mc.validate();
    return mc;
}

// Files a training run directory owns.
struct RunPaths {
    fs::path dir, config, model, trainer, state, log;

    explicit RunPaths(const fs::path& d)
        : dir(d),
          config(d / "resolved_config.json"),
          model(d / "model.fdck"),
          trainer(d / "trainer.fdck"),
          state(d / "train_state.json"),
          log(d / "train_log.txt") {}
};

json read_run_config(const fs::path& run_dir) {
    const fs::path p = RunPaths(run_dir).config;
    if (!fs::exists(p))
        throw std::runtime_error(run_dir.string() + " is not a run directory (no " +
                                 p.filename().string() + ")");
    json j = load_json_file(p.string());
    if (j.value("kind", "") != "facediff-run")
        throw std::runtime_error(p.string() + ": not a run config");
    if (j.at("version").get<int64_t>() != 1)
        throw std::runtime_error(p.string() + ": unsupported run config version");
    return j;
}

void check_dataset_model(const SyntheticSpec& spec, const ModelConfig& mc,
                         const AUVocabulary& vocab) {
    if (spec.n_styles != mc.n_styles || spec.n_emotions != mc.n_emotions)
        throw std::runtime_error("dataset labels do not match the model (dataset " +
                                 std::to_string(spec.n_styles) + " styles / " +
                                 std::to_string(spec.n_emotions) + " emotions, model " +
                                 std::to_string(mc.n_styles) + " / " +
                                 std::to_string(mc.n_emotions) + ")");
    if (spec.d_audio != mc.gen.d_audio)
        throw std::runtime_error("dataset audio width " + std::to_string(spec.d_audio) +
                                 " does not match the model's " +
                                 std::to_string(mc.gen.d_audio));
    if (vocab.size() != mc.gen.vocab_size)
        throw std::runtime_error("AU vocabulary size " + std::to_string(vocab.size()) +
                                 " does not match the model's " +
                                 std::to_string(mc.gen.vocab_size));
}

std::vector<TrainExample<double>> example_views(const std::vector<ClipRecord>& clips) {
    std::vector<TrainExample<double>> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back({&c.audio, &c.coarse, &c.motion, &c.fine});
    return out;
}

std::vector<int> lip_indices(const SyntheticSpec& spec) {
    std::vector<int> out;
    for (const auto& n : spec.lip_channels) out.push_back(channel_index(n));
    return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataOpts {
    std::string out;
    std::string profile = "desk";
    int64_t clips = 500;
    int64_t frames = 50;
    double event_rate = 1.2;
    uint64_t seed = 0;
    bool force = false;
};

int cmd_gen_data(const GenDataOpts& o) {
    const auto vocab = AUVocabulary::builtin_default();
    SyntheticSpec spec = SyntheticSpec::desk();
    if (o.profile == "paper") spec.d_audio = 64;
    spec.n_clips = o.clips;
    spec.t_frames = o.frames;
    spec.au_event_rate = o.event_rate;
    spec.seed = o.seed;
    spec.validate(vocab);

    prepare_dir(o.out, o.force, "dataset directory");
    fs::remove_all(fs::path(o.out) / "clips");

    auto clips = generate_dataset(spec, vocab);
    save_dataset(o.out, spec, vocab, clips);
    std::cout << "wrote " << clips.size() << " clips (" << spec.t_frames << " frames, "
              << kNumChannels << " channels) to " << o.out;
    if (!clips.empty()) std::cout << ", content hash " << dataset_hash(clips);
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string data, out, base_checkpoint;
    std::string profile = "desk";
    int stage = 1;
    int64_t steps = 1000;
    int64_t batch = 8;
    int64_t checkpoint_every = 0;
    double lr = 1e-4;
    double p_swap = 0.5;
    double p_audio_drop = 0.2;
    double p_coarse_drop = 0.2;
    uint64_t seed = 0;
    int64_t d_model = 0, n_heads = 0, n_blocks = 0, t_hat = 0;  // 0 = profile default
    bool resume = false;
    bool force = false;
    bool steps_set = false;  // --steps given explicitly (matters for --resume)
};

int cmd_train(const TrainOpts& o) {
    const auto vocab = AUVocabulary::builtin_default();
    RunPaths rp(o.out);

    // Resolve the run configuration: from flags on a fresh run, from the
    // stored config on --resume (where only the step budget may change).
    json stored;
    if (o.resume) stored = read_run_config(rp.dir);

    std::string data_dir;
    if (o.resume)
        data_dir = stored.at("data").get<std::string>();
    else if (!o.data.empty())
        data_dir = o.data;
    else
        throw std::invalid_argument("--data is required for a fresh run");

    auto [spec, clips] = load_dataset(data_dir, vocab);
    if (clips.empty()) throw std::runtime_error(data_dir + " has no clips to train on");

    ModelConfig mc;
    TrainConfig tc;
    int stage = o.stage;
    uint64_t seed = o.seed;
    std::string base_ckpt;
    int64_t ckpt_every = o.checkpoint_every;

    if (o.resume) {
        mc = model_config_from_json(stored.at("model"));
        stage = stored.at("stage").get<int>();
        seed = stored.at("seed").get<uint64_t>();
        base_ckpt = stored.at("base_checkpoint").is_null()
                        ? std::string()
                        : stored.at("base_checkpoint").get<std::string>();
        ckpt_every = stored.at("checkpoint_every").get<int64_t>();
        tc.stage = stage;
        tc.batch = stored.at("batch").get<int64_t>();
        tc.lr = stored.at("lr").get<double>();
        tc.p_swap = stored.at("p_swap").get<double>();
        tc.dropout.p_audio = stored.at("dropout").at("p_audio").get<double>();
        tc.dropout.p_coarse = stored.at("dropout").at("p_coarse").get<double>();
        tc.iterations = o.steps_set ? o.steps : stored.at("steps").get<int64_t>();
        tc.seed = seed;
    } else {
        mc = o.profile == "paper" ? ModelConfig::paper() : ModelConfig::desk();
        if (o.d_model > 0) mc.gen.d_model = o.d_model;
        if (o.n_heads > 0) mc.gen.n_heads = o.n_heads;
        if (o.n_blocks > 0) mc.gen.n_blocks = o.n_blocks;
        if (o.t_hat > 0) mc.gen.t_hat = o.t_hat;
        mc.gen.d_audio = spec.d_audio;
        mc.n_styles = spec.n_styles;
        mc.n_emotions = spec.n_emotions;
        mc.validate();

        if (stage == 2) {
            if (o.base_checkpoint.empty())
                throw std::invalid_argument("stage 2 requires --base-checkpoint");
            base_ckpt = o.base_checkpoint;
            if (fs::is_directory(base_ckpt))
                base_ckpt = (fs::path(base_ckpt) / "model.fdck").string();
        } else if (!o.base_checkpoint.empty()) {
            throw std::invalid_argument("--base-checkpoint only applies to --stage 2");
        }

        tc.stage = stage;
        tc.batch = o.batch;
        tc.lr = o.lr;
        tc.p_swap = o.p_swap;
        tc.dropout.p_audio = o.p_audio_drop;
        tc.dropout.p_coarse = o.p_coarse_drop;
        tc.iterations = o.steps;
        tc.seed = seed;
        tc.validate();
    }
    check_dataset_model(spec, mc, vocab);

    // Model, optimizer, and the training random stream. A fresh stage-2 run
    // loads the stage-1 weights first and inserts the adapter on top (which
    // freezes everything already present); a resumed run rebuilds the full
    // parameter set and then restores it from its own checkpoint.
    Model<double> model(mc, seed);
    Rng rng = substream(seed, "train");
    if (stage == 2 && !o.resume) {
        load_checkpoint(model.gen.ps, base_ckpt);
        model.gen.insert_adapter();
    } else if (stage == 2) {
        model.gen.insert_adapter();
        load_checkpoint(model.gen.ps, rp.model.string());
    } else if (o.resume) {
        load_checkpoint(model.gen.ps, rp.model.string());
    }

    AdamWConfig oc;
    oc.lr = tc.lr;
    AdamW<double> opt(oc, model.gen.ps);
    if (o.resume) {
        load_trainer_state(opt, model.gen.ps, rp.trainer.string());
        json st = load_json_file(rp.state.string());
        rng.state = st.at("rng_state").get<uint64_t>();
    }

    if (!o.resume) {
        prepare_dir(rp.dir, o.force, "run directory");
        for (const auto& p : {rp.config, rp.model, rp.trainer, rp.state, rp.log}) fs::remove(p);
    }

    json rcfg{{"version", 1},
              {"kind", "facediff-run"},
              {"command", "train"},
              {"stage", stage},
              {"profile", mc.gen.profile},
              {"data", abs_path(data_dir)},
              {"seed", seed},
              {"steps", tc.iterations},
              {"batch", tc.batch},
              {"lr", tc.lr},
              {"p_swap", tc.p_swap},
              {"dropout", {{"p_audio", tc.dropout.p_audio}, {"p_coarse", tc.dropout.p_coarse}}},
              {"checkpoint_every", ckpt_every},
              {"base_checkpoint", base_ckpt.empty() ? json(nullptr) : json(abs_path(base_ckpt))},
              {"model", model_config_to_json(mc)}};
    save_json_file(rcfg, rp.config.string());

    std::ofstream log(rp.log, o.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open " + rp.log.string());

    // Checkpoints capture model, optimizer, and the rng state at the moment
    // the next batch would be drawn, so a resumed run replays the unbroken
    // one exactly.
    auto save_state = [&](int64_t iteration, bool complete) {
        save_checkpoint(model.gen.ps, rp.model.string());
        save_trainer_state(opt, model.gen.ps, rp.trainer.string());
        json st{{"version", 1},
                {"iteration", iteration},
                {"rng_state", rng.state},
                {"complete", complete}};
        save_json_file(st, rp.state.string());
    };

    const int64_t remaining = std::max<int64_t>(0, tc.iterations - opt.step_count);
    std::cout << "training stage " << stage << " on " << clips.size() << " clips: step "
              << opt.step_count << "/" << tc.iterations << ", " << remaining << " to go\n";

    auto examples = example_views(clips);
    NoiseSchedule ns = NoiseSchedule::cosine(mc.gen.t_hat);
    auto records = train(model, ns, vocab, examples, tc, opt, rng,
                         [&](const TrainStepRecord& rec) {
                             char line[192];
                             std::snprintf(line, sizeof line,
                                           "iter=%lld branch=%s loss=%.17g supervised=%lld "
                                           "wall_ms=%.3f",
                                           static_cast<long long>(rec.iteration),
                                           rec.branch.c_str(), rec.loss,
                                           static_cast<long long>(rec.supervised), rec.wall_ms);
                             log << line << "\n";
                             if (rec.iteration % 500 == 0) {
                                 std::cout << "  iter " << rec.iteration << "/" << tc.iterations
                                           << " loss " << rec.loss << "\n"
                                           << std::flush;
                                 log.flush();
                             }
                             if (ckpt_every > 0 && rec.iteration % ckpt_every == 0)
                                 save_state(rec.iteration, false);
                         });
    log.flush();
    save_state(opt.step_count, opt.step_count >= tc.iterations);

    std::cout << "stage " << stage << " done at step " << opt.step_count;
    if (!records.empty()) std::cout << ", last loss " << records.back().loss;
    std::cout << ", run saved to " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleOpts {
    std::string run, out, data, fine_file;
    int64_t clip = 0;
    uint64_t seed = 0;
    double alpha = 2.0;
    double beta = 0.0;
};

int cmd_sample(const SampleOpts& o) {
    const auto vocab = AUVocabulary::builtin_default();
    json rcfg = read_run_config(o.run);
    const ModelConfig mc = model_config_from_json(rcfg.at("model"));
    const int stage = rcfg.at("stage").get<int>();
    if (!o.fine_file.empty() && stage != 2)
        throw std::invalid_argument(
            "--fine needs a run with the fine-grained adapter (stage 2)");

    Model<double> model(mc, 0);
    if (stage == 2) model.gen.insert_adapter();
    load_checkpoint(model.gen.ps, RunPaths(o.run).model.string());

    const std::string data_dir = o.data.empty() ? rcfg.at("data").get<std::string>() : o.data;
    auto [spec, clips] = load_dataset(data_dir, vocab);
    check_dataset_model(spec, mc, vocab);
    if (o.clip < 0 || o.clip >= int64_t(clips.size()))
        throw std::invalid_argument("--clip " + std::to_string(o.clip) +
                                    " out of range (dataset has " +
                                    std::to_string(clips.size()) + " clips)");
    const ClipRecord& clip = clips[size_t(o.clip)];
    const int64_t T = clip.motion.t();

    FineCondition fine;
    if (!o.fine_file.empty()) {
        json fj = load_json_file(o.fine_file);
        fine = fine_from_json(fj.at("triplets"));
        fine.validate(T, vocab);
    }
    const bool have_fine = !fine.empty();

    const DTensor coarse = model.enc.encode_value(clip.coarse);
    ConditionBundle<double> cond{&clip.audio.features, &coarse, nullptr};
    DTensor grid;
    GuidanceConfig<double> guidance;
    guidance.alpha_scale = o.alpha;
    guidance.beta_scale = o.beta;
    if (have_fine) {
        grid = build_fine_grid<double>(fine, vocab, T);
        cond.fine = &grid;
        guidance.cfg_mask = build_cfg_mask<double>(fine, T);
    }

    NoiseSchedule ns = NoiseSchedule::cosine(mc.gen.t_hat);
    Rng rng = substream(o.seed, "sample", uint64_t(o.clip));
    MotionSequence<double> motion = sample(model.gen, ns, T, cond, guidance, rng, spec.fps);

    fs::path outp(o.out);
    if (outp.has_parent_path()) fs::create_directories(outp.parent_path());
    write_motion(o.out, motion);
    json echo{{"version", 1},
              {"kind", "facediff-sample"},
              {"command", "sample"},
              {"run", abs_path(o.run)},
              {"data", abs_path(data_dir)},
              {"clip", o.clip},
              {"seed", o.seed},
              {"alpha", o.alpha},
              {"beta", o.beta},
              {"fine", have_fine ? fine_to_json(fine) : json(nullptr)},
              {"frames", T},
              {"fps", spec.fps}};
    save_json_file(echo, o.out + ".json");
    std::cout << "wrote " << o.out << " (" << T << " frames, alpha=" << o.alpha
              << ", beta=" << o.beta << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string data, run, out, samples;
    int64_t n = 16;
    uint64_t seed = 0;
    double alpha = 2.0;
    double beta = 0.0;
    bool with_fine = false;
    bool force = false;
};

int cmd_eval(const EvalOpts& o) {
    const auto vocab = AUVocabulary::builtin_default();
    json rcfg = read_run_config(o.run);
    const ModelConfig mc = model_config_from_json(rcfg.at("model"));
    const int stage = rcfg.at("stage").get<int>();
    if (o.with_fine && stage != 2)
        throw std::invalid_argument(
            "--with-fine needs a run with the fine-grained adapter (stage 2)");
    if (o.beta != 0.0 && !o.with_fine)
        throw std::invalid_argument("--beta only has an effect together with --with-fine");

    auto [spec, clips] = load_dataset(o.data, vocab);
    check_dataset_model(spec, mc, vocab);
    const int64_t n_eval = std::min<int64_t>(o.n, int64_t(clips.size()));
    if (n_eval < 1) throw std::runtime_error(o.data + " has no clips to evaluate");

    const fs::path out_dir = o.out.empty() ? fs::path(o.run) / "eval" : fs::path(o.out);
    prepare_dir(out_dir, o.force, "eval output directory");

    Model<double> model(mc, 0);
    if (stage == 2) model.gen.insert_adapter();
    load_checkpoint(model.gen.ps, RunPaths(o.run).model.string());

    // One generated sequence per evaluated clip: read from --samples when
    // given (ids must match the dataset), sample internally otherwise.
    if (!o.samples.empty()) {
        for (const auto& entry : fs::directory_iterator(o.samples)) {
            if (entry.path().extension() != ".motion") continue;
            const std::string stem = entry.path().stem().string();
            char* end = nullptr;
            const long long id = std::strtoll(stem.c_str(), &end, 10);
            if (stem.empty() || *end != '\0' || id < 0 || id >= int64_t(clips.size()))
                throw std::runtime_error("sample " + entry.path().filename().string() +
                                         " has no matching dataset clip");
        }
    }
    NoiseSchedule ns = NoiseSchedule::cosine(mc.gen.t_hat);
    std::vector<MotionSequence<double>> gens;
    gens.reserve(size_t(n_eval));
    for (int64_t i = 0; i < n_eval; ++i) {
        const ClipRecord& clip = clips[size_t(i)];
        if (!o.samples.empty()) {
            const fs::path p = fs::path(o.samples) / (clip_stem(i) + ".motion");
            if (!fs::exists(p))
                throw std::runtime_error("samples directory is missing " +
                                         p.filename().string() + " for dataset clip " +
                                         std::to_string(i));
            MotionSequence<double> m = read_motion(p.string());
            if (m.t() != clip.motion.t() || m.d() != clip.motion.d())
                throw std::runtime_error(p.string() + ": shape differs from the dataset clip");
            gens.push_back(std::move(m));
        } else {
            const int64_t T = clip.motion.t();
            const DTensor coarse = model.enc.encode_value(clip.coarse);
            ConditionBundle<double> cond{&clip.audio.features, &coarse, nullptr};
            DTensor grid;
            GuidanceConfig<double> guidance;
            guidance.alpha_scale = o.alpha;
            guidance.beta_scale = o.beta;
            if (o.with_fine && !clip.fine.empty()) {
                grid = build_fine_grid<double>(clip.fine, vocab, T);
                cond.fine = &grid;
                guidance.cfg_mask = build_cfg_mask<double>(clip.fine, T);
            }
            Rng rng = substream(o.seed, "eval-sample", uint64_t(i));
            gens.push_back(sample(model.gen, ns, T, cond, guidance, rng, spec.fps));
        }
    }

    // Per-clip metrics. The lip-error baseline is the best constant
    // predictor for the clip: its own per-channel temporal mean.
    const std::vector<int> lips = lip_indices(spec);
    struct PerClip {
        int64_t clip = 0;
        int emotion = 0, pred = -1;
        double intensity = 0, lve_v = 0, base_v = 0;
        bool has_cr = false;
        double cr_mean = 0;
        int64_t cr_entries = 0, cr_flagged = 0;
    };
    std::vector<PerClip> rows;
    for (int64_t i = 0; i < n_eval; ++i) {
        const ClipRecord& clip = clips[size_t(i)];
        PerClip r;
        r.clip = i;
        r.emotion = clip.coarse.emotion_id;
        r.intensity = clip.coarse.intensity;
        r.lve_v = lve(gens[size_t(i)], clip.motion, lips);

        MotionSequence<double> base = clip.motion;
        for (int64_t c = 0; c < base.d(); ++c) {
            double mean = 0.0;
            for (int64_t t = 0; t < base.t(); ++t) mean += clip.motion.frames.at(t, c);
            mean /= double(base.t());
            for (int64_t t = 0; t < base.t(); ++t) base.frames.at(t, c) = mean;
        }
        r.base_v = lve(base, clip.motion, lips);

        if (!clip.fine.empty() && (o.with_fine || !o.samples.empty())) {
            ControlReport rep = control_report(gens[size_t(i)], clip.fine, vocab);
            r.has_cr = true;
            r.cr_mean = rep.mean_cr;
            r.cr_entries = int64_t(rep.entries.size());
            r.cr_flagged = rep.n_flagged;
        }
        rows.push_back(r);
    }

    // Emotion classifier: train on the labeled part of the full dataset
    // (nonzero intensity), hold out 30% for the ground-truth accuracy, and
    // score the generated clips that carry a label.
    json clf_json = nullptr;
    {
        std::vector<int64_t> pool;
        for (int64_t i = 0; i < int64_t(clips.size()); ++i)
            if (clips[size_t(i)].coarse.intensity > 0.0) pool.push_back(i);
        if (pool.size() >= 4) {
            Rng prng = substream(o.seed, "eval-split");
            for (size_t i = pool.size(); i > 1; --i)
                std::swap(pool[i - 1], pool[size_t(prng.uniform_int(int64_t(i)))]);
            const size_t n_train =
                std::min(pool.size() - 1, std::max<size_t>(1, pool.size() * 7 / 10));

            std::vector<DTensor> train_m, test_m;
            std::vector<int> train_y, test_y;
            for (size_t k = 0; k < pool.size(); ++k) {
                const ClipRecord& clip = clips[size_t(pool[k])];
                (k < n_train ? train_m : test_m).push_back(clip.motion.frames);
                (k < n_train ? train_y : test_y).push_back(clip.coarse.emotion_id);
            }

            EmotionClassifier<double> clf(ClassifierConfig::desk(mc.n_emotions), o.seed);
            ClassifierTrainConfig ctc;
            ctc.seed = o.seed;
            train_classifier(clf, train_m, train_y, ctc);
            const double acc_gt = classifier_accuracy(clf, test_m, test_y);

            std::vector<DTensor> gen_m;
            std::vector<int> gen_y;
            for (auto& r : rows) {
                r.pred = clf.classify(gens[size_t(r.clip)].frames).label;
                if (r.intensity > 0.0) {
                    gen_m.push_back(gens[size_t(r.clip)].frames);
                    gen_y.push_back(r.emotion);
                }
            }
            clf_json = json{{"accuracy_gt", acc_gt},
                            {"accuracy_generated",
                             gen_m.empty() ? json(nullptr)
                                           : json(classifier_accuracy(clf, gen_m, gen_y))},
                            {"n_train", n_train},
                            {"n_test", pool.size() - n_train},
                            {"n_generated_labeled", gen_m.size()}};
        }
    }

    // Sample diversity: per-dimension spread of the flattened sequences,
    // generated vs ground truth, when shapes are uniform.
    json div_json = nullptr;
    if (n_eval >= 2) {
        bool uniform = true;
        for (const auto& g : gens)
            uniform = uniform && g.t() == gens[0].t() && g.d() == gens[0].d();
        if (uniform) {
            const int64_t w = gens[0].t() * gens[0].d();
            DTensor fg(n_eval, w), ft(n_eval, w);
            for (int64_t i = 0; i < n_eval; ++i)
                for (int64_t k = 0; k < w; ++k) {
                    fg.at(i, k) = gens[size_t(i)].frames.v[size_t(k)];
                    ft.at(i, k) = clips[size_t(i)].motion.frames.v[size_t(k)];
                }
            div_json = json{{"generated", diversity(fg)}, {"gt", diversity(ft)}};
        }
    }

    // Aggregates are plain means of the per-clip rows written below.
    double lve_sum = 0, base_sum = 0, cr_wsum = 0;
    int64_t cr_entries = 0, cr_flagged = 0, cr_clips = 0;
    for (const auto& r : rows) {
        lve_sum += r.lve_v;
        base_sum += r.base_v;
        if (r.has_cr && r.cr_entries > 0) {
            cr_wsum += r.cr_mean * double(r.cr_entries);
            cr_entries += r.cr_entries;
            ++cr_clips;
        }
        if (r.has_cr) cr_flagged += r.cr_flagged;
    }
    const double lve_mean = lve_sum / double(n_eval);
    const double base_mean = base_sum / double(n_eval);

    json report{{"version", 1},
                {"kind", "facediff-eval"},
                {"command", "eval"},
                {"data", abs_path(o.data)},
                {"run", abs_path(o.run)},
                {"samples", o.samples.empty() ? json(nullptr) : json(abs_path(o.samples))},
                {"n_clips", n_eval},
                {"seed", o.seed},
                {"alpha", o.alpha},
                {"beta", o.beta},
                {"with_fine", o.with_fine},
                {"lve",
                 {{"mean", lve_mean},
                  {"baseline_mean", base_mean},
                  {"ratio", base_mean > 0 ? json(lve_mean / base_mean) : json(nullptr)}}},
                {"classifier", clf_json},
                {"diversity", div_json}};
    if (cr_entries > 0)
        report["cr"] = json{{"mean", cr_wsum / double(cr_entries)},
                            {"n_entries", cr_entries},
                            {"n_clips", cr_clips},
                            {"n_flagged", cr_flagged}};
    json per_clip = json::array();
    for (const auto& r : rows) {
        json row{{"clip", r.clip},
                 {"emotion_id", r.emotion},
                 {"intensity", r.intensity},
                 {"pred_emotion_id", r.pred >= 0 ? json(r.pred) : json(nullptr)},
                 {"lve", r.lve_v},
                 {"baseline_lve", r.base_v}};
        if (r.has_cr) {
            row["cr_mean"] = r.cr_mean;
            row["cr_entries"] = r.cr_entries;
            row["cr_flagged"] = r.cr_flagged;
        }
        per_clip.push_back(row);
    }
    report["per_clip"] = per_clip;
    save_json_file(report, (out_dir / "report.json").string());

    std::ofstream csv(out_dir / "per_clip.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot open " + (out_dir / "per_clip.csv").string());
    csv << "clip,emotion_id,intensity,pred_emotion_id,lve,baseline_lve,cr_mean,cr_entries,"
           "cr_flagged\n";
    for (const auto& r : rows) {
        char line[256];
        std::snprintf(line, sizeof line, "%lld,%d,%.17g,", static_cast<long long>(r.clip),
                      r.emotion, r.intensity);
        csv << line;
        if (r.pred >= 0) csv << r.pred;
        std::snprintf(line, sizeof line, ",%.17g,%.17g,", r.lve_v, r.base_v);
        csv << line;
        if (r.has_cr) {
            std::snprintf(line, sizeof line, "%.17g,%lld,%lld", r.cr_mean,
                          static_cast<long long>(r.cr_entries),
                          static_cast<long long>(r.cr_flagged));
            csv << line;
        } else {
            csv << ",,";
        }
        csv << "\n";
    }
    csv.flush();

    std::cout << "eval: " << n_eval << " clips, lve " << lve_mean << " (baseline " << base_mean
              << ")\n";
    if (!clf_json.is_null()) {
        std::cout << "eval: classifier gt " << clf_json["accuracy_gt"].get<double>();
        if (!clf_json["accuracy_generated"].is_null())
            std::cout << ", generated " << clf_json["accuracy_generated"].get<double>();
        std::cout << "\n";
    }
    if (cr_entries > 0)
        std::cout << "eval: control rate " << cr_wsum / double(cr_entries) << " over "
                  << cr_entries << " entries\n";
    if (!div_json.is_null())
        std::cout << "eval: diversity generated " << div_json["generated"].get<double>()
                  << ", gt " << div_json["gt"].get<double>() << "\n";
    std::cout << "report written to " << out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify: correctness checks against the naive reference implementations
// ---------------------------------------------------------------------------

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& msg) {
    if (!ok) throw CheckFailure(msg);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

class Verifier {
public:
    void run(const std::string& name, const std::function<void()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                 .count();
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2fs", s);
            std::cout << "PASS " << name << " (" << buf << ")\n";
            ++passed_;
        } catch (const std::exception& e) {
            std::cout << "FAIL " << name << ": " << e.what() << "\n";
            ++failed_;
        }
    }

    void skip(const std::string& name, const std::string& why) {
        std::cout << "SKIP " << name << " (" << why << ")\n";
        ++skipped_;
    }

    int finish() const {
        std::cout << "verify: " << passed_ << " passed, " << failed_ << " failed, " << skipped_
                  << " skipped\n";
        return failed_ == 0 ? 0 : 1;
    }

private:
    int passed_ = 0, failed_ = 0, skipped_ = 0;
};

GeneratorConfig verify_gen_config() {
    GeneratorConfig gc;
    gc.d = 5;
    gc.d_model = 16;
    gc.n_heads = 2;
    gc.n_blocks = 1;
    gc.d_audio = 4;
    gc.d_cond = 6;
    gc.half_width = 1;
    gc.ffn_mult = 2;
    gc.t_hat = 20;
    return gc;
}

DTensor random_tensor(int64_t r, int64_t c, Rng& rng, double scale = 1.0) {
    DTensor t(r, c);
    for (auto& x : t.v) x = scale * rng.normal();
    return t;
}

// Central finite difference of `loss` in one scalar of `p`.
double fd_derivative(Parameter<double>& p, size_t idx, double h,
                     const std::function<double()>& loss) {
    const double saved = p.value.v[idx];
    p.value.v[idx] = saved + h;
    const double up = loss();
    p.value.v[idx] = saved - h;
    const double dn = loss();
    p.value.v[idx] = saved;
    return (up - dn) / (2.0 * h);
}

// Compare analytic gradients in `ps` against finite differences of `loss`
// for a few entries of every parameter.
void check_grads(ParamStore<double>& ps, const std::function<double()>& loss, double h,
                 double tol) {
    for (auto& p : ps.items) {
        if (!p->trainable) continue;  // frozen params accumulate no gradient
        const size_t n = p->value.v.size();
        std::vector<size_t> picks{0};
        if (n > 2) picks.push_back(n / 2);
        if (n > 1) picks.push_back(n - 1);
        for (size_t idx : picks) {
            const double ana = p->grad.v[idx];
            const double num = fd_derivative(*p, idx, h, loss);
            if (std::abs(ana) < 1e-10 && std::abs(num) < 1e-10) continue;
            check(rel_err(ana, num) < tol,
                  p->name + "[" + std::to_string(idx) + "]: analytic " + std::to_string(ana) +
                      " vs numeric " + std::to_string(num));
        }
    }
}

void check_schedule() {
    const auto ns = NoiseSchedule::cosine(100);
    check(int64_t(ns.alpha_bar.size()) == 100, "schedule length");
    check(ns.alpha.size() == ns.alpha_bar.size(), "per-step/cumulative length mismatch");
    check(ns.alpha_bar.front() >= 0.95, "alpha_bar should start near 1");
    check(ns.alpha_bar.back() <= 0.01, "alpha_bar should end near 0");
    double running = 1.0;
    for (size_t i = 0; i < ns.alpha.size(); ++i) {
        // The clip applies to the per-step retention; the cumulative product
        // is free to fall below it.
        check(ns.alpha[i] >= 0.001 && ns.alpha[i] <= 0.999, "per-step clip range");
        running *= ns.alpha[i];
        check(std::abs(ns.alpha_bar[i] - running) <= 1e-12,
              "cumulative product mismatch at step " + std::to_string(i));
        if (i > 0) check(ns.alpha_bar[i] < ns.alpha_bar[i - 1], "strict monotone decrease");
    }
}

void check_noise_stats() {
    const auto ns = NoiseSchedule::cosine(100);
    DTensor clean(200, 100);
    for (auto& x : clean.v) x = 0.7;
    Rng rng = substream(7, "verify-noise");
    const DTensor noisy = forward_noise(clean, 100, ns, rng);
    const double ab = ns.alpha_bar.back();
    const double n = double(noisy.v.size());
    double mean = 0;
    for (double x : noisy.v) mean += x;
    mean /= n;
    double var = 0;
    for (double x : noisy.v) var += (x - mean) * (x - mean);
    var /= n;
    const double want_mean = std::sqrt(ab) * 0.7;
    const double want_std = std::sqrt(1.0 - ab);
    check(std::abs(mean - want_mean) < 4.0 * want_std / std::sqrt(n),
          "mean " + std::to_string(mean) + " vs " + std::to_string(want_mean));
    check(std::abs(std::sqrt(var) - want_std) < 4.0 * want_std / std::sqrt(2.0 * n),
          "std " + std::to_string(std::sqrt(var)) + " vs " + std::to_string(want_std));
}

// The closed-form forward noising must agree in distribution with literally
// iterating the single-step process.
void check_noise_iterated() {
    const auto ns = NoiseSchedule::cosine(20);
    std::vector<double> alpha(ns.alpha_bar.size());
    for (size_t i = 0; i < alpha.size(); ++i)
        alpha[i] = i == 0 ? ns.alpha_bar[0] : ns.alpha_bar[i] / ns.alpha_bar[i - 1];
    const int64_t tau = 10;
    const double ab = ns.alpha_bar[size_t(tau - 1)];
    DTensor clean(1, 1);
    clean.v[0] = 0.5;

    Rng ra = substream(11, "verify-closed"), rb = substream(12, "verify-iterated");
    const int reps = 4000;
    double sa = 0, sa2 = 0, sb = 0, sb2 = 0;
    for (int i = 0; i < reps; ++i) {
        const double a = forward_noise(clean, tau, ns, ra).v[0];
        const double b = ref::iterated_forward_noise(clean, tau, alpha, rb).v[0];
        sa += a;
        sa2 += a * a;
        sb += b;
        sb2 += b * b;
    }
    const double ma = sa / reps, mb = sb / reps;
    const double va = sa2 / reps - ma * ma, vb = sb2 / reps - mb * mb;
    const double want_mean = std::sqrt(ab) * 0.5, want_var = 1.0 - ab;
    const double se = std::sqrt(want_var / reps);
    check(std::abs(ma - want_mean) < 5 * se, "closed-form mean off: " + std::to_string(ma));
    check(std::abs(mb - want_mean) < 5 * se, "iterated mean off: " + std::to_string(mb));
    check(std::abs(va - want_var) < 0.15, "closed-form variance off: " + std::to_string(va));
    check(std::abs(vb - want_var) < 0.15, "iterated variance off: " + std::to_string(vb));
}

// Zero-initialized tensors (write-back projections, biases) block gradient
// flow into everything behind them; nudge them off zero so the comparison
// exercises real propagation paths.
void fill_zero_params(ParamStore<double>& ps, Rng& rng) {
    for (auto& p : ps.items) {
        bool all_zero = true;
        for (double x : p->value.v)
            if (x != 0.0) {
                all_zero = false;
                break;
            }
        if (all_zero)
            for (auto& x : p->value.v) x = 0.05 * rng.normal();
    }
}

void check_grad_generator() {
    GeneratorConfig gc = verify_gen_config();

    Rng rng = substream(9, "verify-grad");
    const int64_t T = 6;
    const DTensor noisy = random_tensor(T, gc.d, rng);
    const DTensor target = random_tensor(T, gc.d, rng);
    const DTensor audio = random_tensor(T, gc.d_audio, rng);
    const DTensor coarse = random_tensor(1, gc.d_cond, rng);
    DTensor grid(T, gc.vocab_size);
    for (auto& x : grid.v) x = rng.bernoulli(0.3) ? 1.0 : 0.0;
    const int64_t tau = 13;

    auto run_pass = [&](Generator<double>& gen, const ConditionBundle<double>& cond,
                        uint64_t fill_seed) {
        Rng fill = substream(9, "verify-grad-fill", fill_seed);
        fill_zero_params(gen.ps, fill);
        auto loss = [&] {
            auto l = simple_loss(gen.forward(constant(noisy), tau, cond), constant(target));
            return double(l->val.v[0]);
        };
        gen.ps.zero_grads();
        auto l = simple_loss(gen.forward(constant(noisy), tau, cond), constant(target));
        backward(l);
        check_grads(gen.ps, loss, 1e-4, 1e-4);
    };

    {
        // Pass 1: plain generator, every parameter trainable.
        Generator<double> gen(gc, 123);
        const ConditionBundle<double> cond{&audio, &coarse, nullptr};
        run_pass(gen, cond, 1);
    }
    {
        // Pass 2: adapter inserted. The base freezes, so only the adapter
        // parameters carry gradients; the fine grid drives their path.
        Generator<double> gen(gc, 123);
        gen.insert_adapter();
        const ConditionBundle<double> cond{&audio, &coarse, &grid};
        run_pass(gen, cond, 2);
    }
}

void check_grad_encoder() {
    ModelConfig mc;
    mc.gen = verify_gen_config();
    mc.n_styles = 3;
    mc.n_emotions = 3;
    mc.d_style = 4;
    mc.d_emotion = 4;
    mc.d_intensity = 2;
    Model<double> model(mc, 321);

    Rng rng = substream(10, "verify-grad-enc");
    const int64_t T = 6;
    const DTensor noisy = random_tensor(T, mc.gen.d, rng);
    const DTensor target = random_tensor(T, mc.gen.d, rng);
    const DTensor audio = random_tensor(T, mc.gen.d_audio, rng);
    const CoarseCondition cc{1, 2, 0.8};
    const int64_t tau = 7;

    auto loss = [&] {
        ConditionNodes<double> nodes;
        nodes.audio = constant(audio);
        nodes.coarse = model.enc(cc);
        auto l = simple_loss(model.gen.forward(constant(noisy), tau, nodes), constant(target));
        return double(l->val.v[0]);
    };
    model.gen.ps.zero_grads();
    {
        ConditionNodes<double> nodes;
        nodes.audio = constant(audio);
        nodes.coarse = model.enc(cc);
        auto l = simple_loss(model.gen.forward(constant(noisy), tau, nodes), constant(target));
        backward(l);
    }
    check_grads(model.gen.ps, loss, 1e-4, 1e-4);

    // Rows of the embedding tables that the condition never selects must
    // stay at exactly zero gradient.
    const auto* style = model.gen.ps.find("cond.style");
    const auto* emotion = model.gen.ps.find("cond.emotion");
    check(style && emotion, "encoder tables present");
    for (int64_t j = 0; j < style->value.cols(); ++j)
        check(style->grad.at(0, j) == 0.0 && style->grad.at(2, j) == 0.0,
              "unselected style rows must have zero gradient");
    for (int64_t j = 0; j < emotion->value.cols(); ++j)
        check(emotion->grad.at(0, j) == 0.0 && emotion->grad.at(1, j) == 0.0,
              "unselected emotion rows must have zero gradient");
}

void check_cfg_endpoints() {
    Rng rng = substream(21, "verify-cfg");
    for (int inst = 0; inst < 20; ++inst) {
        const int64_t T = 3 + rng.uniform_int(8), d = 1 + rng.uniform_int(6);
        const DTensor g_null = random_tensor(T, d, rng);
        const DTensor g_ac = random_tensor(T, d, rng);
        const DTensor g_acf = random_tensor(T, d, rng);
        DTensor mask(T, 1);
        for (auto& x : mask.v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;

        GuidanceConfig<double> g;
        g.cfg_mask = mask;
        g.alpha_scale = 1.0;
        g.beta_scale = 0.0;
        check(cfg_combine(g_null, g_ac, g_acf, g) == g_ac, "alpha=1, beta=0 must equal G_AC");
        g.alpha_scale = 0.0;
        check(cfg_combine(g_null, g_ac, g_acf, g) == g_null, "alpha=0, beta=0 must equal G_null");
    }
}

void check_cfg_oracle() {
    Rng rng = substream(22, "verify-cfg-oracle");
    for (int inst = 0; inst < 50; ++inst) {
        const int64_t T = 2 + rng.uniform_int(9), d = 1 + rng.uniform_int(7);
        const DTensor g_null = random_tensor(T, d, rng);
        const DTensor g_ac = random_tensor(T, d, rng);
        const DTensor g_acf = random_tensor(T, d, rng);
        DTensor mask(T, 1);
        for (auto& x : mask.v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double alpha = rng.uniform(-3.0, 3.0), beta = rng.uniform(-3.0, 3.0);

        GuidanceConfig<double> g;
        g.alpha_scale = alpha;
        g.beta_scale = beta;
        g.cfg_mask = mask;
        const DTensor fast = cfg_combine(g_null, g_ac, g_acf, g);
        const DTensor slow = ref::cfg_combine(g_null, g_ac, g_acf, alpha, beta, mask);
        for (size_t k = 0; k < fast.v.size(); ++k)
            check(std::abs(fast.v[k] - slow.v[k]) < 1e-9,
                  "cfg disagrees with the literal form at entry " + std::to_string(k));
    }
}

// The output projection starts at zero, which would map any internal
// difference to the same constant; give both generators the same nonzero
// projection so internal state actually reaches the output.
void share_nonzero_out_proj(Generator<double>& a, Generator<double>& b, uint64_t seed) {
    Rng rng = substream(seed, "verify-out-proj");
    auto* pa = a.ps.find("out.w");
    auto* pb = b.ps.find("out.w");
    check(pa != nullptr && pb != nullptr, "output projection parameter missing");
    for (size_t i = 0; i < pa->value.v.size(); ++i)
        pa->value.v[i] = pb->value.v[i] = 0.1 * rng.normal();
}

void check_adapter_identity() {
    GeneratorConfig gc = verify_gen_config();
    Generator<double> base(gc, 5);
    Generator<double> adapted(gc, 5);
    adapted.insert_adapter();
    share_nonzero_out_proj(base, adapted, 23);

    Rng rng = substream(23, "verify-adapter");
    const int64_t T = 6;
    const DTensor noisy = random_tensor(T, gc.d, rng);
    const DTensor audio = random_tensor(T, gc.d_audio, rng);
    const DTensor coarse = random_tensor(1, gc.d_cond, rng);
    DTensor grid(T, gc.vocab_size);
    for (auto& x : grid.v) x = rng.bernoulli(0.3) ? 1.0 : 0.0;

    const ConditionBundle<double> none;
    const ConditionBundle<double> ac{&audio, &coarse, nullptr};
    const ConditionBundle<double> acf{&audio, &coarse, &grid};
    for (int64_t tau : {int64_t(1), gc.t_hat / 2, gc.t_hat})
        for (const auto* cond : {&none, &ac, &acf})
            check(base.predict_x0(noisy, tau, *cond) == adapted.predict_x0(noisy, tau, *cond),
                  "prediction changed at tau " + std::to_string(tau));

    const auto ns = NoiseSchedule::cosine(gc.t_hat);
    GuidanceConfig<double> g;
    g.alpha_scale = 2.0;
    g.beta_scale = 1.0;
    DTensor mask(T, 1);
    for (int64_t t = 2; t < 5; ++t) mask.at(t, 0) = 1.0;
    g.cfg_mask = mask;
    Rng ra = substream(24, "verify-sample"), rb = substream(24, "verify-sample");
    const auto ma = sample(base, ns, T, acf, g, ra);
    const auto mb = sample(adapted, ns, T, acf, g, rb);
    check(ma.frames == mb.frames, "guided sampling changed after adapter insertion");
}

// Negative control: a corrupted zero-initialized write-back projection must
// break the identity, otherwise the identity check proves nothing.
void check_zero_proj_control() {
    GeneratorConfig gc = verify_gen_config();
    Generator<double> base(gc, 5);
    Generator<double> adapted(gc, 5);
    adapted.insert_adapter();
    share_nonzero_out_proj(base, adapted, 25);

    Rng rng = substream(25, "verify-control");
    const int64_t T = 6;
    const DTensor noisy = random_tensor(T, gc.d, rng);
    const DTensor audio = random_tensor(T, gc.d_audio, rng);
    const DTensor coarse = random_tensor(1, gc.d_cond, rng);
    DTensor grid(T, gc.vocab_size);
    for (auto& x : grid.v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const ConditionBundle<double> acf{&audio, &coarse, &grid};

    auto* zp = adapted.ps.find("adapter.block0.zp.w");
    check(zp != nullptr, "zero-projection parameter missing");
    zp->value.at(0, 0) = 0.05;
    check(!(base.predict_x0(noisy, gc.t_hat / 2, acf) ==
            adapted.predict_x0(noisy, gc.t_hat / 2, acf)),
          "corrupting the zero projection did not change the output");
}

void check_masks_oracle() {
    const auto vocab = AUVocabulary::builtin_default();
    Rng rng = substream(26, "verify-masks");
    for (int inst = 0; inst < 50; ++inst) {
        const int64_t T = 8 + rng.uniform_int(25);
        FineCondition fc;
        const int64_t n_tr = rng.uniform_int(4);
        for (int64_t k = 0; k < n_tr; ++k) {
            Triplet tr;
            const int64_t n_aus = 1 + rng.uniform_int(3);
            for (int64_t a = 0; a < n_aus; ++a)
                tr.aus.push_back(vocab.entries[size_t(rng.uniform_int(vocab.size()))].id);
            tr.start = rng.uniform_int(T - 1);
            tr.end = tr.start + 1 + rng.uniform_int(T - tr.start);
            fc.triplets.push_back(tr);
        }
        check(build_fine_grid<double>(fc, vocab, T) == ref::fine_grid(fc, vocab, T),
              "fine grid disagrees with the reference");
        check(build_ctrl_mask<double>(fc, vocab, T, kNumChannels) ==
                  ref::ctrl_mask(fc, vocab, T, kNumChannels),
              "control mask disagrees with the reference");
        check(build_cfg_mask<double>(fc, T) == ref::cfg_mask(fc, T),
              "cfg mask disagrees with the reference");
    }
}

void check_control_rate_oracle() {
    const auto vocab = AUVocabulary::builtin_default();
    Rng rng = substream(27, "verify-cr");
    for (int inst = 0; inst < 200; ++inst) {
        const int64_t T = 12 + rng.uniform_int(29);
        MotionSequence<double> m;
        m.frames = DTensor(T, kNumChannels);
        for (auto& x : m.frames.v) x = rng.uniform();

        Triplet tr;
        const int64_t n_aus = 1 + rng.uniform_int(3);
        for (int64_t k = 0; k < n_aus; ++k)
            tr.aus.push_back(vocab.entries[size_t(rng.uniform_int(vocab.size()))].id);
        tr.start = rng.uniform_int(T - 1);
        tr.end = tr.start + 1 + rng.uniform_int(T - tr.start);

        const auto fast = control_rate(m, tr, vocab);
        const auto slow = ref::control_rate(m.frames, vocab, tr.aus, tr.start, tr.end, kCrWindow);
        check(fast.size() == slow.size(), "entry count differs from the reference");
        for (size_t k = 0; k < fast.size(); ++k)
            check(fast[k].cr == slow[k], "control rate differs from the reference");
    }
}

void check_binarize_oracle() {
    const auto vocab = AUVocabulary::builtin_default();
    Rng rng = substream(28, "verify-binarize");
    const BinarizeConfig cfg;
    for (int inst = 0; inst < 30; ++inst) {
        const int64_t T = 20 + rng.uniform_int(31);
        MotionSequence<double> m;
        m.frames = DTensor(T, kNumChannels);
        for (auto& x : m.frames.v) x = rng.uniform();

        Rng ra(500 + uint64_t(inst)), rb(500 + uint64_t(inst));
        const FineCondition fast = binarize(m, vocab, cfg, ra);
        const FineCondition slow = ref::binarize(m, vocab, cfg.threshold, cfg.kernel_sizes,
                                                 cfg.merge_gap, cfg.merge_prob, cfg.min_run, rb);
        check(fast.triplets.size() == slow.triplets.size(),
              "triplet count differs from the reference");
        for (size_t k = 0; k < fast.triplets.size(); ++k) {
            check(fast.triplets[k].aus == slow.triplets[k].aus &&
                      fast.triplets[k].start == slow.triplets[k].start &&
                      fast.triplets[k].end == slow.triplets[k].end,
                  "triplet " + std::to_string(k) + " differs from the reference");
        }
    }
}

void check_sampler_determinism() {
    GeneratorConfig gc = verify_gen_config();
    Generator<double> gen(gc, 31);
    Rng rng = substream(29, "verify-sampler");
    const int64_t T = 6;
    const DTensor audio = random_tensor(T, gc.d_audio, rng);
    const DTensor coarse = random_tensor(1, gc.d_cond, rng);
    const ConditionBundle<double> cond{&audio, &coarse, nullptr};
    const auto ns = NoiseSchedule::cosine(gc.t_hat);
    const GuidanceConfig<double> g;
    Rng ra = substream(30, "verify-det"), rb = substream(30, "verify-det");
    check(sample(gen, ns, T, cond, g, ra).frames == sample(gen, ns, T, cond, g, rb).frames,
          "same seed must give the same sample");
}

void check_checkpoint_roundtrip() {
    GeneratorConfig gc = verify_gen_config();
    Generator<double> a(gc, 77);
    const fs::path p = fs::temp_directory_path() / "facediff-verify-ckpt.fdck";
    save_checkpoint(a.ps, p.string());
    Generator<double> b(gc, 78);
    load_checkpoint(b.ps, p.string());
    for (size_t i = 0; i < a.ps.items.size(); ++i)
        check(a.ps.items[i]->value == b.ps.items[i]->value,
              "parameter " + a.ps.items[i]->name + " did not round-trip");
    fs::remove(p);
}

int cmd_verify() {
    Verifier v;
    v.run("schedule-shape", check_schedule);
    v.run("noise-stats", check_noise_stats);
    v.run("noise-iterated-oracle", check_noise_iterated);
    v.run("grad-generator-fp64", check_grad_generator);
    v.run("grad-encoder-fp64", check_grad_encoder);
    v.skip("grad-generator-fp32", "policy: fp32 gradients are not checked; fp64 is authoritative");
    v.run("cfg-endpoints", check_cfg_endpoints);
    v.run("cfg-oracle", check_cfg_oracle);
    v.run("adapter-identity", check_adapter_identity);
    v.run("zero-proj-negative-control", check_zero_proj_control);
    v.run("masks-oracle", check_masks_oracle);
    v.run("control-rate-oracle", check_control_rate_oracle);
    v.run("binarize-oracle", check_binarize_oracle);
    v.run("sampler-determinism", check_sampler_determinism);
    v.run("checkpoint-roundtrip", check_checkpoint_roundtrip);
    return v.finish();
}

}  // namespace

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{
        "facediff: coarse-to-fine controllable facial-motion diffusion.\n"
        "Exit codes: 0 success, 1 runtime or verification failure, 2 usage error."};
    app.require_subcommand(1);

    GenDataOpts gd;
    auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
    c_gen->add_option("--out", gd.out, "Target directory")->required();
    c_gen->add_option("--clips", gd.clips, "Number of clips")->check(CLI::NonNegativeNumber);
    c_gen->add_option("--frames", gd.frames, "Frames per clip");
    c_gen->add_option("--seed", gd.seed, "Dataset seed");
    c_gen->add_option("--event-rate", gd.event_rate, "Mean planted AU events per clip");
    c_gen->add_option("--profile", gd.profile, "Size profile")
        ->check(CLI::IsMember({"desk", "paper"}));
    c_gen->add_flag("--force", gd.force, "Overwrite a non-empty target directory");

    TrainOpts tr;
    auto* c_train = app.add_subcommand("train", "Train the base model or the adapter");
    c_train->add_option("--data", tr.data, "Dataset directory");
    c_train->add_option("--out", tr.out, "Run directory")->required();
    c_train->add_option("--stage", tr.stage, "1 = base model, 2 = adapter")
        ->check(CLI::Range(1, 2));
    c_train->add_option("--steps", tr.steps, "Total optimizer-step budget")
        ->check(CLI::NonNegativeNumber);
    c_train->add_option("--batch", tr.batch, "Batch size");
    c_train->add_option("--lr", tr.lr, "Learning rate");
    c_train->add_option("--p-swap", tr.p_swap, "Stage-2 swap-branch probability");
    c_train->add_option("--p-audio-drop", tr.p_audio_drop, "Stage-1 audio dropout probability");
    c_train->add_option("--p-coarse-drop", tr.p_coarse_drop,
                        "Stage-1 coarse-condition dropout probability");
    c_train->add_option("--seed", tr.seed, "Training seed");
    c_train->add_option("--profile", tr.profile, "Size profile")
        ->check(CLI::IsMember({"desk", "paper"}));
    c_train->add_option("--d-model", tr.d_model, "Override latent width");
    c_train->add_option("--n-heads", tr.n_heads, "Override attention heads");
    c_train->add_option("--n-blocks", tr.n_blocks, "Override transformer blocks");
    c_train->add_option("--t-hat", tr.t_hat, "Override diffusion steps");
    c_train->add_option("--base-checkpoint", tr.base_checkpoint,
                        "Stage-1 checkpoint (or its run directory) to build the adapter on");
    c_train->add_option("--checkpoint-every", tr.checkpoint_every,
                        "Also checkpoint every N steps (0 = final only)");
    c_train->add_flag("--resume", tr.resume, "Continue the run in --out to the step budget");
    c_train->add_flag("--force", tr.force, "Overwrite a non-empty run directory");

    SampleOpts sp;
    auto* c_sample = app.add_subcommand("sample", "Generate motion from a trained run");
    c_sample->add_option("--run", sp.run, "Run directory")->required();
    c_sample->add_option("--out", sp.out, "Output motion file")->required();
    c_sample->add_option("--data", sp.data, "Dataset override (default: the run's dataset)");
    c_sample->add_option("--clip", sp.clip, "Clip whose conditions drive the sample");
    c_sample->add_option("--seed", sp.seed, "Sampling seed");
    c_sample->add_option("--alpha", sp.alpha, "Coarse guidance scale");
    c_sample->add_option("--beta", sp.beta, "Fine guidance scale");
    c_sample->add_option("--fine", sp.fine_file,
                         "JSON file with {\"triplets\": [{\"aus\": [..], \"start\", \"end\"}]}");

    EvalOpts ev;
    auto* c_eval = app.add_subcommand("eval", "Sample from a run and score it against a dataset");
    c_eval->add_option("--data", ev.data, "Dataset directory")->required();
    c_eval->add_option("--run", ev.run, "Run directory")->required();
    c_eval->add_option("--out", ev.out, "Report directory (default: <run>/eval)");
    c_eval->add_option("--n", ev.n, "Clips to evaluate")->check(CLI::PositiveNumber);
    c_eval->add_option("--seed", ev.seed, "Sampling and split seed");
    c_eval->add_option("--alpha", ev.alpha, "Coarse guidance scale");
    c_eval->add_option("--beta", ev.beta, "Fine guidance scale (needs --with-fine)");
    c_eval->add_option("--samples", ev.samples,
                       "Directory of pre-sampled NNNN.motion files instead of sampling");
    c_eval->add_flag("--with-fine", ev.with_fine,
                     "Condition sampling on each clip's fine annotations");
    c_eval->add_flag("--force", ev.force, "Overwrite a non-empty report directory");

    auto* c_verify =
        app.add_subcommand("verify", "Run the built-in checks against naive references");

    int rc = 0;
    c_gen->callback([&] { rc = cmd_gen_data(gd); });
    c_train->callback([&] {
        tr.steps_set = c_train->count("--steps") > 0;
        if (tr.resume) {
            for (const auto* f :
                 {"--data", "--stage", "--batch", "--lr", "--p-swap", "--p-audio-drop",
                  "--p-coarse-drop", "--seed", "--profile", "--d-model", "--n-heads",
                  "--n-blocks", "--t-hat", "--base-checkpoint", "--checkpoint-every"})
                if (c_train->count(f) > 0)
                    throw std::invalid_argument(std::string(f) +
                                                " cannot be changed with --resume (the stored "
                                                "run config wins; only --steps may grow)");
        }
        rc = cmd_train(tr);
    });
    c_sample->callback([&] { rc = cmd_sample(sp); });
    c_eval->callback([&] { rc = cmd_eval(ev); });
    c_verify->callback([&] { rc = cmd_verify(); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}
