#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "facediff/json_io.hpp"
#include "facediff/rng.hpp"
#include "facediff/tensor.hpp"
#include "facediff/types.hpp"

// Synthetic dataset with known ground truth, the rule-based AU binarization,
// and the on-disk formats (motion files and dataset directories).
//
// A clip's motion is built from separable ingredients so each pipeline stage
// is independently testable:
//   lip channels      ← deterministic smoothed function of audio tokens
//   expression chans  ← per-emotion offset pattern × intensity
//   AU-mapped chans   ← planted raised-cosine bumps (the fine ground truth)
//   everything        ← small Gaussian noise, then clamped to [0,1]
// Lip, expression, and event-writable channel sets are pairwise disjoint.

namespace facediff {

struct SyntheticSpec {
    int64_t n_clips = 500;
    int64_t t_frames = 50;
    int64_t phoneme_vocab = 12;
    int64_t d_audio = 8;
    int64_t n_styles = 4;
    int64_t n_emotions = 4;
    std::vector<std::string> lip_channels = {"jawOpen", "mouthClose", "mouthFunnel",
                                             "mouthPucker"};
    std::vector<std::string> expression_channels = {"cheekPuff",     "mouthPressLeft",
                                                    "mouthPressRight", "jawForward",
                                                    "eyeLookUpLeft", "eyeLookUpRight"};
    double noise_sigma = 0.01;
    double au_event_rate = 1.2;  // Poisson mean events per clip
    int64_t max_events = 4;
    double bump_peak = 0.8;  // must exceed the binarize threshold
    int64_t bump_min_len = 8;
    int64_t bump_max_len = 15;
    // AUs that never receive planted events. AU26 maps to jawOpen, which the
    // lip signal owns; excluding it keeps events off lip channels.
    std::vector<std::string> excluded_event_aus = {"AU26"};
    double fps = kDefaultFps;
    uint64_t seed = 0;

    static SyntheticSpec desk() { return SyntheticSpec{}; }

    // AUs eligible for planted events, in vocabulary order.
    std::vector<std::string> event_aus(const AUVocabulary& vocab) const {
        std::vector<std::string> out;
        for (const auto& e : vocab.entries) {
            bool excluded = false;
            for (const auto& x : excluded_event_aus) excluded = excluded || x == e.id;
            if (!excluded) out.push_back(e.id);
        }
        return out;
    }

    void validate(const AUVocabulary& vocab) const {
        if (n_clips < 0) throw std::invalid_argument("n_clips must be >= 0");
        if (t_frames < 2) throw std::invalid_argument("clips need at least two frames");
        if (phoneme_vocab < 1 || d_audio < 1 || n_styles < 1 || n_emotions < 1)
            throw std::invalid_argument("vocab and label counts must be positive");
        if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
        if (!(au_event_rate >= 0.0)) throw std::invalid_argument("event rate must be >= 0");
        if (max_events < 0) throw std::invalid_argument("max_events must be >= 0");
        if (!(bump_peak > 0.0 && bump_peak <= 1.0))
            throw std::invalid_argument("bump peak must lie in (0,1]");
        if (bump_min_len < 2 || bump_max_len < bump_min_len || bump_max_len > t_frames)
            throw std::invalid_argument("bump lengths must satisfy 2 <= min <= max <= T");
        if (fps <= 0.0) throw std::invalid_argument("fps must be positive");

        for (const auto& x : excluded_event_aus) (void)vocab.require(x);
        if (event_aus(vocab).empty())
            throw std::invalid_argument("every AU is excluded from events");

        // The three writable channel groups must be pairwise disjoint.
        std::vector<int> lip, expr;
        for (const auto& n : lip_channels) lip.push_back(channel_index(n));
        for (const auto& n : expression_channels) expr.push_back(channel_index(n));
        if (lip.empty() || expr.empty())
            throw std::invalid_argument("lip and expression channel sets must be non-empty");
        if (n_emotions > int64_t(expr.size()))
            throw std::invalid_argument(
                "each emotion needs at least one dedicated expression channel");
        for (int a : lip)
            for (int b : expr)
                if (a == b)
                    throw std::invalid_argument("lip and expression channels overlap");
        for (const auto& id : event_aus(vocab)) {
            const auto& entry = vocab.require(id);
            for (int c : entry.channels) {
                for (int a : lip)
                    if (a == c)
                        throw std::invalid_argument("event AU " + id + " writes lip channel " +
                                                    channel_names()[size_t(c)]);
                for (int b : expr)
                    if (b == c)
                        throw std::invalid_argument("event AU " + id +
                                                    " writes expression channel " +
                                                    channel_names()[size_t(c)]);
            }
        }
    }
};

// Deterministic lookup tables derived from the spec seed. Regenerable
// anywhere from (spec), so files never need to store them.
struct SyntheticTables {
    DTensor lip_pattern;      // P × |lip|: per-phoneme lip pose
    DTensor audio_rows;       // P × d_audio: per-phoneme audio feature
    DTensor emotion_offsets;  // E × |expr|: per-emotion expression offsets
};

inline SyntheticTables make_tables(const SyntheticSpec& spec) {
    SyntheticTables t;
    Rng rl = substream(spec.seed, "phoneme-pattern");
    t.lip_pattern = DTensor(spec.phoneme_vocab, int64_t(spec.lip_channels.size()));
    for (auto& x : t.lip_pattern.v) x = rl.uniform(0.15, 0.85);
    Rng ra = substream(spec.seed, "audio-embed");
    t.audio_rows = DTensor(spec.phoneme_vocab, spec.d_audio);
    for (auto& x : t.audio_rows.v) x = ra.uniform(-1.0, 1.0);
    Rng re = substream(spec.seed, "emotion-offset");
    // Well-separated by construction: emotion e owns the expression channels
    // x with x ≡ e (mod E) and raises them hard; the rest stay near zero. A
    // linear readout can then recover the emotion at any nonzero intensity.
    t.emotion_offsets = DTensor(spec.n_emotions, int64_t(spec.expression_channels.size()));
    for (int64_t e = 0; e < spec.n_emotions; ++e)
        for (int64_t x = 0; x < t.emotion_offsets.cols(); ++x)
            t.emotion_offsets.at(e, x) =
                x % spec.n_emotions == e ? re.uniform(0.25, 0.35) : re.uniform(0.02, 0.08);
    return t;
}

struct ClipRecord {
    std::vector<int64_t> tokens;  // one phoneme token per frame
    AudioFeatures<double> audio;  // T × d_audio
    CoarseCondition coarse;
    MotionSequence<double> motion;  // T × D
    FineCondition fine;             // planted events, the fine ground truth
};

// Raised-cosine bump profile, zero at the interval edges, ~1 at the center.
inline double bump_profile(int64_t i, int64_t len) {
    const double pi = std::acos(-1.0);
    return 0.5 * (1.0 - std::cos(2.0 * pi * (double(i) + 0.5) / double(len)));
}

// One clip, fully determined by (spec, index). Per-clip draws come from the
// substream ("clip", index) in a fixed order: segmented tokens, coarse
// labels, events, then per-entry noise.
inline ClipRecord generate_clip(const SyntheticSpec& spec, const AUVocabulary& vocab,
                                const SyntheticTables& tables, int64_t index) {
    const int64_t T = spec.t_frames;
    Rng rc = substream(spec.seed, "clip", uint64_t(index));
    ClipRecord clip;

    // Tokens in segments of 3–6 frames.
    while (int64_t(clip.tokens.size()) < T) {
        int64_t len = 3 + rc.uniform_int(4);
        int64_t tok = rc.uniform_int(spec.phoneme_vocab);
        for (int64_t i = 0; i < len && int64_t(clip.tokens.size()) < T; ++i)
            clip.tokens.push_back(tok);
    }

    clip.coarse.style_id = int(rc.uniform_int(spec.n_styles));
    clip.coarse.emotion_id = int(rc.uniform_int(spec.n_emotions));
    clip.coarse.intensity = intensity_level(int(rc.uniform_int(4)));

    // Planted AU events.
    const auto events = spec.event_aus(vocab);
    int64_t n_events = std::min<int64_t>(rc.poisson(spec.au_event_rate), spec.max_events);
    for (int64_t e = 0; e < n_events; ++e) {
        const std::string& au = events[size_t(rc.uniform_int(int64_t(events.size())))];
        int64_t len = spec.bump_min_len + rc.uniform_int(spec.bump_max_len - spec.bump_min_len + 1);
        int64_t start = rc.uniform_int(T - len + 1);
        clip.fine.triplets.push_back({{au}, start, start + len});
    }

    // Motion assembly.
    clip.motion.frames = DTensor(T, kNumChannels);
    clip.motion.fps = spec.fps;
    auto& m = clip.motion.frames;

    // Lip channels: per-token pose, style-scaled, smoothed with [¼ ½ ¼]
    // (edges replicate).
    const double style_scale = 0.85 + 0.05 * double(clip.coarse.style_id);
    for (size_t l = 0; l < spec.lip_channels.size(); ++l) {
        const int64_t c = channel_index(spec.lip_channels[l]);
        std::vector<double> raw(size_t(T), 0.0);
        for (int64_t t = 0; t < T; ++t)
            raw[size_t(t)] = style_scale * tables.lip_pattern.at(clip.tokens[size_t(t)], int64_t(l));
        for (int64_t t = 0; t < T; ++t) {
            double prev = raw[size_t(std::max<int64_t>(t - 1, 0))];
            double next = raw[size_t(std::min<int64_t>(t + 1, T - 1))];
            m.at(t, c) = 0.25 * prev + 0.5 * raw[size_t(t)] + 0.25 * next;
        }
    }

    // Expression channels: emotion offset scaled by intensity.
    for (size_t x = 0; x < spec.expression_channels.size(); ++x) {
        const int64_t c = channel_index(spec.expression_channels[x]);
        const double ofs =
            clip.coarse.intensity * tables.emotion_offsets.at(clip.coarse.emotion_id, int64_t(x));
        for (int64_t t = 0; t < T; ++t) m.at(t, c) += ofs;
    }

    // AU bumps on the mapped channels.
    for (const auto& tr : clip.fine.triplets) {
        const auto& entry = vocab.require(tr.aus[0]);
        const int64_t len = tr.end - tr.start;
        for (int c : entry.channels)
            for (int64_t t = tr.start; t < tr.end; ++t)
                m.at(t, c) += spec.bump_peak * bump_profile(t - tr.start, len);
    }

    // Noise everywhere, then clamp into coefficient range.
    for (auto& x : m.v) x = std::min(1.0, std::max(0.0, x + rc.normal() * spec.noise_sigma));

    // Audio features follow the tokens deterministically.
    clip.audio.features = DTensor(T, spec.d_audio);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t j = 0; j < spec.d_audio; ++j)
            clip.audio.features.at(t, j) = tables.audio_rows.at(clip.tokens[size_t(t)], j);

    clip.fine.validate(T, vocab);
    return clip;
}

inline std::vector<ClipRecord> generate_dataset(const SyntheticSpec& spec,
                                                const AUVocabulary& vocab) {
    spec.validate(vocab);
    const SyntheticTables tables = make_tables(spec);
    std::vector<ClipRecord> clips;
    clips.reserve(size_t(spec.n_clips));
    for (int64_t i = 0; i < spec.n_clips; ++i)
        clips.push_back(generate_clip(spec, vocab, tables, i));
    return clips;
}

// Order-sensitive digest of everything a dataset pins down; equal hashes ⇔
// byte-identical clips (up to fp32 storage precision of the motion).
inline uint64_t dataset_hash(const std::vector<ClipRecord>& clips) {
    std::string buf;
    auto put = [&buf](const void* p, size_t n) {
        buf.append(reinterpret_cast<const char*>(p), n);
    };
    for (const auto& clip : clips) {
        for (int64_t tok : clip.tokens) put(&tok, sizeof tok);
        put(&clip.coarse.style_id, sizeof clip.coarse.style_id);
        put(&clip.coarse.emotion_id, sizeof clip.coarse.emotion_id);
        put(&clip.coarse.intensity, sizeof clip.coarse.intensity);
        for (double d : clip.motion.frames.v) {
            float f = float(d);
            put(&f, sizeof f);
        }
        for (const auto& tr : clip.fine.triplets) {
            for (const auto& au : tr.aus) buf += au;
            put(&tr.start, sizeof tr.start);
            put(&tr.end, sizeof tr.end);
        }
        for (double d : clip.audio.features.v) put(&d, sizeof d);
    }
    return fnv1a64(buf);
}

// ---------------------------------------------------------------------------
// Motion file format (little-endian):
//   bytes 0-3   magic "FMOT"
//   bytes 4-7   u32 version (1)
//   bytes 8-15  i64 T (frames)
//   bytes 16-23 i64 D (channels)
//   bytes 24-31 f64 fps
//   bytes 32-   T·D float32, row-major
// ---------------------------------------------------------------------------

inline constexpr char kMotionMagic[4] = {'F', 'M', 'O', 'T'};
inline constexpr uint32_t kMotionVersion = 1;

inline void write_motion(const std::string& path, const MotionSequence<double>& seq) {
    seq.validate();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    auto put = [&f](const void* p, size_t n) {
        f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
    };
    put(kMotionMagic, 4);
    put(&kMotionVersion, 4);
    int64_t t = seq.t(), d = seq.d();
    put(&t, 8);
    put(&d, 8);
    put(&seq.fps, 8);
    for (double x : seq.frames.v) {
        float v = float(x);
        put(&v, 4);
    }
    f.flush();
    if (!f) throw std::runtime_error("short write to " + path);
}

inline MotionSequence<double> read_motion(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    auto get = [&f, &path](void* p, size_t n) {
        f.read(reinterpret_cast<char*>(p), std::streamsize(n));
        if (f.gcount() != std::streamsize(n))
            throw std::runtime_error("truncated motion file " + path);
    };
    char magic[4];
    get(magic, 4);
    if (std::memcmp(magic, kMotionMagic, 4) != 0)
        throw std::runtime_error(path + " is not a motion file (bad magic)");
    uint32_t version = 0;
    get(&version, 4);
    if (version != kMotionVersion)
        throw std::runtime_error(path + ": unsupported motion version " +
                                 std::to_string(version));
    int64_t t = 0, d = 0;
    double fps = 0;
    get(&t, 8);
    get(&d, 8);
    get(&fps, 8);
    if (t < 1 || d < 1 || t > (int64_t(1) << 32) || d > (int64_t(1) << 20))
        throw std::runtime_error(path + ": implausible motion dimensions");
    MotionSequence<double> seq;
    seq.fps = fps;
    seq.frames = DTensor(t, d);
    for (auto& x : seq.frames.v) {
        float v = 0;
        get(&v, 4);
        x = double(v);
    }
    // Nothing may trail the payload.
    char extra;
    f.read(&extra, 1);
    if (f.gcount() != 0) throw std::runtime_error(path + ": trailing bytes after payload");
    seq.validate();
    return seq;
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.json + clips/NNNN.motion + clips/NNNN.cond.json
// ---------------------------------------------------------------------------

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
    return nlohmann::json{{"n_clips", s.n_clips},
                          {"t_frames", s.t_frames},
                          {"phoneme_vocab", s.phoneme_vocab},
                          {"d_audio", s.d_audio},
                          {"n_styles", s.n_styles},
                          {"n_emotions", s.n_emotions},
                          {"lip_channels", s.lip_channels},
                          {"expression_channels", s.expression_channels},
                          {"noise_sigma", s.noise_sigma},
                          {"au_event_rate", s.au_event_rate},
                          {"max_events", s.max_events},
                          {"bump_peak", s.bump_peak},
                          {"bump_min_len", s.bump_min_len},
                          {"bump_max_len", s.bump_max_len},
                          {"excluded_event_aus", s.excluded_event_aus},
                          {"fps", s.fps},
                          {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.n_clips = j.at("n_clips").get<int64_t>();
    s.t_frames = j.at("t_frames").get<int64_t>();
    s.phoneme_vocab = j.at("phoneme_vocab").get<int64_t>();
    s.d_audio = j.at("d_audio").get<int64_t>();
    s.n_styles = j.at("n_styles").get<int64_t>();
    s.n_emotions = j.at("n_emotions").get<int64_t>();
    s.lip_channels = j.at("lip_channels").get<std::vector<std::string>>();
    s.expression_channels = j.at("expression_channels").get<std::vector<std::string>>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.au_event_rate = j.at("au_event_rate").get<double>();
    s.max_events = j.at("max_events").get<int64_t>();
    s.bump_peak = j.at("bump_peak").get<double>();
    s.bump_min_len = j.at("bump_min_len").get<int64_t>();
    s.bump_max_len = j.at("bump_max_len").get<int64_t>();
    s.excluded_event_aus = j.at("excluded_event_aus").get<std::vector<std::string>>();
    s.fps = j.at("fps").get<double>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

inline std::string clip_stem(int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04lld", static_cast<long long>(index));
    return buf;
}

inline nlohmann::json fine_to_json(const FineCondition& fc) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& tr : fc.triplets)
        arr.push_back({{"aus", tr.aus}, {"start", tr.start}, {"end", tr.end}});
    return arr;
}

inline FineCondition fine_from_json(const nlohmann::json& arr) {
    FineCondition fc;
    for (const auto& j : arr) {
        Triplet tr;
        tr.aus = j.at("aus").get<std::vector<std::string>>();
        tr.start = j.at("start").get<int64_t>();
        tr.end = j.at("end").get<int64_t>();
        fc.triplets.push_back(tr);
    }
    return fc;
}

inline void save_dataset(const std::string& dir, const SyntheticSpec& spec,
                         const AUVocabulary& vocab, const std::vector<ClipRecord>& clips) {
    namespace fs = std::filesystem;
    spec.validate(vocab);
    fs::create_directories(fs::path(dir) / "clips");
    nlohmann::json manifest{{"version", 1},
                            {"kind", "facediff-dataset"},
                            {"n_clips", int64_t(clips.size())},
                            {"spec", synthetic_spec_to_json(spec)}};
    save_json_file(manifest, (fs::path(dir) / "manifest.json").string());
    for (size_t i = 0; i < clips.size(); ++i) {
        const auto stem = clip_stem(int64_t(i));
        write_motion((fs::path(dir) / "clips" / (stem + ".motion")).string(), clips[i].motion);
        nlohmann::json cond{{"version", 1},
                            {"tokens", clips[i].tokens},
                            {"style_id", clips[i].coarse.style_id},
                            {"emotion_id", clips[i].coarse.emotion_id},
                            {"intensity", clips[i].coarse.intensity},
                            {"fine", fine_to_json(clips[i].fine)}};
        save_json_file(cond, (fs::path(dir) / "clips" / (stem + ".cond.json")).string());
    }
}

// Load a dataset directory. Audio features are recomputed from the manifest
// spec and the stored tokens (they are a pure function of both).
inline std::pair<SyntheticSpec, std::vector<ClipRecord>> load_dataset(const std::string& dir,
                                                                      const AUVocabulary& vocab) {
    namespace fs = std::filesystem;
    auto manifest = load_json_file((fs::path(dir) / "manifest.json").string());
    if (manifest.value("kind", "") != "facediff-dataset")
        throw std::runtime_error(dir + ": manifest is not a dataset manifest");
    if (manifest.at("version").get<int64_t>() != 1)
        throw std::runtime_error(dir + ": unsupported dataset version");
    SyntheticSpec spec = synthetic_spec_from_json(manifest.at("spec"));
    spec.validate(vocab);
    const int64_t n = manifest.at("n_clips").get<int64_t>();
    const SyntheticTables tables = make_tables(spec);

    std::vector<ClipRecord> clips;
    clips.reserve(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        const auto stem = clip_stem(i);
        ClipRecord clip;
        clip.motion = read_motion((fs::path(dir) / "clips" / (stem + ".motion")).string());
        auto cond = load_json_file((fs::path(dir) / "clips" / (stem + ".cond.json")).string());
        clip.tokens = cond.at("tokens").get<std::vector<int64_t>>();
        clip.coarse.style_id = cond.at("style_id").get<int>();
        clip.coarse.emotion_id = cond.at("emotion_id").get<int>();
        clip.coarse.intensity = cond.at("intensity").get<double>();
        clip.fine = fine_from_json(cond.at("fine"));
        if (int64_t(clip.tokens.size()) != clip.motion.t())
            throw std::runtime_error(dir + "/" + stem + ": token count disagrees with motion");
        clip.fine.validate(clip.motion.t(), vocab);
        clip.audio.features = DTensor(clip.motion.t(), spec.d_audio);
        for (int64_t t = 0; t < clip.motion.t(); ++t) {
            if (clip.tokens[size_t(t)] < 0 || clip.tokens[size_t(t)] >= spec.phoneme_vocab)
                throw std::runtime_error(dir + "/" + stem + ": token out of range");
            for (int64_t j = 0; j < spec.d_audio; ++j)
                clip.audio.features.at(t, j) = tables.audio_rows.at(clip.tokens[size_t(t)], j);
        }
        clips.push_back(std::move(clip));
    }
    return {spec, clips};
}

// ---------------------------------------------------------------------------
// Rule-based AU binarization of a clean motion sequence.
// ---------------------------------------------------------------------------

struct BinarizeConfig {
    double threshold = 0.25;
    std::vector<int64_t> kernel_sizes = {3, 5, 7};  // max-pool kernels, odd
    int64_t merge_gap = 5;                          // merge runs when gap < this
    double merge_prob = 0.5;
    int64_t min_run = 2;  // drop shorter runs after merging

    void validate() const {
        if (!(threshold > 0.0 && threshold < 1.0))
            throw std::invalid_argument("binarize threshold must lie in (0,1)");
        if (kernel_sizes.empty()) throw std::invalid_argument("no max-pool kernel sizes");
        for (int64_t k : kernel_sizes)
            if (k < 1 || k % 2 == 0)
                throw std::invalid_argument("max-pool kernels must be odd and >= 1");
        if (merge_gap < 0) throw std::invalid_argument("merge gap must be >= 0");
        if (!(merge_prob >= 0.0 && merge_prob <= 1.0))
            throw std::invalid_argument("merge probability must lie in [0,1]");
        if (min_run < 1) throw std::invalid_argument("min run length must be >= 1");
    }
};

// Recover fine-grained conditions from motion, one AU at a time:
//   1. threshold the AU's per-frame group activity (max over its channels),
//   2. max-pool the binary sequence with a randomly drawn odd kernel,
//   3. merge runs separated by small gaps with probability merge_prob,
// then emit one (AU, start, end) triplet per surviving run of length
// >= min_run. Rng order: one kernel draw per AU (always), then one merge
// coin per qualifying gap, left to right — callers and the reference
// implementation must agree on this order for seeded equality.
inline FineCondition binarize(const MotionSequence<double>& motion, const AUVocabulary& vocab,
                              const BinarizeConfig& cfg, Rng& rng) {
    cfg.validate();
    motion.validate();
    const int64_t T = motion.t();
    const auto& m = motion.frames;
    FineCondition out;

    for (const auto& entry : vocab.entries) {
        // Step 1: threshold group activity.
        std::vector<char> active(size_t(T), 0);
        for (int64_t t = 0; t < T; ++t) {
            double peak = 0.0;
            for (int c : entry.channels) peak = std::max(peak, m.at(t, c));
            active[size_t(t)] = peak > cfg.threshold ? 1 : 0;
        }

        // Step 2: max-pool with a random kernel.
        const int64_t k = cfg.kernel_sizes[size_t(rng.uniform_int(int64_t(cfg.kernel_sizes.size())))];
        const int64_t half = k / 2;
        std::vector<char> pooled(size_t(T), 0);
        for (int64_t t = 0; t < T; ++t) {
            const int64_t lo = std::max<int64_t>(0, t - half);
            const int64_t hi = std::min<int64_t>(T - 1, t + half);
            for (int64_t s = lo; s <= hi && !pooled[size_t(t)]; ++s)
                pooled[size_t(t)] = active[size_t(s)];
        }

        // Collect maximal runs.
        std::vector<std::pair<int64_t, int64_t>> runs;
        int64_t t = 0;
        while (t < T) {
            if (!pooled[size_t(t)]) {
                ++t;
                continue;
            }
            int64_t s = t;
            while (t < T && pooled[size_t(t)]) ++t;
            runs.emplace_back(s, t);
        }

        // Step 3: randomly merge runs across small gaps.
        std::vector<std::pair<int64_t, int64_t>> merged;
        for (const auto& run : runs) {
            if (!merged.empty() && run.first - merged.back().second < cfg.merge_gap &&
                rng.bernoulli(cfg.merge_prob)) {
                merged.back().second = run.second;
            } else {
                merged.push_back(run);
            }
        }

        for (const auto& run : merged)
            if (run.second - run.first >= cfg.min_run)
                out.triplets.push_back({{entry.id}, run.first, run.second});
    }
    return out;
}

}  // namespace facediff
