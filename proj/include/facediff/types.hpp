#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "facediff/tensor.hpp"

// Domain types for facial motion, action-unit conditions and the coarse
// condition triple. Everything here is immutable after construction and safe
// to share across readers.

namespace facediff {

// The 51 blendshape coefficient channels, in fixed order. Motion matrices
// are T×51 with this column layout throughout.
inline const std::vector<std::string>& channel_names() {
    static const std::vector<std::string> names = {
        "browDownLeft",     "browDownRight",    "browInnerUp",      "browOuterUpLeft",
        "browOuterUpRight", "cheekPuff",        "cheekSquintLeft",  "cheekSquintRight",
        "eyeBlinkLeft",     "eyeBlinkRight",    "eyeLookDownLeft",  "eyeLookDownRight",
        "eyeLookInLeft",    "eyeLookInRight",   "eyeLookOutLeft",   "eyeLookOutRight",
        "eyeLookUpLeft",    "eyeLookUpRight",   "eyeSquintLeft",    "eyeSquintRight",
        "eyeWideLeft",      "eyeWideRight",     "jawForward",       "jawLeft",
        "jawOpen",          "jawRight",         "mouthClose",       "mouthDimpleLeft",
        "mouthDimpleRight", "mouthFrownLeft",   "mouthFrownRight",  "mouthFunnel",
        "mouthLeft",        "mouthLowerDownLeft", "mouthLowerDownRight", "mouthPressLeft",
        "mouthPressRight",  "mouthPucker",      "mouthRight",       "mouthRollLower",
        "mouthRollUpper",   "mouthShrugLower",  "mouthShrugUpper",  "mouthSmileLeft",
        "mouthSmileRight",  "mouthStretchLeft", "mouthStretchRight", "mouthUpperUpLeft",
        "mouthUpperUpRight", "noseSneerLeft",   "noseSneerRight"};
    return names;
}

inline constexpr int64_t kNumChannels = 51;
inline constexpr double kDefaultFps = 25.0;

inline int channel_index(const std::string& name) {
    static const std::unordered_map<std::string, int> index = [] {
        std::unordered_map<std::string, int> m;
        const auto& names = channel_names();
        for (size_t i = 0; i < names.size(); ++i) m[names[i]] = int(i);
        return m;
    }();
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown channel name: " + name);
    return it->second;
}

enum class FaceRegion { kUpper, kLower };

struct AUEntry {
    std::string id;             // e.g. "AU12"
    FaceRegion region;
    std::vector<int> channels;  // coefficient columns this AU drives
};

// Ordered action-unit vocabulary with the AU → channel mapping. The mapping
// is data, not ground truth: the default below is one reasonable FACS-to-
// blendshape assignment, also shipped as configs/au_map.json.
struct AUVocabulary {
    std::vector<AUEntry> entries;
    std::unordered_map<std::string, int> index;

    void add(std::string id, FaceRegion region, const std::vector<std::string>& chans) {
        if (index.count(id)) throw std::invalid_argument("duplicate AU id: " + id);
        AUEntry e;
        e.id = std::move(id);
        e.region = region;
        for (const auto& c : chans) e.channels.push_back(channel_index(c));
        index[e.id] = int(entries.size());
        entries.push_back(std::move(e));
    }

    int64_t size() const { return int64_t(entries.size()); }

    // Position in the vocabulary, or -1 when absent.
    int find(const std::string& id) const {
        auto it = index.find(id);
        return it == index.end() ? -1 : it->second;
    }

    const AUEntry& require(const std::string& id) const {
        int i = find(id);
        if (i < 0) throw std::invalid_argument("AU not in vocabulary: " + id);
        return entries[size_t(i)];
    }

    void validate(int64_t d) const {
        for (const auto& e : entries) {
            if (e.channels.empty())
                throw std::invalid_argument("AU " + e.id + " maps to no channels");
            for (int c : e.channels)
                if (c < 0 || c >= d)
                    throw std::invalid_argument("AU " + e.id + " channel out of range");
        }
    }

    static AUVocabulary builtin_default() {
        AUVocabulary v;
        const FaceRegion U = FaceRegion::kUpper, L = FaceRegion::kLower;
        v.add("AU01", U, {"browInnerUp"});
        v.add("AU02", U, {"browOuterUpLeft", "browOuterUpRight"});
        v.add("AU04", U, {"browDownLeft", "browDownRight"});
        v.add("AU05", U, {"eyeWideLeft", "eyeWideRight"});
        v.add("AU06", U, {"cheekSquintLeft", "cheekSquintRight"});
        v.add("AU07", U, {"eyeSquintLeft", "eyeSquintRight"});
        v.add("AU45", U, {"eyeBlinkLeft", "eyeBlinkRight"});
        v.add("AU09", L, {"noseSneerLeft", "noseSneerRight"});
        v.add("AU10", L, {"mouthUpperUpLeft", "mouthUpperUpRight"});
        v.add("AU12", L, {"mouthSmileLeft", "mouthSmileRight"});
        v.add("AU14", L, {"mouthDimpleLeft", "mouthDimpleRight"});
        v.add("AU15", L, {"mouthFrownLeft", "mouthFrownRight"});
        v.add("AU17", L, {"mouthShrugLower"});
        v.add("AU20", L, {"mouthStretchLeft", "mouthStretchRight"});
        v.add("AU26", L, {"jawOpen"});
        v.add("AU28", L, {"mouthRollLower", "mouthRollUpper"});
        return v;
    }

    bool operator==(const AUVocabulary& o) const {
        if (entries.size() != o.entries.size()) return false;
        for (size_t i = 0; i < entries.size(); ++i) {
            const AUEntry &a = entries[i], &b = o.entries[i];
            if (a.id != b.id || a.region != b.region || a.channels != b.channels) return false;
        }
        return true;
    }
};

// One fine-grained control event: the AUs in `aus` are active on the
// half-open frame interval [start, end).
struct Triplet {
    std::vector<std::string> aus;
    int64_t start = 0;
    int64_t end = 0;
};

struct FineCondition {
    std::vector<Triplet> triplets;

    bool empty() const { return triplets.empty(); }

    void validate(int64_t t_frames, const AUVocabulary& vocab) const {
        for (const auto& tr : triplets) {
            if (tr.aus.empty()) throw std::invalid_argument("triplet with empty AU set");
            if (tr.start < 0 || tr.start >= tr.end || tr.end > t_frames)
                throw std::out_of_range("triplet interval [" + std::to_string(tr.start) + "," +
                                        std::to_string(tr.end) + ") outside [0," +
                                        std::to_string(t_frames) + ")");
            for (const auto& au : tr.aus) vocab.require(au);
        }
    }
};

// Talking style, emotion label and a scalar intensity (discrete levels
// {0,1,2,3} normalized to [0,1] by default).
struct CoarseCondition {
    int style_id = 0;
    int emotion_id = 0;
    double intensity = 1.0;
};

inline double intensity_level(int level) {
    if (level < 0 || level > 3) throw std::invalid_argument("intensity level must be 0..3");
    return double(level) / 3.0;
}

template <typename Real>
struct MotionSequence {
    Tensor<Real> frames;  // T×D
    double fps = kDefaultFps;

    int64_t t() const { return frames.rows(); }
    int64_t d() const { return frames.cols(); }

    void validate() const {
        if (frames.rows() < 1) throw std::invalid_argument("motion needs at least one frame");
        if (!frames.all_finite()) throw std::invalid_argument("motion contains non-finite values");
    }
};

template <typename Real>
struct AudioFeatures {
    Tensor<Real> features;  // T×d_a, frame-aligned with the motion

    void require_aligned(int64_t t_frames) const {
        if (features.rows() != t_frames)
            throw std::invalid_argument("audio frames (" + std::to_string(features.rows()) +
                                        ") do not match motion frames (" +
                                        std::to_string(t_frames) + ")");
    }
};

}  // namespace facediff
