#pragma once

#include <stdexcept>
#include <string>

#include "facediff/denoiser.hpp"
#include "facediff/layers.hpp"
#include "facediff/rng.hpp"
#include "facediff/types.hpp"

// Coarse-condition encoding and the stochastic condition transforms used in
// training: null-replacement dropout for classifier-free guidance, emotion
// swapping for the swap-label objective, and fine-condition sparsification.

namespace facediff {

inline constexpr double kDefaultPTriplet = 0.8;  // triplet drop probability
inline constexpr double kDefaultPAu = 0.3;       // per-AU drop probability

// Learned id-indexed tables for style and emotion plus a single intensity
// direction, fused by a linear map into the 1×d_cond row the generator
// consumes. Stand-in for pretrained text/image encoders: the interface (one
// d-dim vector per label) is the same, so a richer encoder can replace the
// tables behind this contract.
template <typename Real>
struct CoarseEncoder {
    Parameter<Real>* style_table = nullptr;      // N_styles × d_s
    Parameter<Real>* emotion_table = nullptr;    // N_emotions × d_e
    Parameter<Real>* intensity_vector = nullptr; // 1 × d_i
    Linear<Real> fuse;                           // d_s+d_e+d_i → d_cond

    CoarseEncoder() = default;
    CoarseEncoder(ParamStore<Real>& ps, const std::string& prefix, int64_t n_styles,
                  int64_t n_emotions, int64_t d_style, int64_t d_emotion, int64_t d_intensity,
                  int64_t d_cond) {
        if (n_styles < 1 || n_emotions < 1)
            throw std::invalid_argument("coarse encoder needs at least one style and emotion");
        if (d_style < 1 || d_emotion < 1 || d_intensity < 1 || d_cond < 1)
            throw std::invalid_argument("coarse encoder dimensions must be positive");
        style_table = ps.create(prefix + ".style", n_styles, d_style, Init::kEmbed);
        emotion_table = ps.create(prefix + ".emotion", n_emotions, d_emotion, Init::kEmbed);
        intensity_vector = ps.create(prefix + ".intensity", 1, d_intensity, Init::kEmbed);
        fuse = Linear<Real>(ps, prefix + ".fuse", d_style + d_emotion + d_intensity, d_cond);
    }

    int64_t n_styles() const { return style_table->value.rows(); }
    int64_t n_emotions() const { return emotion_table->value.rows(); }

    void check(const CoarseCondition& c) const {
        if (c.style_id < 0 || c.style_id >= n_styles())
            throw std::out_of_range("style id " + std::to_string(c.style_id) + " outside [0," +
                                    std::to_string(n_styles()) + ")");
        if (c.emotion_id < 0 || c.emotion_id >= n_emotions())
            throw std::out_of_range("emotion id " + std::to_string(c.emotion_id) +
                                    " outside [0," + std::to_string(n_emotions()) + ")");
        if (!std::isfinite(c.intensity))
            throw std::invalid_argument("intensity must be finite");
    }

    // C_f = fuse(concat(style[s], emotion[e], intensity · intensity_vector)).
    NodePtr<Real> operator()(const CoarseCondition& c) const {
        check(c);
        auto srow = row_slice(param_leaf(*style_table), c.style_id, c.style_id + 1);
        auto erow = row_slice(param_leaf(*emotion_table), c.emotion_id, c.emotion_id + 1);
        auto irow = scale(param_leaf(*intensity_vector), Real(c.intensity));
        return fuse(col_concat<Real>({srow, erow, irow}));
    }

    Tensor<Real> encode_value(const CoarseCondition& c) const { return (*this)(c)->val; }
};

// Independent null-replacement probabilities for the two coarse modalities.
struct DropoutPolicy {
    double p_audio = 0.2;
    double p_coarse = 0.2;

    void validate() const {
        if (!(p_audio >= 0.0 && p_audio <= 1.0) || !(p_coarse >= 0.0 && p_coarse <= 1.0))
            throw std::invalid_argument("dropout probabilities must lie in [0,1]");
    }
};

// Independently drop audio and coarse conditions (the generator substitutes
// its learned null embeddings for absent modalities). The fine condition is
// never touched here. Both coins are tossed unconditionally so rng
// consumption does not depend on the bundle's contents.
template <typename Real>
ConditionBundle<Real> apply_dropout(const ConditionBundle<Real>& cond, const DropoutPolicy& policy,
                                    Rng& rng) {
    policy.validate();
    const bool drop_audio = rng.bernoulli(policy.p_audio);
    const bool drop_coarse = rng.bernoulli(policy.p_coarse);
    ConditionBundle<Real> out = cond;
    if (drop_audio) out.audio = nullptr;
    if (drop_coarse) out.coarse = nullptr;
    return out;
}

// Node-level variant for training paths that keep encoder gradients live:
// same two-coin contract as the bundle overload.
template <typename Real>
ConditionNodes<Real> apply_dropout(const ConditionNodes<Real>& cond, const DropoutPolicy& policy,
                                   Rng& rng) {
    policy.validate();
    const bool drop_audio = rng.bernoulli(policy.p_audio);
    const bool drop_coarse = rng.bernoulli(policy.p_coarse);
    ConditionNodes<Real> out = cond;
    if (drop_audio) out.audio = nullptr;
    if (drop_coarse) out.coarse = nullptr;
    return out;
}

// Resample the emotion id uniformly from the other labels; style and
// intensity ride along unchanged.
inline CoarseCondition swap_emotion(const CoarseCondition& c, int64_t n_emotions, Rng& rng) {
    if (n_emotions < 2)
        throw std::invalid_argument("emotion swap needs at least two labels, have " +
                                    std::to_string(n_emotions));
    if (c.emotion_id < 0 || c.emotion_id >= n_emotions)
        throw std::out_of_range("emotion id " + std::to_string(c.emotion_id) + " outside [0," +
                                std::to_string(n_emotions) + ")");
    int64_t k = rng.uniform_int(n_emotions - 1);
    CoarseCondition out = c;
    out.emotion_id = k >= c.emotion_id ? k + 1 : k;  // skip the original label
    return out;
}

// Random sparsification for stage-2 training: drop whole triplets with
// p_triplet, then drop surviving AUs with p_au; triplets left without AUs
// disappear. Intervals are never altered.
inline FineCondition sparsify_fine(const FineCondition& fc, double p_triplet, double p_au,
                                   Rng& rng) {
    if (!(p_triplet >= 0.0 && p_triplet <= 1.0) || !(p_au >= 0.0 && p_au <= 1.0))
        throw std::invalid_argument("sparsify probabilities must lie in [0,1]");
    FineCondition out;
    for (const auto& tr : fc.triplets) {
        if (rng.bernoulli(p_triplet)) continue;
        Triplet kept;
        kept.start = tr.start;
        kept.end = tr.end;
        for (const auto& au : tr.aus)
            if (!rng.bernoulli(p_au)) kept.aus.push_back(au);
        if (!kept.aus.empty()) out.triplets.push_back(kept);
    }
    return out;
}

inline FineCondition sparsify_fine(const FineCondition& fc, Rng& rng) {
    return sparsify_fine(fc, kDefaultPTriplet, kDefaultPAu, rng);
}

}  // namespace facediff
