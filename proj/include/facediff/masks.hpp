#pragma once

#include "facediff/tensor.hpp"
#include "facediff/types.hpp"

// The three masks driving conditioning and guidance. All builders are pure:
// same condition in, same matrix out.

namespace facediff {

// Finite stand-in for -inf in additive attention masks. exp(-1e9 - max)
// underflows to exactly +0, so masked positions get softmax weight 0 while
// all arithmetic stays finite.
inline constexpr double kMaskSentinel = -1e9;

// T×|vocab| multi-hot grid: entry (t, j) = 1 iff AU j is active at frame t
// under some triplet. Union over overlapping triplets.
template <typename Real>
Tensor<Real> build_fine_grid(const FineCondition& fc, const AUVocabulary& vocab, int64_t t_frames) {
    fc.validate(t_frames, vocab);
    Tensor<Real> grid(t_frames, vocab.size());
    for (const auto& tr : fc.triplets)
        for (const auto& au : tr.aus) {
            int j = vocab.find(au);
            for (int64_t t = tr.start; t < tr.end; ++t) grid.at(t, j) = Real(1);
        }
    return grid;
}

// T×D spatiotemporal control mask Z_ctrl: entry (t, c) = 1 iff some active
// triplet at frame t contains an AU driving channel c.
template <typename Real>
Tensor<Real> build_ctrl_mask(const FineCondition& fc, const AUVocabulary& vocab, int64_t t_frames,
                             int64_t d) {
    fc.validate(t_frames, vocab);
    vocab.validate(d);
    Tensor<Real> mask(t_frames, d);
    for (const auto& tr : fc.triplets)
        for (const auto& au : tr.aus)
            for (int c : vocab.require(au).channels)
                for (int64_t t = tr.start; t < tr.end; ++t) mask.at(t, c) = Real(1);
    return mask;
}

// T×1 temporal guidance mask Z_cfg: entry t = 1 iff any triplet is active at
// frame t. Broadcast over channels at the point of use.
template <typename Real>
Tensor<Real> build_cfg_mask(const FineCondition& fc, int64_t t_frames) {
    Tensor<Real> mask(t_frames, 1);
    for (const auto& tr : fc.triplets) {
        if (tr.start < 0 || tr.start >= tr.end || tr.end > t_frames)
            throw std::out_of_range("triplet interval outside motion range");
        for (int64_t t = tr.start; t < tr.end; ++t) mask.at(t, 0) = Real(1);
    }
    return mask;
}

// T×T additive audio-alignment mask Z_align: 0 on the band |i-j| <=
// half_width, sentinel elsewhere. Keeps each motion frame attending only to
// its own and adjacent audio frames.
template <typename Real>
Tensor<Real> build_align_mask(int64_t t_frames, int64_t half_width) {
    if (half_width < 0) throw std::invalid_argument("half_width must be >= 0");
    Tensor<Real> mask(t_frames, t_frames);
    for (int64_t i = 0; i < t_frames; ++i)
        for (int64_t j = 0; j < t_frames; ++j)
            if (std::abs(i - j) > half_width) mask.at(i, j) = Real(kMaskSentinel);
    return mask;
}

}  // namespace facediff
