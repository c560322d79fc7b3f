#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "facediff/rng.hpp"
#include "facediff/tensor.hpp"
#include "facediff/types.hpp"

// Deliberately naive reference implementations, written straight from the
// definitions with no shared code paths. The fast implementations are
// checked against these both in the test suite and by the `verify`
// subcommand; keep them dumb.

namespace facediff {
namespace ref {

// Is AU `au` active at frame t under any triplet?
inline bool au_active_at(const FineCondition& fc, const std::string& au, int64_t t) {
    for (const auto& tr : fc.triplets) {
        bool has = false;
        for (const auto& a : tr.aus) has = has || a == au;
        if (has && t >= tr.start && t < tr.end) return true;
    }
    return false;
}

inline DTensor fine_grid(const FineCondition& fc, const AUVocabulary& vocab, int64_t t_frames) {
    DTensor grid(t_frames, vocab.size());
    for (int64_t t = 0; t < t_frames; ++t)
        for (int64_t j = 0; j < vocab.size(); ++j)
            grid.at(t, j) = au_active_at(fc, vocab.entries[size_t(j)].id, t) ? 1.0 : 0.0;
    return grid;
}

inline DTensor ctrl_mask(const FineCondition& fc, const AUVocabulary& vocab, int64_t t_frames,
                         int64_t d) {
    DTensor mask(t_frames, d);
    for (int64_t t = 0; t < t_frames; ++t)
        for (int64_t c = 0; c < d; ++c) {
            bool on = false;
            for (const auto& e : vocab.entries) {
                bool maps = std::find(e.channels.begin(), e.channels.end(), int(c)) !=
                            e.channels.end();
                if (maps && au_active_at(fc, e.id, t)) on = true;
            }
            mask.at(t, c) = on ? 1.0 : 0.0;
        }
    return mask;
}

inline DTensor cfg_mask(const FineCondition& fc, int64_t t_frames) {
    DTensor mask(t_frames, 1);
    for (int64_t t = 0; t < t_frames; ++t) {
        bool on = false;
        for (const auto& tr : fc.triplets) on = on || (t >= tr.start && t < tr.end);
        mask.at(t, 0) = on ? 1.0 : 0.0;
    }
    return mask;
}

// Scaled dot-product attention, one head, scalar loops only.
inline DTensor attention_single_head(const DTensor& q, const DTensor& k, const DTensor& v,
                                     const DTensor& mask) {
    const int64_t T = q.rows(), S = k.rows(), dh = q.cols();
    DTensor out(T, v.cols());
    const double inv_sqrt_d = 1.0 / std::sqrt(double(dh));
    for (int64_t i = 0; i < T; ++i) {
        std::vector<double> scores(size_t(S), 0.0);
        double mx = -1e300;
        for (int64_t j = 0; j < S; ++j) {
            double s = 0;
            for (int64_t a = 0; a < dh; ++a) s += q.at(i, a) * k.at(j, a);
            scores[size_t(j)] = s * inv_sqrt_d + mask.at(i, j);
            mx = std::max(mx, scores[size_t(j)]);
        }
        double z = 0;
        for (int64_t j = 0; j < S; ++j) {
            scores[size_t(j)] = std::exp(scores[size_t(j)] - mx);
            z += scores[size_t(j)];
        }
        for (int64_t c = 0; c < v.cols(); ++c) {
            double acc = 0;
            for (int64_t j = 0; j < S; ++j) acc += scores[size_t(j)] / z * v.at(j, c);
            out.at(i, c) = acc;
        }
    }
    return out;
}

// Forward noising by literally iterating the single-step process
//   M_t = √α_t · M_{t−1} + √(1−α_t) · ε_t
// up to step τ, drawing fresh noise per step. Agrees with the closed form
// in distribution, not per-draw.
inline DTensor iterated_forward_noise(const DTensor& clean, int64_t tau,
                                      const std::vector<double>& alpha, Rng& rng) {
    DTensor m = clean;
    for (int64_t t = 1; t <= tau; ++t) {
        double a = alpha[size_t(t - 1)];
        for (auto& x : m.v) x = std::sqrt(a) * x + std::sqrt(1.0 - a) * rng.normal();
    }
    return m;
}

// Guided combination written in the literal three-term form
//   G_Φ + α(G_{A,C} − G_Φ) + β · Z_cfg ⊙ (G_{A,C,F} − G_Φ).
inline DTensor cfg_combine(const DTensor& g_null, const DTensor& g_ac, const DTensor& g_acf,
                           double alpha, double beta, const DTensor& cfg_mask) {
    DTensor out(g_null.rows(), g_null.cols());
    for (int64_t t = 0; t < out.rows(); ++t)
        for (int64_t j = 0; j < out.cols(); ++j)
            out.at(t, j) = g_null.at(t, j) + alpha * (g_ac.at(t, j) - g_null.at(t, j)) +
                           beta * cfg_mask.at(t, 0) * (g_acf.at(t, j) - g_null.at(t, j));
    return out;
}

// Control-rate metric as plain scalar loops: full activity trace per AU, an
// explicit list of neighbor frame indices, then peak minus neighbor average.
inline std::vector<double> control_rate(const DTensor& frames, const AUVocabulary& vocab,
                                        const std::vector<std::string>& aus, int64_t start,
                                        int64_t end, int64_t window) {
    std::vector<double> out;
    const int64_t T = frames.rows();
    for (const auto& au : aus) {
        const AUEntry& e = vocab.require(au);
        std::vector<double> b(size_t(T), 0.0);
        for (int64_t t = 0; t < T; ++t) {
            double best = -1e300;
            for (int c : e.channels) best = std::max(best, frames.at(t, c));
            b[size_t(t)] = best;
        }
        double peak = -1e300;
        for (int64_t t = start; t < end; ++t) peak = std::max(peak, b[size_t(t)]);
        std::vector<int64_t> neighbors;
        for (int64_t t = start - window; t < start; ++t)
            if (t >= 0 && t < T) neighbors.push_back(t);
        for (int64_t t = end; t < end + window; ++t)
            if (t >= 0 && t < T) neighbors.push_back(t);
        double avg = 0.0;
        for (int64_t t : neighbors) avg += b[size_t(t)];
        if (!neighbors.empty()) avg /= double(neighbors.size());
        out.push_back(peak - avg);
    }
    return out;
}

// ---- Rule-based AU binarization, literal three-step form ----

// Step 1: per-frame activity bit for one AU — the max over its mapped
// channels compared against the threshold.
inline std::vector<int> binarize_step1(const DTensor& motion, const AUEntry& entry,
                                       double threshold) {
    std::vector<int> bits(size_t(motion.rows()), 0);
    for (int64_t t = 0; t < motion.rows(); ++t) {
        double g = 0.0;
        for (int c : entry.channels) g = std::max(g, motion.at(t, c));
        bits[size_t(t)] = g > threshold ? 1 : 0;
    }
    return bits;
}

// Step 2: binary max-pool with an odd kernel, window clipped at the ends.
inline std::vector<int> max_pool(const std::vector<int>& bits, int64_t kernel) {
    const int64_t n = int64_t(bits.size());
    const int64_t h = kernel / 2;
    std::vector<int> out(bits.size(), 0);
    for (int64_t t = 0; t < n; ++t)
        for (int64_t s = t - h; s <= t + h; ++s)
            if (s >= 0 && s < n && bits[size_t(s)]) out[size_t(t)] = 1;
    return out;
}

// Full binarization, one AU at a time in vocabulary order. Rng consumption
// matches the production routine: one kernel draw per AU (always), then one
// merge coin per qualifying gap, left to right.
inline FineCondition binarize(const MotionSequence<double>& motion, const AUVocabulary& vocab,
                              double threshold, const std::vector<int64_t>& kernel_sizes,
                              int64_t merge_gap, double merge_prob, int64_t min_run, Rng& rng) {
    FineCondition out;
    for (const auto& entry : vocab.entries) {
        std::vector<int> bits = binarize_step1(motion.frames, entry, threshold);
        int64_t kernel = kernel_sizes[size_t(rng.uniform_int(int64_t(kernel_sizes.size())))];
        std::vector<int> pooled = max_pool(bits, kernel);

        // Maximal runs as half-open [start, end) intervals.
        std::vector<std::pair<int64_t, int64_t>> runs;
        for (int64_t t = 0; t < int64_t(pooled.size()); ++t) {
            if (!pooled[size_t(t)]) continue;
            if (t == 0 || !pooled[size_t(t - 1)])
                runs.emplace_back(t, t + 1);
            else
                runs.back().second = t + 1;
        }

        // Step 3: random merges across small gaps.
        std::vector<std::pair<int64_t, int64_t>> merged;
        for (const auto& r : runs) {
            const bool qualifies = !merged.empty() && r.first - merged.back().second < merge_gap;
            if (qualifies && rng.bernoulli(merge_prob))
                merged.back().second = r.second;
            else
                merged.push_back(r);
        }

        for (const auto& r : merged)
            if (r.second - r.first >= min_run)
                out.triplets.push_back({{entry.id}, r.first, r.second});
    }
    return out;
}

}  // namespace ref
}  // namespace facediff
