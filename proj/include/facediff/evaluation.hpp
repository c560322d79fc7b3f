#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "facediff/layers.hpp"
#include "facediff/optim.hpp"
#include "facediff/rng.hpp"
#include "facediff/types.hpp"

// Evaluation metrics: per-AU control rate, lip error, feature diversity, and
// the small transformer emotion classifier behind the accuracy/diversity
// numbers.

namespace facediff {

// Non-controlled neighborhood width on each side of a control interval;
// 5 frames ≈ 0.2 s at 25 fps, the minimum duration of a noticeable
// expression.
inline constexpr int64_t kCrWindow = 5;

struct AuControlRate {
    std::string au;
    double cr = 0.0;
    int64_t n_neighbors = 0;  // neighbor frames available after boundary clipping
};

// Control rate of one triplet: for each activated AU, the gap between the
// peak of the AU's group activity inside [start, end) and the average over
// the `window` frames before and after the interval. Group activity per
// frame is the max over the AU's mapped channels. Neighbor windows are
// clipped at the sequence boundary; an interval with no neighbor frames at
// all gets average 0 and is flagged via n_neighbors == 0.
inline std::vector<AuControlRate> control_rate(const MotionSequence<double>& motion,
                                               const Triplet& tr, const AUVocabulary& vocab,
                                               int64_t window = kCrWindow) {
    motion.validate();
    if (window < 1) throw std::invalid_argument("control_rate: window must be >= 1");
    const int64_t T = motion.t();
    if (tr.aus.empty()) throw std::invalid_argument("control_rate: triplet with empty AU set");
    if (tr.start < 0 || tr.start >= tr.end || tr.end > T)
        throw std::out_of_range("control_rate: triplet interval outside the sequence");

    std::vector<AuControlRate> out;
    for (const auto& au : tr.aus) {
        const auto& entry = vocab.require(au);
        auto activity = [&](int64_t t) {
            double b = motion.frames.at(t, entry.channels[0]);
            for (size_t i = 1; i < entry.channels.size(); ++i)
                b = std::max(b, motion.frames.at(t, entry.channels[i]));
            return b;
        };

        double peak = activity(tr.start);
        for (int64_t t = tr.start + 1; t < tr.end; ++t) peak = std::max(peak, activity(t));

        // One pooled average over both neighbor windows.
        double sum = 0.0;
        int64_t count = 0;
        for (int64_t t = std::max<int64_t>(0, tr.start - window); t < tr.start; ++t) {
            sum += activity(t);
            ++count;
        }
        for (int64_t t = tr.end; t < std::min<int64_t>(T, tr.end + window); ++t) {
            sum += activity(t);
            ++count;
        }
        const double avg = count > 0 ? sum / double(count) : 0.0;
        out.push_back({au, peak - avg, count});
    }
    return out;
}

struct ControlReport {
    std::vector<AuControlRate> entries;  // one per (triplet, activated AU)
    double mean_cr = 0.0;
    int64_t n_flagged = 0;  // entries whose neighbor set was empty
};

inline ControlReport control_report(const MotionSequence<double>& motion,
                                    const FineCondition& fine, const AUVocabulary& vocab,
                                    int64_t window = kCrWindow) {
    ControlReport rep;
    for (const auto& tr : fine.triplets) {
        auto rows = control_rate(motion, tr, vocab, window);
        rep.entries.insert(rep.entries.end(), rows.begin(), rows.end());
    }
    for (const auto& e : rep.entries) {
        rep.mean_cr += e.cr;
        rep.n_flagged += e.n_neighbors == 0 ? 1 : 0;
    }
    if (!rep.entries.empty()) rep.mean_cr /= double(rep.entries.size());
    return rep;
}

// Lip error: per frame, the largest squared error over the lip channels;
// averaged over frames. Zero iff the lip channels agree exactly.
inline double lve(const MotionSequence<double>& pred, const MotionSequence<double>& gt,
                  const std::vector<int>& lip_channels) {
    if (pred.t() != gt.t() || pred.d() != gt.d())
        throw std::invalid_argument("lve: prediction and ground truth shapes differ");
    if (lip_channels.empty()) throw std::invalid_argument("lve: empty lip channel set");
    for (int c : lip_channels)
        if (c < 0 || c >= pred.d()) throw std::out_of_range("lve: lip channel out of range");

    double acc = 0.0;
    for (int64_t t = 0; t < pred.t(); ++t) {
        double worst = 0.0;
        for (int c : lip_channels) {
            const double d = pred.frames.at(t, c) - gt.frames.at(t, c);
            worst = std::max(worst, d * d);
        }
        acc += worst;
    }
    return acc / double(pred.t());
}

// Mean over feature dimensions of the per-dimension population standard
// deviation. Rows are feature vectors.
inline double diversity(const DTensor& features) {
    const int64_t n = features.rows(), d = features.cols();
    if (n < 2) throw std::invalid_argument("diversity needs at least two feature vectors");
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int64_t i = 0; i < n; ++i) mean += features.at(i, j);
        mean /= double(n);
        double var = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double c = features.at(i, j) - mean;
            var += c * c;
        }
        acc += std::sqrt(var / double(n));
    }
    return acc / double(d);
}

// ---------------------------------------------------------------------------
// Transformer emotion classifier: input MLP into the latent width, a learned
// classification token prepended to the frame sequence, one pre-LN encoder
// layer, and a linear head reading the classification-token position only.
// ---------------------------------------------------------------------------

struct ClassifierConfig {
    int64_t d_in = kNumChannels;
    int64_t d_model = 32;
    int64_t n_heads = 4;
    int64_t n_classes = 4;
    int64_t ffn_mult = 4;
    int64_t max_frames = 512;

    static ClassifierConfig desk(int64_t classes) {
        ClassifierConfig c;
        c.n_classes = classes;
        return c;
    }

    // Full-size profile: 8 attention heads on a wider latent.
    static ClassifierConfig paper(int64_t classes) {
        ClassifierConfig c;
        c.d_model = 512;
        c.n_heads = 8;
        c.n_classes = classes;
        return c;
    }

    void validate() const {
        if (d_in < 1 || d_model < 1 || n_classes < 2 || ffn_mult < 1 || max_frames < 1)
            throw std::invalid_argument("classifier dimensions must be positive (>=2 classes)");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw std::invalid_argument("d_model must divide evenly into heads");
    }
};

template <typename Real>
struct EmotionClassifier {
    ClassifierConfig cfg;
    ParamStore<Real> ps;
    Linear<Real> in1, in2;  // input MLP d_in → d → d
    Parameter<Real>* cls_token = nullptr;
    MultiHeadAttention<Real> attn;
    FeedForward<Real> ffn;
    Linear<Real> head;
    Tensor<Real> pos;  // (max_frames+1) × d, fixed

    EmotionClassifier(ClassifierConfig c, uint64_t seed) : cfg(c), ps(seed) {
        cfg.validate();
        in1 = Linear<Real>(ps, "in1", cfg.d_in, cfg.d_model);
        in2 = Linear<Real>(ps, "in2", cfg.d_model, cfg.d_model);
        cls_token = ps.create("cls", 1, cfg.d_model, Init::kEmbed);
        attn = MultiHeadAttention<Real>(ps, "attn", cfg.d_model, cfg.n_heads);
        ffn = FeedForward<Real>(ps, "ffn", cfg.d_model, cfg.ffn_mult);
        head = Linear<Real>(ps, "head", cfg.d_model, cfg.n_classes);
        pos = sinusoidal_table<Real>(cfg.max_frames + 1, cfg.d_model);
    }

    struct Forward {
        NodePtr<Real> logits;   // 1 × n_classes
        NodePtr<Real> feature;  // 1 × d_model, classification-token position
    };

    Forward forward(const Tensor<Real>& motion) const {
        if (motion.cols() != cfg.d_in)
            throw std::invalid_argument("classifier: motion channel count mismatch");
        if (motion.rows() + 1 > cfg.max_frames + 1)
            throw std::invalid_argument("classifier: sequence longer than max_frames");
        auto z = in2(gelu(in1(constant(motion))));
        auto x = row_concat<Real>({param_leaf(*cls_token), z});
        Tensor<Real> p(motion.rows() + 1, cfg.d_model);
        for (int64_t i = 0; i < p.rows(); ++i)
            for (int64_t j = 0; j < cfg.d_model; ++j) p.at(i, j) = pos.at(i, j);
        x = add(x, constant(p));
        auto a = layernorm_rows(x);
        x = add(x, attn(a, a));
        auto f = layernorm_rows(x);
        x = add(x, ffn(f));
        auto feature = row_slice(layernorm_rows(x), 0, 1);
        return {head(feature), feature};
    }

    struct Prediction {
        int label = 0;
        Tensor<Real> logits;   // 1 × n_classes
        Tensor<Real> feature;  // 1 × d_model
    };

    Prediction classify(const Tensor<Real>& motion) const {
        auto fw = forward(motion);
        Prediction p;
        p.logits = fw.logits->val;
        p.feature = fw.feature->val;
        p.label = 0;
        for (int64_t j = 1; j < p.logits.cols(); ++j)
            if (p.logits.at(0, j) > p.logits.at(0, p.label)) p.label = int(j);
        return p;
    }
};

struct ClassifierTrainConfig {
    int64_t iterations = 400;
    int64_t batch = 8;
    double lr = 1e-3;
    uint64_t seed = 0;
};

// Minibatch cross-entropy training; returns the loss trace. Batches are
// drawn with replacement from the training set.
template <typename Real>
std::vector<double> train_classifier(EmotionClassifier<Real>& clf,
                                     const std::vector<Tensor<Real>>& motions,
                                     const std::vector<int>& labels,
                                     const ClassifierTrainConfig& tc) {
    if (motions.size() != labels.size() || motions.empty())
        throw std::invalid_argument("train_classifier: empty or misaligned training set");
    for (int y : labels)
        if (y < 0 || y >= clf.cfg.n_classes)
            throw std::out_of_range("train_classifier: label outside class range");

    AdamWConfig oc;
    oc.lr = tc.lr;
    AdamW<Real> opt(oc, clf.ps);
    Rng rng = substream(tc.seed, "classifier-train");

    std::vector<double> trace;
    trace.reserve(size_t(tc.iterations));
    for (int64_t it = 0; it < tc.iterations; ++it) {
        clf.ps.zero_grads();
        NodePtr<Real> loss;
        for (int64_t b = 0; b < tc.batch; ++b) {
            const auto i = size_t(rng.uniform_int(int64_t(motions.size())));
            auto ce = cross_entropy_row(clf.forward(motions[i]).logits, labels[i]);
            loss = loss ? add(loss, ce) : ce;
        }
        loss = scale(loss, Real(1.0 / double(tc.batch)));
        backward(loss);
        opt.step(clf.ps);
        trace.push_back(double(loss->val.v[0]));
    }
    return trace;
}

template <typename Real>
double classifier_accuracy(const EmotionClassifier<Real>& clf,
                           const std::vector<Tensor<Real>>& motions,
                           const std::vector<int>& labels) {
    if (motions.size() != labels.size() || motions.empty())
        throw std::invalid_argument("classifier_accuracy: empty or misaligned set");
    int64_t hits = 0;
    for (size_t i = 0; i < motions.size(); ++i)
        hits += clf.classify(motions[i]).label == labels[i] ? 1 : 0;
    return double(hits) / double(motions.size());
}

}  // namespace facediff
