#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "facediff/conditioning.hpp"
#include "facediff/denoiser.hpp"
#include "facediff/diffusion.hpp"
#include "facediff/masks.hpp"
#include "facediff/optim.hpp"
#include "facediff/params.hpp"
#include "facediff/rng.hpp"
#include "facediff/types.hpp"

// Two-stage training. Stage 1 fits the base generator and the coarse
// encoder under the simple loss with condition dropout; stage 2 freezes the
// base and fits only the adapter, mixing the masked swap-label loss with
// the simple loss at rate p_swap.

namespace facediff {

// Generator dimensions plus the coarse-encoder widths that ride along with
// them; one config describes the whole trainable unit.
struct ModelConfig {
    GeneratorConfig gen;
    int64_t n_styles = 4;
    int64_t n_emotions = 4;
    int64_t d_style = 8;
    int64_t d_emotion = 8;
    int64_t d_intensity = 4;

    static ModelConfig desk() { return ModelConfig{}; }

    static ModelConfig paper() {
        ModelConfig c;
        c.gen = GeneratorConfig::paper();
        c.d_style = 32;
        c.d_emotion = 32;
        c.d_intensity = 8;
        return c;
    }

    void validate() const {
        gen.validate();
        if (n_styles < 1 || n_emotions < 1)
            throw std::invalid_argument("model config: need at least one style and one emotion");
        if (d_style < 1 || d_emotion < 1 || d_intensity < 1)
            throw std::invalid_argument("model config: encoder dimensions must be positive");
    }
};

namespace detail {
inline const ModelConfig& checked(const ModelConfig& c) {
    c.validate();
    return c;
}
}  // namespace detail

// Generator plus coarse encoder over one parameter store: the unit that
// training, checkpointing, and sampling operate on. Encoder weights live in
// the generator's store, so insert_adapter freezes them with the base.
template <typename Real>
struct Model {
    ModelConfig cfg;
    Generator<Real> gen;
    CoarseEncoder<Real> enc;

    explicit Model(const ModelConfig& config, uint64_t seed = 0)
        : cfg(detail::checked(config)),
          gen(config.gen, seed),
          enc(gen.ps, "cond", config.n_styles, config.n_emotions, config.d_style,
              config.d_emotion, config.d_intensity, config.gen.d_cond) {}
};

// One training example viewed in place. `fine` may be null for stage 1 or
// for clips without labeled events.
template <typename Real>
struct TrainExample {
    const AudioFeatures<Real>* audio = nullptr;
    const CoarseCondition* coarse = nullptr;
    const MotionSequence<Real>* motion = nullptr;
    const FineCondition* fine = nullptr;
};

struct TrainConfig {
    int stage = 1;
    double lr = 1e-4;
    int64_t batch = 8;      // paper profile trains at 16
    int64_t iterations = 1000;
    double p_swap = 0.5;    // stage-2 swap-branch rate
    uint64_t seed = 0;
    DropoutPolicy dropout;  // stage-1 condition dropout

    void validate() const {
        if (stage != 1 && stage != 2)
            throw std::invalid_argument("training stage must be 1 or 2");
        if (!(std::isfinite(lr) && lr >= 0.0))
            throw std::invalid_argument("learning rate must be finite and >= 0");
        if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
        if (iterations < 0) throw std::invalid_argument("iteration budget must be >= 0");
        if (!(p_swap >= 0.0 && p_swap <= 1.0))
            throw std::invalid_argument("p_swap must lie in [0,1]");
        dropout.validate();
    }
};

// One optimizer step. `loss` is the batch mean of per-example sums (simple:
// over all T×D entries; swap: over masked entries); `supervised` counts the
// entries those sums covered across the batch, so loss densities stay
// comparable across branches.
struct TrainStepRecord {
    int64_t iteration = 0;
    double loss = 0.0;
    std::string branch;      // "simple" | "swap"
    int64_t supervised = 0;  // entries the loss summed over (whole batch)
    double wall_ms = 0.0;
};

namespace detail {

template <typename Real>
void check_example(const TrainExample<Real>& ex, bool need_fine) {
    if (!ex.audio || !ex.coarse || !ex.motion)
        throw std::invalid_argument("training example is missing audio, coarse, or motion");
    if (need_fine && !ex.fine)
        throw std::invalid_argument("stage-2 example is missing its fine condition");
    ex.motion->validate();
    ex.audio->require_aligned(ex.motion->t());
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

inline void require_finite_loss(double loss, const char* stage, int64_t next_step,
                                size_t batch) {
    if (std::isfinite(loss)) return;
    throw std::runtime_error(std::string(stage) + " loss is non-finite before update " +
                             std::to_string(next_step) + " (loss=" + std::to_string(loss) +
                             ", batch=" + std::to_string(batch) + ")");
}

}  // namespace detail

// One stage-1 update: per example draw τ uniform in [1,T̂], noise the target,
// apply condition dropout, and accumulate the simple loss; the optimizer
// then steps the whole store (base plus encoder). The loss is checked for
// finiteness before the parameters are touched.
template <typename Real>
TrainStepRecord stage1_step(const std::vector<TrainExample<Real>>& batch, Model<Real>& model,
                            const NoiseSchedule& ns, const DropoutPolicy& policy,
                            AdamW<Real>& opt, Rng& rng) {
    const auto t0 = std::chrono::steady_clock::now();
    if (batch.empty()) throw std::invalid_argument("stage-1 step needs a non-empty batch");
    if (model.gen.has_adapter)
        throw std::logic_error("stage-1 step requires the base model without an adapter");
    if (ns.steps != model.gen.cfg.t_hat)
        throw std::invalid_argument("schedule has " + std::to_string(ns.steps) +
                                    " steps but the generator was built for " +
                                    std::to_string(model.gen.cfg.t_hat));

    model.gen.ps.zero_grads();
    NodePtr<Real> total;
    int64_t supervised = 0;
    for (const auto& ex : batch) {
        detail::check_example(ex, false);
        const int64_t tau = 1 + rng.uniform_int(ns.steps);
        Tensor<Real> noisy = forward_noise(ex.motion->frames, tau, ns, rng);
        ConditionNodes<Real> cond;
        cond.audio = constant(Tensor<Real>(ex.audio->features));
        cond.coarse = model.enc(*ex.coarse);
        cond = apply_dropout(cond, policy, rng);
        auto pred = model.gen.forward(constant(std::move(noisy)), tau, cond);
        auto l = simple_loss(pred, constant(Tensor<Real>(ex.motion->frames)));
        total = total ? add(total, l) : l;
        supervised += ex.motion->t() * ex.motion->d();
    }
    auto loss = scale(total, Real(1.0 / double(batch.size())));

    TrainStepRecord rec;
    rec.loss = double(loss->val.at(0, 0));
    detail::require_finite_loss(rec.loss, "stage-1", opt.step_count + 1, batch.size());
    backward(loss);
    opt.step(model.gen.ps);
    rec.iteration = opt.step_count;
    rec.branch = "simple";
    rec.supervised = supervised;
    rec.wall_ms = detail::ms_since(t0);
    return rec;
}

// One stage-2 update: a single branch coin switches the whole batch between
// the swap-label objective (swapped emotion, loss masked to Z_ctrl) and the
// simple objective. Per example the rng order is τ, noise, sparsify, then —
// on the swap branch — the emotion resample. Fine conditions left empty by
// sparsification map to the adapter's learned null embedding, so its
// unconditioned path trains alongside the conditioned one.
template <typename Real>
TrainStepRecord stage2_step(const std::vector<TrainExample<Real>>& batch, Model<Real>& model,
                            const NoiseSchedule& ns, const AUVocabulary& vocab, double p_swap,
                            AdamW<Real>& opt, Rng& rng) {
    const auto t0 = std::chrono::steady_clock::now();
    if (batch.empty()) throw std::invalid_argument("stage-2 step needs a non-empty batch");
    if (!model.gen.has_adapter)
        throw std::logic_error("stage-2 step requires an inserted adapter");
    if (!(p_swap >= 0.0 && p_swap <= 1.0))
        throw std::invalid_argument("p_swap must lie in [0,1]");
    if (ns.steps != model.gen.cfg.t_hat)
        throw std::invalid_argument("schedule has " + std::to_string(ns.steps) +
                                    " steps but the generator was built for " +
                                    std::to_string(model.gen.cfg.t_hat));
    if (int64_t(vocab.size()) != model.gen.cfg.vocab_size)
        throw std::invalid_argument("vocabulary has " + std::to_string(vocab.size()) +
                                    " AUs but the generator was built for " +
                                    std::to_string(model.gen.cfg.vocab_size));

    const bool swap = rng.bernoulli(p_swap);
    model.gen.ps.zero_grads();
    NodePtr<Real> total;
    int64_t supervised = 0;
    for (const auto& ex : batch) {
        detail::check_example(ex, true);
        const int64_t t_frames = ex.motion->t();
        const int64_t tau = 1 + rng.uniform_int(ns.steps);
        Tensor<Real> noisy = forward_noise(ex.motion->frames, tau, ns, rng);
        FineCondition sparse = sparsify_fine(*ex.fine, rng);

        ConditionNodes<Real> cond;
        cond.audio = constant(Tensor<Real>(ex.audio->features));
        if (!sparse.empty())
            cond.fine = constant(build_fine_grid<Real>(sparse, vocab, t_frames));

        NodePtr<Real> l;
        if (swap) {
            CoarseCondition swapped = swap_emotion(*ex.coarse, model.enc.n_emotions(), rng);
            cond.coarse = model.enc(swapped);
            Tensor<Real> ctrl = build_ctrl_mask<Real>(sparse, vocab, t_frames, model.gen.cfg.d);
            for (Real v : ctrl.v) supervised += v != Real(0) ? 1 : 0;
            auto pred = model.gen.forward(constant(std::move(noisy)), tau, cond);
            l = swap_loss(pred, constant(Tensor<Real>(ex.motion->frames)), ctrl);
        } else {
            cond.coarse = model.enc(*ex.coarse);
            supervised += t_frames * ex.motion->d();
            auto pred = model.gen.forward(constant(std::move(noisy)), tau, cond);
            l = simple_loss(pred, constant(Tensor<Real>(ex.motion->frames)));
        }
        total = total ? add(total, l) : l;
    }
    auto loss = scale(total, Real(1.0 / double(batch.size())));

    TrainStepRecord rec;
    rec.loss = double(loss->val.at(0, 0));
    detail::require_finite_loss(rec.loss, "stage-2", opt.step_count + 1, batch.size());
    backward(loss);
    opt.step(model.gen.ps);
    rec.iteration = opt.step_count;
    rec.branch = swap ? "swap" : "simple";
    rec.supervised = supervised;
    rec.wall_ms = detail::ms_since(t0);
    return rec;
}

// Run optimizer steps until the budget is met. `iterations` is the total
// budget: a resumed run (optimizer step count already past zero) performs
// only the remainder, which makes resume-equivalence a pure state question.
template <typename Real>
std::vector<TrainStepRecord> train(Model<Real>& model, const NoiseSchedule& ns,
                                   const AUVocabulary& vocab,
                                   const std::vector<TrainExample<Real>>& dataset,
                                   const TrainConfig& tc, AdamW<Real>& opt, Rng& rng,
                                   const std::function<void(const TrainStepRecord&)>& on_record =
                                       {}) {
    tc.validate();
    const int64_t remaining = tc.iterations - opt.step_count;
    if (remaining > 0 && dataset.empty())
        throw std::invalid_argument("training needs a non-empty dataset");
    std::vector<TrainStepRecord> records;
    records.reserve(size_t(remaining > 0 ? remaining : 0));
    for (int64_t it = 0; it < remaining; ++it) {
        std::vector<TrainExample<Real>> batch;
        batch.reserve(size_t(tc.batch));
        for (int64_t b = 0; b < tc.batch; ++b)
            batch.push_back(dataset[size_t(rng.uniform_int(int64_t(dataset.size())))]);
        TrainStepRecord rec = tc.stage == 1
                                  ? stage1_step(batch, model, ns, tc.dropout, opt, rng)
                                  : stage2_step(batch, model, ns, vocab, tc.p_swap, opt, rng);
        if (on_record) on_record(rec);
        records.push_back(std::move(rec));
    }
    return records;
}

// Deterministic held-out loss: per example, the simple loss of the
// value-level denoised estimate under full audio+coarse conditions at a
// fixed τ grid, with noise drawn from a per-example substream. Returns the
// mean over (example, τ) of the sum-convention loss.
template <typename Real>
double validation_loss(const Model<Real>& model, const NoiseSchedule& ns,
                       const std::vector<TrainExample<Real>>& examples, uint64_t seed) {
    if (examples.empty()) throw std::invalid_argument("validation needs at least one example");
    const int64_t t_hat = ns.steps;
    const int64_t taus[4] = {std::max<int64_t>(1, t_hat / 4), std::max<int64_t>(1, t_hat / 2),
                             std::max<int64_t>(1, (3 * t_hat) / 4), t_hat};
    double total = 0.0;
    int64_t n = 0;
    for (size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        detail::check_example(ex, false);
        Rng r = substream(seed, "val", uint64_t(i));
        Tensor<Real> coarse = model.enc.encode_value(*ex.coarse);
        ConditionBundle<Real> cond;
        cond.audio = &ex.audio->features;
        cond.coarse = &coarse;
        for (int64_t tau : taus) {
            Tensor<Real> noisy = forward_noise(ex.motion->frames, tau, ns, r);
            Tensor<Real> pred = model.gen.predict_x0(noisy, tau, cond);
            total += double(simple_loss_value(pred, ex.motion->frames));
            ++n;
        }
    }
    return total / double(n);
}

// Optimizer moments and step count, serialized with the checkpoint record
// framing: "adamw.step" (1×1), then "m.<name>"/"v.<name>" per parameter.
inline void save_trainer_state(const AdamW<double>& opt, const ParamStore<double>& store,
                               const std::string& path) {
    if (opt.m.size() != store.items.size() || opt.v.size() != store.items.size())
        throw std::logic_error("optimizer state does not match the parameter store");
    std::vector<NamedTensor> records;
    records.reserve(2 * store.items.size() + 1);
    NamedTensor steps;
    steps.name = "adamw.step";
    steps.value = Tensor<double>(1, 1);
    steps.value.at(0, 0) = double(opt.step_count);
    records.push_back(std::move(steps));
    for (size_t i = 0; i < store.items.size(); ++i) {
        records.push_back(NamedTensor{"m." + store.items[i]->name, opt.m[i]});
        records.push_back(NamedTensor{"v." + store.items[i]->name, opt.v[i]});
    }
    detail::write_file_bytes(path, serialize_records(records));
}

// Strict counterpart of save_trainer_state: every parameter must find both
// moment records at matching shapes. The optimizer keeps its config; only
// state is replaced, and only after the whole file checks out.
inline void load_trainer_state(AdamW<double>& opt, const ParamStore<double>& store,
                               const std::string& path) {
    auto records = deserialize_records(detail::read_file_bytes(path));
    if (records.size() != 2 * store.items.size() + 1)
        throw std::runtime_error("trainer state holds " + std::to_string(records.size()) +
                                 " records, expected " +
                                 std::to_string(2 * store.items.size() + 1));
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    auto take = [&](const std::string& name) -> const NamedTensor& {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("trainer state is missing record " + name);
        return *it->second;
    };
    const auto& steps = take("adamw.step");
    if (steps.value.rows() != 1 || steps.value.cols() != 1)
        throw std::runtime_error("trainer state step record must be 1x1");

    AdamW<double> loaded;
    loaded.cfg = opt.cfg;
    loaded.step_count = int64_t(steps.value.at(0, 0));
    loaded.m.reserve(store.items.size());
    loaded.v.reserve(store.items.size());
    for (const auto& p : store.items) {
        const auto& rm = take("m." + p->name);
        const auto& rv = take("v." + p->name);
        if (!rm.value.same_shape(p->value) || !rv.value.same_shape(p->value))
            throw std::runtime_error("trainer state shape mismatch for " + p->name);
        loaded.m.push_back(rm.value);
        loaded.v.push_back(rv.value);
    }
    opt = std::move(loaded);
}

}  // namespace facediff
