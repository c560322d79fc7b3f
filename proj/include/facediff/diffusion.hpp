#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "facediff/denoiser.hpp"
#include "facediff/rng.hpp"
#include "facediff/tensor.hpp"
#include "facediff/types.hpp"

// Diffusion machinery around the generator: the noise schedule, the closed
// form of the forward noising process, the two training losses, and the
// reverse sampler with mask-based classifier-free guidance.
//
// Loss reduction convention: losses returned here are sums over all T×D
// entries of one clip; training code averages per-clip losses over the
// batch. Documented so reported loss curves are comparable.

namespace facediff {

// Per-step noise levels α_τ and their running products ᾱ_τ, 1-indexed by τ
// (stored at τ-1). A usable schedule drives ᾱ from ~1 down to ~0 so the
// final step is indistinguishable from pure Gaussian noise.
struct NoiseSchedule {
    int64_t steps = 0;
    std::vector<double> alpha;      // α_τ at [τ-1]
    std::vector<double> alpha_bar;  // ᾱ_τ = Π α at [τ-1]

    // Cosine ᾱ curve with the usual 0.008 offset; per-step α clipped to
    // [0.001, 0.999] and ᾱ rebuilt as the running product of clipped α so
    // the stored pair stays exactly consistent.
    static NoiseSchedule cosine(int64_t steps) {
        if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
        const double s = 0.008;
        const double half_pi = std::acos(0.0);
        auto f = [&](double t) {
            double u = std::cos((t / double(steps) + s) / (1.0 + s) * half_pi);
            return u * u;
        };
        NoiseSchedule ns;
        ns.steps = steps;
        ns.alpha.reserve(size_t(steps));
        ns.alpha_bar.reserve(size_t(steps));
        const double f0 = f(0.0);
        double raw_prev = 1.0;
        double abar = 1.0;
        for (int64_t tau = 1; tau <= steps; ++tau) {
            double raw = f(double(tau)) / f0;
            double a = raw / raw_prev;
            raw_prev = raw;
            a = std::min(0.999, std::max(0.001, a));
            abar *= a;
            ns.alpha.push_back(a);
            ns.alpha_bar.push_back(abar);
        }
        return ns;
    }

    double alpha_at(int64_t tau) const {
        check_tau(tau);
        return alpha[size_t(tau - 1)];
    }
    double alpha_bar_at(int64_t tau) const {
        check_tau(tau);
        return alpha_bar[size_t(tau - 1)];
    }
    void check_tau(int64_t tau) const {
        if (tau < 1 || tau > steps)
            throw std::out_of_range("step " + std::to_string(tau) + " outside [1," +
                                    std::to_string(steps) + "]");
    }

    void validate() const {
        if (steps < 1 || alpha.size() != size_t(steps) || alpha_bar.size() != size_t(steps))
            throw std::invalid_argument("schedule arrays disagree with step count");
        double prod = 1.0;
        double prev = 1.0;
        for (size_t i = 0; i < alpha.size(); ++i) {
            if (!(alpha[i] > 0.0 && alpha[i] < 1.0))
                throw std::invalid_argument("alpha[" + std::to_string(i + 1) +
                                            "] outside (0,1)");
            prod *= alpha[i];
            if (std::abs(alpha_bar[i] - prod) > 1e-12)
                throw std::invalid_argument("alpha_bar is not the running product of alpha");
            if (!(alpha_bar[i] < prev))
                throw std::invalid_argument("alpha_bar must strictly decrease");
            prev = alpha_bar[i];
        }
        if (alpha_bar.back() > 0.1)
            throw std::invalid_argument("terminal alpha_bar too large: the last step must "
                                        "be close to pure noise");
    }
};

// Closed form of iterating the single-step forward process:
//   M_τ = √ᾱ_τ · M_0 + √(1−ᾱ_τ) · ε,  ε ~ N(0, I).
// Draws one normal per entry in row-major order, unconditionally, so rng
// accounting is independent of the schedule's values.
template <typename Real>
Tensor<Real> forward_noise(const Tensor<Real>& clean, int64_t tau, const NoiseSchedule& ns,
                           Rng& rng) {
    ns.check_tau(tau);
    const double ab = ns.alpha_bar[size_t(tau - 1)];
    const Real s_clean = Real(std::sqrt(ab));
    const Real s_noise = Real(std::sqrt(1.0 - ab));
    Tensor<Real> out(clean.rows(), clean.cols());
    for (size_t i = 0; i < clean.v.size(); ++i)
        out.v[i] = s_clean * clean.v[i] + s_noise * Real(rng.normal());
    return out;
}

// Squared L2 over all entries (sum convention). Node form for training.
template <typename Real>
NodePtr<Real> simple_loss(NodePtr<Real> pred, NodePtr<Real> target) {
    return sum_sq_diff(pred, target);
}

template <typename Real>
Real simple_loss_value(const Tensor<Real>& pred, const Tensor<Real>& target) {
    pred.require_same_shape(target, "simple_loss");
    Real acc = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        Real d = pred.v[i] - target.v[i];
        acc += d * d;
    }
    return acc;
}

// Squared L2 of Z_ctrl ⊙ (target − pred): the control-region loss used with
// swapped coarse labels. An all-ones mask reproduces simple_loss exactly;
// gradient support is confined to the mask's support.
template <typename Real>
NodePtr<Real> swap_loss(NodePtr<Real> pred, NodePtr<Real> target, const Tensor<Real>& ctrl) {
    pred->val.require_same_shape(target->val, "swap_loss");
    pred->val.require_same_shape(ctrl, "swap_loss mask");
    auto masked = mul(sub(target, pred), constant(Tensor<Real>(ctrl)));
    return sum_sq_diff(masked, constant(Tensor<Real>::zeros_like(ctrl)));
}

template <typename Real>
Real swap_loss_value(const Tensor<Real>& pred, const Tensor<Real>& target,
                     const Tensor<Real>& ctrl) {
    pred.require_same_shape(target, "swap_loss");
    pred.require_same_shape(ctrl, "swap_loss mask");
    Real acc = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        Real d = ctrl.v[i] * (target.v[i] - pred.v[i]);
        acc += d * d;
    }
    return acc;
}

// Guidance settings for the reverse sampler. alpha_scale strengthens the
// audio+coarse direction; beta_scale strengthens the fine direction inside
// the temporal mask and doubles as the intensity control. An empty cfg_mask
// means "no frames marked" (the fine term vanishes everywhere).
template <typename Real>
struct GuidanceConfig {
    Real alpha_scale = Real(2);
    Real beta_scale = Real(0);
    Tensor<Real> cfg_mask;  // T×1 temporal mask Z_cfg, or empty

    void validate(int64_t t_frames) const {
        if (!std::isfinite(double(alpha_scale)) || !std::isfinite(double(beta_scale)))
            throw std::invalid_argument("guidance scales must be finite");
        if (cfg_mask.size() != 0 && (cfg_mask.rows() != t_frames || cfg_mask.cols() != 1))
            throw std::invalid_argument("cfg mask must be T×1, got " + cfg_mask.shape_str());
    }
};

// The guided combination
//   M̂_0 = G_Φ + α(G_{A,C} − G_Φ) + β · Z_cfg ⊙ (G_{A,C,F} − G_Φ)
// evaluated as (1−α)·G_Φ + α·G_{A,C} + β·Z_cfg⊙(G_{A,C,F} − G_Φ) so that
// α=1 reproduces G_{A,C} and α=0 reproduces G_Φ without rounding residue.
template <typename Real>
Tensor<Real> cfg_combine(const Tensor<Real>& g_null, const Tensor<Real>& g_ac,
                         const Tensor<Real>& g_acf, const GuidanceConfig<Real>& guidance) {
    g_null.require_same_shape(g_ac, "cfg_combine");
    g_null.require_same_shape(g_acf, "cfg_combine");
    guidance.validate(g_null.rows());
    const Real a = guidance.alpha_scale;
    const Real one_minus_a = Real(1) - a;
    const Real b = guidance.beta_scale;
    const bool masked = guidance.cfg_mask.size() != 0;
    Tensor<Real> out(g_null.rows(), g_null.cols());
    for (int64_t t = 0; t < out.rows(); ++t) {
        const Real m = masked ? guidance.cfg_mask.at(t, 0) : Real(0);
        for (int64_t j = 0; j < out.cols(); ++j) {
            Real base = one_minus_a * g_null.at(t, j) + a * g_ac.at(t, j);
            Real fine = b * m * (g_acf.at(t, j) - g_null.at(t, j));
            out.at(t, j) = base + fine;
        }
    }
    return out;
}

// One guided denoising estimate: three generator evaluations (all-null,
// audio+coarse, all conditions) combined per the formula above.
template <typename Real>
Tensor<Real> masked_cfg(const Generator<Real>& gen, const Tensor<Real>& noisy, int64_t tau,
                        const ConditionBundle<Real>& cond, const GuidanceConfig<Real>& guidance) {
    ConditionBundle<Real> none;
    ConditionBundle<Real> coarse_only{cond.audio, cond.coarse, nullptr};
    Tensor<Real> g_null = gen.predict_x0(noisy, tau, none);
    Tensor<Real> g_ac = gen.predict_x0(noisy, tau, coarse_only);
    Tensor<Real> g_acf = gen.predict_x0(noisy, tau, cond);
    return cfg_combine(g_null, g_ac, g_acf, guidance);
}

// Reverse sampler: start from pure noise, and at each step τ = T̂ … 1 form
// the guided estimate M̂_0, then (for τ > 1) re-noise it to level τ−1 by the
// forward process. The final M̂_0 is the sample.
template <typename Real>
MotionSequence<Real> sample(const Generator<Real>& gen, const NoiseSchedule& ns,
                            int64_t t_frames, const ConditionBundle<Real>& cond,
                            const GuidanceConfig<Real>& guidance, Rng& rng,
                            double fps = kDefaultFps) {
    if (t_frames < 1) throw std::invalid_argument("sample needs at least one frame");
    if (ns.steps != gen.cfg.t_hat)
        throw std::invalid_argument("schedule has " + std::to_string(ns.steps) +
                                    " steps but the generator was built for " +
                                    std::to_string(gen.cfg.t_hat));
    guidance.validate(t_frames);

    Tensor<Real> m_tau(t_frames, gen.cfg.d);
    for (auto& x : m_tau.v) x = Real(rng.normal());

    Tensor<Real> x0_hat;
    for (int64_t tau = ns.steps; tau >= 1; --tau) {
        x0_hat = masked_cfg(gen, m_tau, tau, cond, guidance);
        if (!x0_hat.all_finite())
            throw std::runtime_error("sampling produced non-finite values at step tau=" +
                                     std::to_string(tau));
        if (tau > 1) {
            const double ab = ns.alpha_bar[size_t(tau - 2)];  // ᾱ_{τ-1}
            const Real s_clean = Real(std::sqrt(ab));
            const Real s_noise = Real(std::sqrt(1.0 - ab));
            for (size_t i = 0; i < m_tau.v.size(); ++i)
                m_tau.v[i] = s_clean * x0_hat.v[i] + s_noise * Real(rng.normal());
        }
    }

    MotionSequence<Real> seq;
    seq.frames = x0_hat;
    seq.fps = fps;
    return seq;
}

}  // namespace facediff
