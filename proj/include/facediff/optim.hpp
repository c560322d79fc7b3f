#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "facediff/params.hpp"

// AdamW with bias correction and decoupled weight decay:
//   m ← β₁m + (1−β₁)g          v ← β₂v + (1−β₂)g²
//   θ ← θ − lr·( m̂/(√v̂ + ε) + λθ ),   m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ)
// Frozen parameters are skipped entirely — no moments, no decay.

namespace facediff {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const {
        if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("betas must lie in [0,1)");
        if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
    }
};

template <typename Real>
struct AdamW {
    AdamWConfig cfg;
    int64_t step_count = 0;
    std::vector<Tensor<Real>> m, v;  // aligned with the store's item order

    AdamW() = default;
    AdamW(AdamWConfig c, const ParamStore<Real>& store) : cfg(c) {
        cfg.validate();
        reset(store);
    }

    void reset(const ParamStore<Real>& store) {
        step_count = 0;
        m.clear();
        v.clear();
        for (const auto& p : store.items) {
            m.push_back(Tensor<Real>::zeros_like(p->value));
            v.push_back(Tensor<Real>::zeros_like(p->value));
        }
    }

    // One update from the gradients currently accumulated in the store.
    void step(ParamStore<Real>& store) {
        if (m.size() != store.items.size())
            throw std::logic_error("optimizer state does not match the parameter store");
        ++step_count;
        const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_count));
        for (size_t i = 0; i < store.items.size(); ++i) {
            auto& p = *store.items[i];
            if (!p.trainable) continue;
            for (size_t k = 0; k < p.value.v.size(); ++k) {
                const double g = double(p.grad.v[k]);
                const double mk = cfg.beta1 * double(m[i].v[k]) + (1.0 - cfg.beta1) * g;
                const double vk = cfg.beta2 * double(v[i].v[k]) + (1.0 - cfg.beta2) * g * g;
                m[i].v[k] = Real(mk);
                v[i].v[k] = Real(vk);
                const double m_hat = mk / bc1;
                const double v_hat = vk / bc2;
                p.value.v[k] -= Real(cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) +
                                               cfg.weight_decay * double(p.value.v[k])));
            }
        }
    }
};

}  // namespace facediff
