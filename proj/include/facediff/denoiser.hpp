#pragma once

#include <string>
#include <vector>

#include "facediff/layers.hpp"
#include "facediff/masks.hpp"
#include "facediff/types.hpp"

// The generator G: stacked diffusion-transformer blocks that predict the
// clean motion M̂_0 from a noisy M_τ, the diffusion step τ, and the
// condition bundle (audio, coarse, fine). The fine-grained adapter is an
// insertable per-block unit whose write path is a zero-initialized
// projection, so a freshly inserted adapter leaves the model's function
// unchanged while training only adapter weights.

namespace facediff {

struct GeneratorConfig {
    int64_t d = kNumChannels;  // motion channels
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t n_blocks = 2;
    int64_t d_audio = 8;
    int64_t d_cond = 16;      // fused coarse-condition feature width
    int64_t vocab_size = 16;  // AU vocabulary size (fine grid columns)
    int64_t half_width = 1;   // audio alignment band
    int64_t ffn_mult = 4;
    int64_t t_hat = 100;      // diffusion steps the model is trained for
    std::string profile = "desk";

    // Desk-scale defaults: small enough to train in CPU-minutes.
    static GeneratorConfig desk() { return GeneratorConfig{}; }

    // Full-scale profile; dimensions match the published setup.
    static GeneratorConfig paper() {
        GeneratorConfig c;
        c.d_model = 512;
        c.n_heads = 8;
        c.n_blocks = 8;
        c.d_audio = 64;
        c.d_cond = 64;
        c.half_width = 1;
        c.t_hat = 1000;
        c.profile = "paper";
        return c;
    }

    void validate() const {
        if (d < 1 || d_model < 1 || n_blocks < 1 || d_audio < 1 || d_cond < 1 ||
            vocab_size < 1 || ffn_mult < 1 || t_hat < 1)
            throw std::invalid_argument("generator config: dimensions must be positive");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw std::invalid_argument("generator config: d_model must divide by n_heads");
        if (half_width < 0)
            throw std::invalid_argument("generator config: half_width must be >= 0");
    }
};

// Per-call conditions. Null pointers mean "condition absent": the generator
// substitutes its learned null embedding for that modality.
template <typename Real>
struct ConditionBundle {
    const Tensor<Real>* audio = nullptr;   // T×d_audio
    const Tensor<Real>* coarse = nullptr;  // 1×d_cond fused feature C_f
    const Tensor<Real>* fine = nullptr;    // T×vocab multi-hot grid
};

// Graph-level condition slots. Trainers pass live nodes here so gradients
// reach upstream encoders; empty slots fall back to the learned nulls just
// like the value-level bundle.
template <typename Real>
struct ConditionNodes {
    NodePtr<Real> audio;   // T×d_audio
    NodePtr<Real> coarse;  // 1×d_cond fused feature C_f
    NodePtr<Real> fine;    // T×vocab multi-hot grid
};

template <typename Real>
struct GeneratorBlock {
    // Coarse path: adaLN-gated self-attention driven by the fused
    // timestep+coarse row.
    AdaLN<Real> ada;
    MultiHeadAttention<Real> attn_c;
    // Audio path: banded cross-attention with FiLM over per-frame audio.
    MultiHeadAttention<Real> attn_a;
    Film<Real> film_a;
    // Self path: self-attention with FiLM over the fused coarse row.
    MultiHeadAttention<Real> attn_s;
    Film<Real> film_s;
    FeedForward<Real> ffn;
    // Adapter (absent until inserted): FiLM self-attention over the fine
    // embedding, written back through a zero-initialized projection.
    bool has_adapter = false;
    MultiHeadAttention<Real> attn_f;
    Film<Real> film_f;
    ZeroProj<Real> zp;

    GeneratorBlock() = default;
    GeneratorBlock(ParamStore<Real>& ps, const std::string& prefix, const GeneratorConfig& cfg) {
        ada = AdaLN<Real>(ps, prefix + ".ada", cfg.d_model, cfg.d_model);
        attn_c = MultiHeadAttention<Real>(ps, prefix + ".attn_c", cfg.d_model, cfg.n_heads);
        attn_a = MultiHeadAttention<Real>(ps, prefix + ".attn_a", cfg.d_model, cfg.n_heads);
        film_a = Film<Real>(ps, prefix + ".film_a", cfg.d_model, cfg.d_model);
        attn_s = MultiHeadAttention<Real>(ps, prefix + ".attn_s", cfg.d_model, cfg.n_heads);
        film_s = Film<Real>(ps, prefix + ".film_s", cfg.d_model, cfg.d_model);
        ffn = FeedForward<Real>(ps, prefix + ".ffn", cfg.d_model, cfg.ffn_mult);
    }

    void insert_adapter(ParamStore<Real>& ps, const std::string& prefix,
                        const GeneratorConfig& cfg) {
        attn_f = MultiHeadAttention<Real>(ps, prefix + ".attn_f", cfg.d_model, cfg.n_heads);
        film_f = Film<Real>(ps, prefix + ".film_f", cfg.d_model, cfg.d_model);
        zp = ZeroProj<Real>(ps, prefix + ".zp", cfg.d_model, cfg.d_model);
        has_adapter = true;
    }

    // x: T×d_model; c: 1×d_model fused timestep+coarse; a_emb: T×d_model
    // audio embedding; f_emb: T×d_model fine embedding (adapter only);
    // align: T×T additive band mask.
    NodePtr<Real> operator()(NodePtr<Real> x, NodePtr<Real> c, NodePtr<Real> a_emb,
                             NodePtr<Real> f_emb, const Tensor<Real>& align) const {
        auto m = ada.modulate(x, c);
        x = ada.merge(x, attn_c(m, m), c);
        x = add(x, film_a(attn_a(layernorm_rows(x), a_emb, &align), a_emb));
        auto s = layernorm_rows(x);
        x = add(x, film_s(attn_s(s, s), c));
        if (has_adapter) {
            auto h = layernorm_rows(x);
            x = add(x, zp(film_f(attn_f(h, h), f_emb)));
        }
        return add(x, ffn(layernorm_rows(x)));
    }
};

template <typename Real>
struct Generator {
    GeneratorConfig cfg;
    ParamStore<Real> ps;
    bool has_adapter = false;

    Linear<Real> in_proj;                  // d → d_model
    Linear<Real> t_mlp1, t_mlp2;           // timestep MLP over the sincos row
    Linear<Real> coarse_proj;              // d_cond → d_model
    Linear<Real> audio_proj;               // d_audio → d_model
    Parameter<Real>* null_audio = nullptr; // 1×d_audio learned null
    Parameter<Real>* null_coarse = nullptr;// 1×d_cond learned null
    std::vector<GeneratorBlock<Real>> blocks;
    Linear<Real> out_proj;                 // d_model → d, zero-init

    // Adapter-owned pieces.
    Linear<Real> fine_proj;                // vocab → d_model
    Parameter<Real>* null_fine = nullptr;  // 1×d_model learned null embedding

    explicit Generator(const GeneratorConfig& config, uint64_t seed = 0)
        : cfg(config), ps(seed) {
        cfg.validate();
        in_proj = Linear<Real>(ps, "in", cfg.d, cfg.d_model);
        t_mlp1 = Linear<Real>(ps, "t_mlp1", cfg.d_model, cfg.d_model);
        t_mlp2 = Linear<Real>(ps, "t_mlp2", cfg.d_model, cfg.d_model);
        coarse_proj = Linear<Real>(ps, "coarse", cfg.d_cond, cfg.d_model);
        audio_proj = Linear<Real>(ps, "audio", cfg.d_audio, cfg.d_model);
        null_audio = ps.create("null_audio", 1, cfg.d_audio, Init::kEmbed);
        null_coarse = ps.create("null_coarse", 1, cfg.d_cond, Init::kEmbed);
        blocks.reserve(size_t(cfg.n_blocks));
        for (int64_t b = 0; b < cfg.n_blocks; ++b)
            blocks.emplace_back(ps, "block" + std::to_string(b), cfg);
        // Zero-init output head: the model starts by predicting exactly 0.
        out_proj = Linear<Real>(ps, "out", cfg.d_model, cfg.d, Init::kZeros);
    }

    // Allocate the adapter, zero_proj at zero, and freeze every base weight.
    // Base values are untouched: only trainability flips.
    void insert_adapter() {
        if (has_adapter) throw std::logic_error("adapter already present");
        for (auto& p : ps.items) p->trainable = false;
        fine_proj = Linear<Real>(ps, "adapter.fine", cfg.vocab_size, cfg.d_model);
        null_fine = ps.create("adapter.null_fine", 1, cfg.d_model, Init::kEmbed);
        for (size_t b = 0; b < blocks.size(); ++b)
            blocks[b].insert_adapter(ps, "adapter.block" + std::to_string(b), cfg);
        has_adapter = true;
    }

    bool is_adapter_param(const std::string& name) const {
        return name.rfind("adapter.", 0) == 0;
    }

    // Sinusoidal features for step τ (the row the timestep MLP consumes).
    Tensor<Real> timestep_features(int64_t tau) const {
        Tensor<Real> row(1, cfg.d_model);
        for (int64_t i = 0; i < cfg.d_model; ++i) {
            double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(cfg.d_model));
            double angle = double(tau) * rate;
            row.at(0, i) = Real((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
        return row;
    }

    NodePtr<Real> encode_timestep(int64_t tau) const {
        if (tau < 1 || tau > cfg.t_hat)
            throw std::out_of_range("timestep " + std::to_string(tau) + " outside [1," +
                                    std::to_string(cfg.t_hat) + "]");
        return t_mlp2(silu(t_mlp1(constant(timestep_features(tau)))));
    }

    // Graph-building forward pass: callers that train keep the returned node
    // and backprop through it; inference callers read .val.
    NodePtr<Real> forward(NodePtr<Real> noisy, int64_t tau,
                          const ConditionNodes<Real>& cond) const {
        const int64_t T = noisy->val.rows();
        if (noisy->val.cols() != cfg.d)
            throw std::invalid_argument("motion has " + std::to_string(noisy->val.cols()) +
                                        " channels, model expects " + std::to_string(cfg.d));
        if (cond.audio &&
            (cond.audio->val.rows() != T || cond.audio->val.cols() != cfg.d_audio))
            throw std::invalid_argument("audio features misaligned with motion");
        if (cond.coarse && (cond.coarse->val.rows() != 1 || cond.coarse->val.cols() != cfg.d_cond))
            throw std::invalid_argument("coarse feature must be 1×d_cond");
        if (cond.fine && (cond.fine->val.rows() != T || cond.fine->val.cols() != cfg.vocab_size))
            throw std::invalid_argument("fine grid misaligned with motion");

        // Fused conditioning row: timestep + coarse (or its learned null).
        auto c = encode_timestep(tau);
        auto coarse_in = cond.coarse ? cond.coarse : param_leaf(*null_coarse);
        c = add(c, coarse_proj(coarse_in));

        // Per-frame audio embedding (null row broadcast when absent).
        auto audio_in = cond.audio ? cond.audio : broadcast_rows(param_leaf(*null_audio), T);
        auto pos = constant(sinusoidal_table<Real>(T, cfg.d_model));
        auto a_emb = add(audio_proj(audio_in), pos);

        // Fine embedding feeds only the adapter.
        NodePtr<Real> f_emb;
        if (has_adapter) {
            f_emb = cond.fine ? fine_proj(cond.fine)
                              : broadcast_rows(param_leaf(*null_fine), T);
        }

        Tensor<Real> align = build_align_mask<Real>(T, cfg.half_width);
        auto x = add(in_proj(noisy), pos);
        for (const auto& block : blocks) x = block(x, c, a_emb, f_emb, align);
        return out_proj(layernorm_rows(x));
    }

    // Value-level conditions: tensors are wrapped as constants (no gradient
    // flows past the bundle).
    NodePtr<Real> forward(NodePtr<Real> noisy, int64_t tau,
                          const ConditionBundle<Real>& cond) const {
        ConditionNodes<Real> nodes;
        if (cond.audio) nodes.audio = constant(Tensor<Real>(*cond.audio));
        if (cond.coarse) nodes.coarse = constant(Tensor<Real>(*cond.coarse));
        if (cond.fine) nodes.fine = constant(Tensor<Real>(*cond.fine));
        return forward(noisy, tau, nodes);
    }

    // Value-level denoised estimate M̂_0.
    Tensor<Real> predict_x0(const Tensor<Real>& noisy, int64_t tau,
                            const ConditionBundle<Real>& cond) const {
        return forward(constant(Tensor<Real>(noisy)), tau, cond)->val;
    }
};

}  // namespace facediff
