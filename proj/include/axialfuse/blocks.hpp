#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "axialfuse/params.hpp"
#include "axialfuse/tensor.hpp"

namespace axialfuse {

// Optional dropout context threaded through forward passes. Null pointer or
// rate 0 means eval / no dropout.
struct DropoutCtx {
    double rate = 0.0;
    std::mt19937_64* rng = nullptr;
};

template <typename T>
TensorT<T> apply_dropout(const TensorT<T>& x, const DropoutCtx* ctx) {
    if (!ctx || ctx->rate <= 0.0 || !ctx->rng) return x;
    std::bernoulli_distribution keep(1.0 - ctx->rate);
    std::vector<T> mask(x.numel());
    T inv = static_cast<T>(1.0 / (1.0 - ctx->rate));
    for (T& m : mask) m = keep(*ctx->rng) ? inv : T(0);
    return mul(x, TensorT<T>::leaf(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Linear / LayerNorm parameter bundles
// ---------------------------------------------------------------------------

template <typename T>
struct LinearT {
    ParameterT<T> w;  // (in, out)
    ParameterT<T> b;  // (out)

    LinearT() = default;
    LinearT(const std::string& name, int in, int out, std::mt19937_64& rng) {
        auto wt = TensorT<T>::zeros({in, out});
        fill_trunc_normal(wt, rng);
        w = ParameterT<T>(name + ".w", std::move(wt));
        b = ParameterT<T>(name + ".b", TensorT<T>::zeros({out}));
    }

    TensorT<T> forward(const TensorT<T>& x) const { return add(matmul(x, w.value), b.value); }
    void collect(ParamRegistryT<T>& reg) {
        reg.add(w);
        reg.add(b);
    }
};

template <typename T>
struct LayerNormParamT {
    ParameterT<T> gamma, beta;
    T eps = static_cast<T>(1e-5);

    LayerNormParamT() = default;
    LayerNormParamT(const std::string& name, int dim)
        : gamma(name + ".gamma", TensorT<T>::full({dim}, T(1))),
          beta(name + ".beta", TensorT<T>::zeros({dim})) {}

    TensorT<T> forward(const TensorT<T>& x) const { return layernorm(x, gamma.value, beta.value, eps); }
    void collect(ParamRegistryT<T>& reg) {
        reg.add(gamma);
        reg.add(beta);
    }
};

// ---------------------------------------------------------------------------
// RICA: dual-axis positional gating over the D x E pseudo-2D feature map.
// Depth path: pool over E -> conv1d(k=3) over D -> sigmoid.
// Embed path: pool over D -> bottleneck (ratio 4, ReLU inside) -> sigmoid.
// Mix scalars start at zero, so the block is the identity at init.
// ---------------------------------------------------------------------------

// y = x + ad * (gd broadcast over rows) * x + ae * (ge broadcast over cols) * x
template <typename T>
TensorT<T> rica_combine(const TensorT<T>& x, const TensorT<T>& gd, const TensorT<T>& ge,
                        const TensorT<T>& alpha_d, const TensorT<T>& alpha_e) {
    int d = x.shape()[0];
    TensorT<T> term_d = mul(reshape(gd, {d, 1}), x);
    TensorT<T> term_e = mul(ge, x);
    return add(x, add(mul(alpha_d, term_d), mul(alpha_e, term_e)));
}

template <typename T>
struct RicaBlockT {
    ParameterT<T> conv_w, conv_b;
    LinearT<T> squeeze, expand;
    ParameterT<T> alpha_d, alpha_e;

    RicaBlockT() = default;
    RicaBlockT(const std::string& name, int embed_dim, std::mt19937_64& rng) {
        if (embed_dim % 4 != 0)
            throw ContractError("rica: embed dim must be divisible by the bottleneck ratio 4, got " +
                                std::to_string(embed_dim));
        auto cw = TensorT<T>::zeros({3});
        fill_trunc_normal(cw, rng);
        conv_w = ParameterT<T>(name + ".conv.w", std::move(cw));
        conv_b = ParameterT<T>(name + ".conv.b", TensorT<T>::zeros({1}));
        squeeze = LinearT<T>(name + ".squeeze", embed_dim, embed_dim / 4, rng);
        expand = LinearT<T>(name + ".expand", embed_dim / 4, embed_dim, rng);
        alpha_d = ParameterT<T>(name + ".alpha_d", TensorT<T>::zeros({1}));
        alpha_e = ParameterT<T>(name + ".alpha_e", TensorT<T>::zeros({1}));
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        TensorT<T> depth_pool = reduce(x, Reduce::mean, 1);  // (D)
        TensorT<T> gd = sigmoid_op(conv1d_same(depth_pool, conv_w.value, conv_b.value));
        TensorT<T> embed_pool = reshape(reduce(x, Reduce::mean, 0), {1, x.shape()[1]});
        TensorT<T> ge = sigmoid_op(expand.forward(relu_op(squeeze.forward(embed_pool))));
        return rica_combine(x, gd, ge, alpha_d.value, alpha_e.value);
    }

    void collect(ParamRegistryT<T>& reg) {
        reg.add(conv_w);
        reg.add(conv_b);
        squeeze.collect(reg);
        expand.collect(reg);
        reg.add(alpha_d);
        reg.add(alpha_e);
    }
};

// ---------------------------------------------------------------------------
// CLS prepend + learnable positional embedding (covers the CLS slot too)
// ---------------------------------------------------------------------------

template <typename T>
struct TokenPrepT {
    ParameterT<T> cls;  // (1, E)
    ParameterT<T> pos;  // (D+1, E)

    TokenPrepT() = default;
    TokenPrepT(const std::string& name, int seq_len, int embed_dim, std::mt19937_64& rng) {
        auto c = TensorT<T>::zeros({1, embed_dim});
        fill_trunc_normal(c, rng);
        cls = ParameterT<T>(name + ".cls", std::move(c));
        auto p = TensorT<T>::zeros({seq_len + 1, embed_dim});
        fill_trunc_normal(p, rng);
        pos = ParameterT<T>(name + ".pos", std::move(p));
    }

    TensorT<T> prepare(const TensorT<T>& seq) const {
        if (seq.rank() != 2 || seq.shape()[1] != cls.value.shape()[1])
            throw DimensionError("prepare_tokens: sequence shape " + shape_str(seq.shape()) +
                                 " does not match embed dim " + std::to_string(cls.value.shape()[1]));
        if (seq.shape()[0] + 1 != pos.value.shape()[0])
            throw DimensionError("prepare_tokens: sequence length " + std::to_string(seq.shape()[0]) +
                                 " does not match positional table for " +
                                 std::to_string(pos.value.shape()[0] - 1) + " slices");
        return add(concat<T>({cls.value, seq}, 0), pos.value);
    }

    void collect(ParamRegistryT<T>& reg) {
        reg.add(cls);
        reg.add(pos);
    }
};

// ---------------------------------------------------------------------------
// Encoder layers. Pre-norm ViT layout. In cross mode the residual around
// the attention sublayer is omitted; the FFN residual stays.
// ---------------------------------------------------------------------------

enum class EncoderMode { self, cross };

struct EncoderConfig {
    int embed_dim = 32;      // E
    int layers = 2;          // N
    int heads = 2;           // H
    int ffn_multiplier = 4;
    double dropout = 0.0;
    EncoderMode mode = EncoderMode::self;

    void validate(bool allow_empty = false) const {
        if (embed_dim < 8) throw ContractError("encoder: embed dim must be >= 8, got " + std::to_string(embed_dim));
        if (heads < 1 || embed_dim % heads != 0)
            throw ContractError("encoder: embed dim " + std::to_string(embed_dim) +
                                " must divide evenly into " + std::to_string(heads) + " heads");
        if (layers < (allow_empty ? 0 : 1))
            throw ContractError("encoder: layer count must be >= 1, got " + std::to_string(layers));
        if (dropout < 0.0 || dropout >= 1.0)
            throw ContractError("encoder: dropout must lie in [0,1), got " + std::to_string(dropout));
    }
};

template <typename T>
struct EncoderLayerT {
    bool cross = false;
    int heads = 1;
    LayerNormParamT<T> ln1;    // query stream
    LayerNormParamT<T> ln_kv;  // cross mode only
    LinearT<T> wq, wk, wv, wo;
    LayerNormParamT<T> ln2;
    LinearT<T> ff1, ff2;

    EncoderLayerT() = default;
    EncoderLayerT(const std::string& name, const EncoderConfig& cfg, std::mt19937_64& rng)
        : cross(cfg.mode == EncoderMode::cross), heads(cfg.heads) {
        int e = cfg.embed_dim;
        ln1 = LayerNormParamT<T>(name + ".ln1", e);
        if (cross) ln_kv = LayerNormParamT<T>(name + ".ln_kv", e);
        wq = LinearT<T>(name + ".wq", e, e, rng);
        wk = LinearT<T>(name + ".wk", e, e, rng);
        wv = LinearT<T>(name + ".wv", e, e, rng);
        wo = LinearT<T>(name + ".wo", e, e, rng);
        ln2 = LayerNormParamT<T>(name + ".ln2", e);
        ff1 = LinearT<T>(name + ".ff1", e, e * cfg.ffn_multiplier, rng);
        ff2 = LinearT<T>(name + ".ff2", e * cfg.ffn_multiplier, e, rng);
    }

    // Scaled dot-product multi-head attention. Queries from q_in, keys and
    // values from kv_in (q_in == kv_in in self mode). If probe is non-null
    // it receives the post-softmax probabilities, shape (H, Tq, Tkv).
    TensorT<T> attention(const TensorT<T>& q_in, const TensorT<T>& kv_in,
                         std::vector<TensorT<T>>* probe = nullptr) const {
        int e = q_in.shape()[1];
        int tq = q_in.shape()[0], tkv = kv_in.shape()[0];
        int dh = e / heads;
        TensorT<T> q = permute(reshape(wq.forward(q_in), {tq, heads, dh}), {1, 0, 2});   // (H,Tq,dh)
        TensorT<T> k = permute(reshape(wk.forward(kv_in), {tkv, heads, dh}), {1, 2, 0});  // (H,dh,Tkv)
        TensorT<T> v = permute(reshape(wv.forward(kv_in), {tkv, heads, dh}), {1, 0, 2});  // (H,Tkv,dh)
        TensorT<T> scores = scale(matmul(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
        TensorT<T> probs = softmax(scores, 2);
        if (probe) probe->push_back(probs);
        TensorT<T> ctx = permute(matmul(probs, v), {1, 0, 2});  // (Tq,H,dh)
        return wo.forward(reshape(ctx, {tq, e}));
    }

    TensorT<T> ffn(const TensorT<T>& x) const { return ff2.forward(gelu_op(ff1.forward(x))); }

    TensorT<T> forward_self(const TensorT<T>& t, std::vector<TensorT<T>>* probe = nullptr,
                            const DropoutCtx* drop = nullptr) const {
        TensorT<T> normed = ln1.forward(t);
        TensorT<T> t2 = add(t, apply_dropout(attention(normed, normed, probe), drop));
        return add(t2, apply_dropout(ffn(ln2.forward(t2)), drop));
    }

    // `query_residual` re-enables the additive +q path around the
    // cross-attention; it exists as a structural ablation witness and is
    // off on the production path.
    TensorT<T> forward_cross(const TensorT<T>& q, const TensorT<T>& kv,
                             std::vector<TensorT<T>>* probe = nullptr,
                             const DropoutCtx* drop = nullptr, bool query_residual = false) const {
        TensorT<T> a = apply_dropout(attention(ln1.forward(q), ln_kv.forward(kv), probe), drop);
        TensorT<T> t2 = query_residual ? add(q, a) : a;
        return add(t2, apply_dropout(ffn(ln2.forward(t2)), drop));
    }

    void collect(ParamRegistryT<T>& reg) {
        ln1.collect(reg);
        if (cross) ln_kv.collect(reg);
        wq.collect(reg);
        wk.collect(reg);
        wv.collect(reg);
        wo.collect(reg);
        ln2.collect(reg);
        ff1.collect(reg);
        ff2.collect(reg);
    }
};

template <typename T>
struct EncoderT {
    EncoderConfig config;
    std::vector<EncoderLayerT<T>> layers;

    EncoderT() = default;
    EncoderT(const std::string& name, EncoderConfig cfg, std::mt19937_64& rng) : config(cfg) {
        config.validate(/*allow_empty=*/true);
        for (int i = 0; i < cfg.layers; ++i)
            layers.emplace_back(name + ".l" + std::to_string(i), cfg, rng);
    }

    // Self mode refines the sequence layer by layer. Cross mode feeds the
    // SAME kv into every layer while the query stream is refined.
    TensorT<T> encode(const TensorT<T>& seq, const TensorT<T>* kv = nullptr,
                      std::vector<TensorT<T>>* probe = nullptr, const DropoutCtx* drop = nullptr,
                      bool query_residual = false) const {
        if (config.mode == EncoderMode::self && kv)
            throw ContractError("encode: self mode takes no kv sequence");
        if (config.mode == EncoderMode::cross && !kv)
            throw ContractError("encode: cross mode requires a kv sequence");
        if (kv && kv->shape()[1] != seq.shape()[1])
            throw DimensionError("encode: q and kv embed dims differ, " + shape_str(seq.shape()) +
                                 " vs " + shape_str(kv->shape()));
        TensorT<T> t = seq;
        for (const auto& layer : layers)
            t = config.mode == EncoderMode::self ? layer.forward_self(t, probe, drop)
                                                 : layer.forward_cross(t, *kv, probe, drop, query_residual);
        return t;
    }

    void collect(ParamRegistryT<T>& reg) {
        for (auto& l : layers) l.collect(reg);
    }
};

}  // namespace axialfuse
