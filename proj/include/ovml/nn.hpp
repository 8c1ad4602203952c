#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/parameter.hpp"
#include "ovml/tape.hpp"

namespace ovml {

struct AttentionSpec {
    int n_heads = 1;
    int model_dim = 0;
    bool causal = false;

    AttentionSpec() = default;
    AttentionSpec(int heads, int dim, bool causal_flag = false)
        : n_heads(heads), model_dim(dim), causal(causal_flag) {
        if (heads <= 0 || dim <= 0) throw std::invalid_argument("AttentionSpec: positive dims");
        if (dim % heads != 0) throw std::invalid_argument("AttentionSpec: model_dim % n_heads != 0");
    }

    int head_dim() const { return model_dim / n_heads; }
};

inline std::vector<std::uint8_t> causal_mask(int s) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(s) * s, 0);
    for (int i = 0; i < s; ++i)
        for (int j = 0; j <= i; ++j) m[static_cast<std::size_t>(i) * s + j] = 1;
    return m;
}

// Single-head scaled dot-product attention over tape refs.
// q: S x d, k/v: S' x d, mask: S*S' bytes (empty = no mask).
template <typename T>
typename Tape<T>::Ref scaled_dot_attention(Tape<T>& tape, typename Tape<T>::Ref q,
                                           typename Tape<T>::Ref k, typename Tape<T>::Ref v,
                                           std::vector<std::uint8_t> mask = {}) {
    const int d = tape.value(q).cols();
    if (tape.value(k).cols() != d) throw std::invalid_argument("attention: q/k width mismatch");
    if (tape.value(k).rows() != tape.value(v).rows())
        throw std::invalid_argument("attention: k/v row mismatch");
    auto scores = tape.scale(tape.matmul_nt(q, k), T(1) / std::sqrt(static_cast<T>(d)));
    auto probs = tape.softmax_rows(scores, std::move(mask));
    return tape.matmul(probs, v);
}

template <typename T>
struct LayerNormParams {
    Parameter<T>* gain = nullptr;
    Parameter<T>* bias = nullptr;

    static LayerNormParams create(ParameterStore<T>& store, const std::string& prefix, int d,
                                  bool trainable, std::uint64_t seed) {
        LayerNormParams p;
        p.gain = &store.add_init(prefix + ".gain", {1, d}, trainable, seed, InitScheme::ones);
        p.bias = &store.add_init(prefix + ".bias", {1, d}, trainable, seed, InitScheme::zeros);
        return p;
    }

    typename Tape<T>::Ref forward(Tape<T>& tape, typename Tape<T>::Ref x) const {
        return tape.layer_norm(x, tape.param(*gain), tape.param(*bias));
    }
};

template <typename T>
struct AttentionWeightRefs {
    typename Tape<T>::Ref wq, wk, wv, wo;
};

template <typename T>
struct AttentionParams {
    Parameter<T>* wq = nullptr;
    Parameter<T>* wk = nullptr;
    Parameter<T>* wv = nullptr;
    Parameter<T>* wo = nullptr;

    static AttentionParams create(ParameterStore<T>& store, const std::string& prefix, int d,
                                  bool trainable, std::uint64_t seed) {
        AttentionParams p;
        p.wq = &store.add_init(prefix + ".wq", {d, d}, trainable, seed, InitScheme::normal_scaled);
        p.wk = &store.add_init(prefix + ".wk", {d, d}, trainable, seed, InitScheme::normal_scaled);
        p.wv = &store.add_init(prefix + ".wv", {d, d}, trainable, seed, InitScheme::normal_scaled);
        p.wo = &store.add_init(prefix + ".wo", {d, d}, trainable, seed, InitScheme::normal_scaled);
        return p;
    }

    AttentionWeightRefs<T> refs(Tape<T>& tape) const {
        return {tape.param(*wq), tape.param(*wk), tape.param(*wv), tape.param(*wo)};
    }

    std::vector<Parameter<T>*> all() const { return {wq, wk, wv, wo}; }
};

// Multi-head attention from explicit weight refs (so callers can substitute
// interpolated weights). x_q: S x d, x_kv: S' x d.
template <typename T>
typename Tape<T>::Ref multi_head_attention(Tape<T>& tape, const AttentionSpec& spec,
                                           const AttentionWeightRefs<T>& w,
                                           typename Tape<T>::Ref x_q, typename Tape<T>::Ref x_kv,
                                           const std::vector<std::uint8_t>& mask = {}) {
    auto q = tape.matmul_nt(x_q, w.wq);
    auto k = tape.matmul_nt(x_kv, w.wk);
    auto v = tape.matmul_nt(x_kv, w.wv);
    const int dh = spec.head_dim();
    std::vector<typename Tape<T>::Ref> heads;
    heads.reserve(spec.n_heads);
    for (int h = 0; h < spec.n_heads; ++h) {
        auto qh = tape.slice_cols(q, h * dh, dh);
        auto kh = tape.slice_cols(k, h * dh, dh);
        auto vh = tape.slice_cols(v, h * dh, dh);
        heads.push_back(scaled_dot_attention(tape, qh, kh, vh, mask));
    }
    auto merged = spec.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
    return tape.matmul_nt(merged, w.wo);
}

template <typename T>
struct MlpParams {
    Parameter<T>* w1 = nullptr;
    Parameter<T>* b1 = nullptr;
    Parameter<T>* w2 = nullptr;
    Parameter<T>* b2 = nullptr;

    static MlpParams create(ParameterStore<T>& store, const std::string& prefix, int d, int hidden,
                            bool trainable, std::uint64_t seed) {
        MlpParams p;
        p.w1 = &store.add_init(prefix + ".w1", {hidden, d}, trainable, seed,
                               InitScheme::normal_scaled);
        p.b1 = &store.add_init(prefix + ".b1", {1, hidden}, trainable, seed, InitScheme::zeros);
        p.w2 = &store.add_init(prefix + ".w2", {d, hidden}, trainable, seed,
                               InitScheme::normal_scaled);
        p.b2 = &store.add_init(prefix + ".b2", {1, d}, trainable, seed, InitScheme::zeros);
        return p;
    }

    typename Tape<T>::Ref forward(Tape<T>& tape, typename Tape<T>::Ref x) const {
        auto h = tape.gelu(tape.linear(x, tape.param(*w1), tape.param(*b1)));
        return tape.linear(h, tape.param(*w2), tape.param(*b2));
    }

    std::vector<Parameter<T>*> all() const { return {w1, b1, w2, b2}; }
};

// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
template <typename T>
struct TransformerBlockParams {
    std::string name;
    AttentionSpec spec;
    LayerNormParams<T> ln1, ln2;
    AttentionParams<T> attn;
    MlpParams<T> mlp;

    static TransformerBlockParams create(ParameterStore<T>& store, const std::string& prefix,
                                         const AttentionSpec& spec, bool trainable,
                                         std::uint64_t seed, int mlp_ratio = 4) {
        TransformerBlockParams p;
        p.name = prefix;
        p.spec = spec;
        p.ln1 = LayerNormParams<T>::create(store, prefix + ".ln1", spec.model_dim, trainable, seed);
        p.attn = AttentionParams<T>::create(store, prefix + ".attn", spec.model_dim, trainable, seed);
        p.ln2 = LayerNormParams<T>::create(store, prefix + ".ln2", spec.model_dim, trainable, seed);
        p.mlp = MlpParams<T>::create(store, prefix + ".mlp", spec.model_dim,
                                     spec.model_dim * mlp_ratio, trainable, seed);
        return p;
    }

    typename Tape<T>::Ref forward(Tape<T>& tape, typename Tape<T>::Ref x) const {
        std::vector<std::uint8_t> mask;
        if (spec.causal) mask = causal_mask(tape.value(x).rows());
        auto normed = ln1.forward(tape, x);
        auto a = multi_head_attention(tape, spec, attn.refs(tape), normed, normed, mask);
        auto x1 = tape.add(x, a);
        auto m = mlp.forward(tape, ln2.forward(tape, x1));
        auto out = tape.add(x1, m);
        if (!tape.value(out).all_finite())
            throw std::runtime_error("non-finite activations in block " + name);
        return out;
    }
};

}  // namespace ovml
