#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/nn.hpp"
#include "ovml/parameter.hpp"
#include "ovml/tape.hpp"
#include "ovml/tokenizer.hpp"

namespace ovml {

// ---------------------------------------------------------------------------
// Toy CLIP-style text encoder (frozen dual-encoder text tower).
// ---------------------------------------------------------------------------

struct TextEncoderConfig {
    int d_clip = 48;
    int layers = 3;
    int n_heads = 4;
    int max_len = 64;
    int joint_dim = 32;
};

template <typename T>
class ToyTextEncoder {
public:
    using Ref = typename Tape<T>::Ref;

    ToyTextEncoder(ParameterStore<T>& store, const TextEncoderConfig& cfg, int vocab_size,
                   std::uint64_t seed, bool trainable = false)
        : cfg_(cfg), store_(&store) {
        tok_emb_ = &store.add_init("clip_text.tok_emb", {vocab_size, cfg.d_clip}, trainable, seed,
                                   InitScheme::normal_scaled);
        pos_emb_ = &store.add_init("clip_text.pos_emb", {cfg.max_len, cfg.d_clip}, trainable, seed,
                                   InitScheme::normal_scaled);
        AttentionSpec spec(cfg.n_heads, cfg.d_clip, false);
        for (int i = 0; i < cfg.layers; ++i)
            blocks_.push_back(TransformerBlockParams<T>::create(
                store, "clip_text.block" + std::to_string(i), spec, trainable, seed));
        final_ln_ = LayerNormParams<T>::create(store, "clip_text.final_ln", cfg.d_clip, trainable,
                                               seed);
        proj_ = &store.add_init("clip_text.proj", {cfg.joint_dim, cfg.d_clip}, trainable, seed,
                                InitScheme::normal_scaled);
    }

    const TextEncoderConfig& config() const { return cfg_; }

    Ref token_rows(Tape<T>& tape, const std::vector<int>& ids) const {
        return tape.row_select(tape.param(*tok_emb_), ids);
    }

    // Core path shared by the hard- and soft-prompt entry points: embedded
    // rows get positional embeddings, run the blocks, pool at the EOT
    // position (last row) and project into the joint space, unit norm.
    Ref encode_embedded(Tape<T>& tape, Ref rows) const {
        const int s = tape.value(rows).rows();
        if (s > cfg_.max_len) throw std::runtime_error("text encoder: sequence too long");
        std::vector<int> pos_idx(s);
        for (int i = 0; i < s; ++i) pos_idx[i] = i;
        auto x = tape.add(rows, tape.row_select(tape.param(*pos_emb_), pos_idx));
        for (const auto& b : blocks_) x = b.forward(tape, x);
        x = final_ln_.forward(tape, x);
        auto pooled = tape.slice_rows(x, s - 1, 1);
        return tape.l2_normalize_rows(tape.matmul_nt(pooled, tape.param(*proj_)));
    }

    Ref encode_text(Tape<T>& tape, const std::vector<int>& ids) const {
        return encode_embedded(tape, token_rows(tape, ids));
    }

    // Soft prompt rows enter as leading token embeddings, bypassing the
    // embedding table; gradient flows into the prompt block.
    Ref encode_text_soft(Tape<T>& tape, Ref soft_prompt, const std::vector<int>& label_ids) const {
        if (tape.value(soft_prompt).cols() != cfg_.d_clip)
            throw std::runtime_error("soft prompt width mismatch");
        auto rows = tape.concat_rows({soft_prompt, token_rows(tape, label_ids)});
        return encode_embedded(tape, rows);
    }

private:
    TextEncoderConfig cfg_;
    ParameterStore<T>* store_;
    Parameter<T>* tok_emb_ = nullptr;
    Parameter<T>* pos_emb_ = nullptr;
    std::vector<TransformerBlockParams<T>> blocks_;
    LayerNormParams<T> final_ln_;
    Parameter<T>* proj_ = nullptr;
};

// ---------------------------------------------------------------------------
// Toy CLIP-style vision backbone with per-layer activation taps.
// ---------------------------------------------------------------------------

struct VisionConfig {
    int grid = 4;  // G x G patches per frame
    int d_vis = 48;
    int layers = 6;
    int n_heads = 4;
    int joint_dim = 32;

    int patches() const { return grid * grid; }
    int tokens() const { return 1 + patches(); }  // CLS + patches
};

template <typename T>
struct FrameEncoding {
    // taps[0] is the embedded input; taps[i] is the output of block i.
    std::vector<typename Tape<T>::Ref> taps;
    typename Tape<T>::Ref embedding;  // 1 x joint_dim, unit norm
};

template <typename T>
class ToyVisionBackbone {
public:
    using Ref = typename Tape<T>::Ref;

    ToyVisionBackbone(ParameterStore<T>& store, const VisionConfig& cfg, std::uint64_t seed,
                      bool trainable = false)
        : cfg_(cfg) {
        patch_w_ = &store.add_init("clip_vis.patch_w", {1, cfg.d_vis}, trainable, seed,
                                   InitScheme::normal_scaled);
        cls_ = &store.add_init("clip_vis.cls", {1, cfg.d_vis}, trainable, seed,
                               InitScheme::normal_scaled);
        pos_emb_ = &store.add_init("clip_vis.pos_emb", {cfg.tokens(), cfg.d_vis}, trainable, seed,
                                   InitScheme::normal_scaled);
        AttentionSpec spec(cfg.n_heads, cfg.d_vis, false);
        for (int i = 0; i < cfg.layers; ++i)
            blocks_.push_back(TransformerBlockParams<T>::create(
                store, "clip_vis.block" + std::to_string(i), spec, trainable, seed));
        final_ln_ = LayerNormParams<T>::create(store, "clip_vis.final_ln", cfg.d_vis, trainable,
                                               seed);
        proj_ = &store.add_init("clip_vis.proj", {cfg.joint_dim, cfg.d_vis}, trainable, seed,
                                InitScheme::normal_scaled);
    }

    const VisionConfig& config() const { return cfg_; }
    const TransformerBlockParams<T>& block(int i) const { return blocks_[i]; }
    Parameter<T>* projection() const { return proj_; }
    const LayerNormParams<T>& final_ln() const { return final_ln_; }

    // frame: G*G patch scalars.
    FrameEncoding<T> encode_frame(Tape<T>& tape, const std::vector<T>& frame) const {
        if (static_cast<int>(frame.size()) != cfg_.patches())
            throw std::runtime_error("frame shape mismatch");
        Tensor<T> col(cfg_.patches(), 1);
        for (int i = 0; i < cfg_.patches(); ++i) col.at(i, 0) = frame[i];
        auto patches = tape.matmul(tape.constant(std::move(col)), tape.param(*patch_w_));
        auto tokens = tape.concat_rows({tape.param(*cls_), patches});
        std::vector<int> pos_idx(cfg_.tokens());
        for (int i = 0; i < cfg_.tokens(); ++i) pos_idx[i] = i;
        auto x = tape.add(tokens, tape.row_select(tape.param(*pos_emb_), pos_idx));

        FrameEncoding<T> out;
        out.taps.push_back(x);
        for (const auto& b : blocks_) {
            x = b.forward(tape, x);
            out.taps.push_back(x);
        }
        auto cls_row = tape.slice_rows(final_ln_.forward(tape, x), 0, 1);
        out.embedding = tape.l2_normalize_rows(tape.matmul_nt(cls_row, tape.param(*proj_)));
        return out;
    }

    // Projects a d_vis row into the joint space with the backbone's own
    // final LN + projection, unit norm.
    Ref project_token(Tape<T>& tape, Ref token_row) const {
        auto ln = final_ln_.forward(tape, token_row);
        return tape.l2_normalize_rows(tape.matmul_nt(ln, tape.param(*proj_)));
    }

private:
    VisionConfig cfg_;
    Parameter<T>* patch_w_ = nullptr;
    Parameter<T>* cls_ = nullptr;
    Parameter<T>* pos_emb_ = nullptr;
    std::vector<TransformerBlockParams<T>> blocks_;
    LayerNormParams<T> final_ln_;
    Parameter<T>* proj_ = nullptr;
};

// ---------------------------------------------------------------------------
// Toy encoder-decoder LLM with continuous (differentiable) decoding.
// ---------------------------------------------------------------------------

struct LlmConfig {
    int d_llm = 32;
    int enc_layers = 2;
    int dec_layers = 2;
    int n_heads = 4;
    int max_len = 64;
};

template <typename T>
class ToyEncDecLLM {
public:
    using Ref = typename Tape<T>::Ref;

    ToyEncDecLLM(ParameterStore<T>& store, const LlmConfig& cfg, int vocab_size,
                 std::uint64_t seed)
        : cfg_(cfg), vocab_size_(vocab_size) {
        tok_emb_ = &store.add_init("llm.tok_emb", {vocab_size, cfg.d_llm}, false, seed,
                                   InitScheme::normal_scaled);
        enc_pos_ = &store.add_init("llm.enc_pos", {cfg.max_len, cfg.d_llm}, false, seed,
                                   InitScheme::normal_scaled);
        dec_pos_ = &store.add_init("llm.dec_pos", {cfg.max_len, cfg.d_llm}, false, seed,
                                   InitScheme::normal_scaled);
        AttentionSpec spec(cfg.n_heads, cfg.d_llm, false);
        for (int i = 0; i < cfg.enc_layers; ++i)
            blocks_.push_back(TransformerBlockParams<T>::create(
                store, "llm.enc" + std::to_string(i), spec, false, seed));
        enc_final_ln_ = LayerNormParams<T>::create(store, "llm.enc_final_ln", cfg.d_llm, false,
                                                   seed);
        for (int i = 0; i < cfg.dec_layers; ++i) {
            DecoderLayer layer;
            const std::string p = "llm.dec" + std::to_string(i);
            layer.ln_self = LayerNormParams<T>::create(store, p + ".ln_self", cfg.d_llm, false, seed);
            layer.self_attn = AttentionParams<T>::create(store, p + ".self", cfg.d_llm, false, seed);
            layer.ln_cross = LayerNormParams<T>::create(store, p + ".ln_cross", cfg.d_llm, false,
                                                        seed);
            layer.cross_attn = AttentionParams<T>::create(store, p + ".cross", cfg.d_llm, false,
                                                          seed);
            layer.ln_mlp = LayerNormParams<T>::create(store, p + ".ln_mlp", cfg.d_llm, false, seed);
            layer.mlp = MlpParams<T>::create(store, p + ".mlp", cfg.d_llm, 4 * cfg.d_llm, false,
                                             seed);
            dec_layers_.push_back(layer);
        }
        dec_final_ln_ = LayerNormParams<T>::create(store, "llm.dec_final_ln", cfg.d_llm, false,
                                                   seed);
    }

    const LlmConfig& config() const { return cfg_; }

    // [prefix; template tokens] -> (1+M) x d_llm encoder states. The prefix
    // occupies position 0 and receives gradient.
    Ref encode(Tape<T>& tape, Ref prefix_row, const std::vector<int>& template_ids) const {
        if (tape.value(prefix_row).cols() != cfg_.d_llm)
            throw std::runtime_error("llm prefix width mismatch");
        auto rows = tape.concat_rows(
            {prefix_row, tape.row_select(tape.param(*tok_emb_), template_ids)});
        return encode_rows(tape, rows);
    }

    // Prefix-free encoding for the fixed-prompt path.
    Ref encode_tokens(Tape<T>& tape, const std::vector<int>& template_ids) const {
        return encode_rows(tape, tape.row_select(tape.param(*tok_emb_), template_ids));
    }

    // Autoregressive continuous decoding: the decoder starts from the
    // DECODER_START embedding and feeds each output hidden state back as
    // the next input embedding. No argmax, no detokenization; the whole
    // path stays differentiable. Returns the `steps` output states.
    Ref decode_continuous(Tape<T>& tape, Ref enc_states, int steps) const {
        if (steps < 1) throw std::runtime_error("decode_continuous: steps must be >= 1");
        if (steps >= cfg_.max_len) throw std::runtime_error("decode_continuous: too many steps");
        DecodeState st = begin_decode(tape, enc_states);
        std::vector<Ref> outputs;
        Ref next = tape.row_select(tape.param(*tok_emb_), {Tokenizer::kDecoderStart});
        for (int t = 0; t < steps; ++t) {
            Ref out = decode_step(tape, st, next, t);
            outputs.push_back(out);
            next = out;
        }
        return tape.concat_rows(outputs);
    }

    // Greedy discrete decoding with tied embedding logits; stops at EOT.
    std::vector<int> decode_discrete(Tape<T>& tape, Ref enc_states, int max_steps) const {
        if (max_steps < 1) throw std::runtime_error("decode_discrete: max_steps must be >= 1");
        DecodeState st = begin_decode(tape, enc_states);
        std::vector<int> ids;
        Ref next = tape.row_select(tape.param(*tok_emb_), {Tokenizer::kDecoderStart});
        for (int t = 0; t < max_steps && t + 1 < cfg_.max_len; ++t) {
            Ref out = decode_step(tape, st, next, t);
            auto logits = tape.matmul_nt(out, tape.param(*tok_emb_));
            const Tensor<T>& lv = tape.value(logits);
            int best = 0;
            for (int j = 1; j < vocab_size_; ++j)
                if (lv.at(0, j) > lv.at(0, best)) best = j;
            if (best == Tokenizer::kEot) break;
            ids.push_back(best);
            next = tape.row_select(tape.param(*tok_emb_), {best});
        }
        return ids;
    }

private:
    Ref encode_rows(Tape<T>& tape, Ref rows) const {
        const int s = tape.value(rows).rows();
        if (s > cfg_.max_len) throw std::runtime_error("llm encoder: sequence too long");
        std::vector<int> pos_idx(s);
        for (int i = 0; i < s; ++i) pos_idx[i] = i;
        auto x = tape.add(rows, tape.row_select(tape.param(*enc_pos_), pos_idx));
        for (const auto& b : blocks_) x = b.forward(tape, x);
        return enc_final_ln_.forward(tape, x);
    }

    struct DecoderLayer {
        LayerNormParams<T> ln_self;
        AttentionParams<T> self_attn;
        LayerNormParams<T> ln_cross;
        AttentionParams<T> cross_attn;
        LayerNormParams<T> ln_mlp;
        MlpParams<T> mlp;
    };

    struct DecodeState {
        std::vector<std::vector<Ref>> self_k;  // per layer, per step
        std::vector<std::vector<Ref>> self_v;
        std::vector<Ref> cross_k;  // per layer
        std::vector<Ref> cross_v;
    };

    DecodeState begin_decode(Tape<T>& tape, Ref enc_states) const {
        DecodeState st;
        st.self_k.resize(dec_layers_.size());
        st.self_v.resize(dec_layers_.size());
        for (const auto& layer : dec_layers_) {
            st.cross_k.push_back(tape.matmul_nt(enc_states, tape.param(*layer.cross_attn.wk)));
            st.cross_v.push_back(tape.matmul_nt(enc_states, tape.param(*layer.cross_attn.wv)));
        }
        return st;
    }

    // One decoder forward for the newest position, attending over cached
    // self-attention keys/values (exact causal attention, built incrementally).
    Ref decode_step(Tape<T>& tape, DecodeState& st, Ref input_row, int t) const {
        auto x = tape.add(input_row, tape.row_select(tape.param(*dec_pos_), {t}));
        const AttentionSpec spec(cfg_.n_heads, cfg_.d_llm, false);
        const int dh = spec.head_dim();
        for (std::size_t li = 0; li < dec_layers_.size(); ++li) {
            const DecoderLayer& layer = dec_layers_[li];
            // causal self-attention over the generated prefix
            {
                auto h = layer.ln_self.forward(tape, x);
                auto q = tape.matmul_nt(h, tape.param(*layer.self_attn.wq));
                st.self_k[li].push_back(tape.matmul_nt(h, tape.param(*layer.self_attn.wk)));
                st.self_v[li].push_back(tape.matmul_nt(h, tape.param(*layer.self_attn.wv)));
                auto keys = tape.concat_rows(st.self_k[li]);
                auto vals = tape.concat_rows(st.self_v[li]);
                std::vector<Ref> heads;
                for (int hh = 0; hh < spec.n_heads; ++hh)
                    heads.push_back(scaled_dot_attention(tape, tape.slice_cols(q, hh * dh, dh),
                                                         tape.slice_cols(keys, hh * dh, dh),
                                                         tape.slice_cols(vals, hh * dh, dh)));
                auto merged = spec.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
                x = tape.add(x, tape.matmul_nt(merged, tape.param(*layer.self_attn.wo)));
            }
            // cross-attention to the encoder states
            {
                auto h = layer.ln_cross.forward(tape, x);
                auto q = tape.matmul_nt(h, tape.param(*layer.cross_attn.wq));
                std::vector<Ref> heads;
                for (int hh = 0; hh < spec.n_heads; ++hh)
                    heads.push_back(scaled_dot_attention(
                        tape, tape.slice_cols(q, hh * dh, dh),
                        tape.slice_cols(st.cross_k[li], hh * dh, dh),
                        tape.slice_cols(st.cross_v[li], hh * dh, dh)));
                auto merged = spec.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
                x = tape.add(x, tape.matmul_nt(merged, tape.param(*layer.cross_attn.wo)));
            }
            x = tape.add(x, layer.mlp.forward(tape, layer.ln_mlp.forward(tape, x)));
        }
        return dec_final_ln_.forward(tape, x);
    }

    LlmConfig cfg_;
    int vocab_size_;
    Parameter<T>* tok_emb_ = nullptr;
    Parameter<T>* enc_pos_ = nullptr;
    Parameter<T>* dec_pos_ = nullptr;
    std::vector<TransformerBlockParams<T>> blocks_;
    LayerNormParams<T> enc_final_ln_;
    std::vector<DecoderLayer> dec_layers_;
    LayerNormParams<T> dec_final_ln_;
};

}  // namespace ovml
