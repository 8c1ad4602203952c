#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ovml/backbones.hpp"
#include "ovml/nn.hpp"
#include "ovml/rng.hpp"
#include "ovml/tape.hpp"

namespace ovml {

enum class SwaMode { train_stochastic, eval_mean, eval_finetuned };

inline SwaMode swa_mode_from_string(const std::string& s) {
    if (s == "train_stochastic") return SwaMode::train_stochastic;
    if (s == "eval_mean") return SwaMode::eval_mean;
    if (s == "eval_finetuned") return SwaMode::eval_finetuned;
    throw std::invalid_argument("unknown swa mode: " + s);
}

struct SWAConfig {
    double lambda = 0.5;
    SwaMode mode = SwaMode::train_stochastic;
    double anchor_l2_coeff = 1e-6;

    void validate() const {
        if (lambda < 0.0 || lambda > 1.0)
            throw std::invalid_argument("swa lambda must be in [0,1]");
    }
};

// Draws the interpolation coefficient for one forward pass of one block.
inline double swa_draw_alpha(const SWAConfig& cfg, Rng& rng) {
    cfg.validate();
    switch (cfg.mode) {
        case SwaMode::train_stochastic: return rng.uniform(0.0, cfg.lambda);
        case SwaMode::eval_mean: return cfg.lambda / 2.0;
        case SwaMode::eval_finetuned: return 1.0;
    }
    throw std::invalid_argument("unknown swa mode");
}

// theta = alpha * theta_ft + (1 - alpha) * theta_frozen on the tape;
// gradients w.r.t. theta_ft are scaled by alpha.
template <typename T>
typename Tape<T>::Ref swa_effective_weights(Tape<T>& tape, Parameter<T>& ft, double alpha) {
    if (!ft.frozen_snapshot) throw std::runtime_error("swa: missing frozen snapshot for " + ft.name);
    Tensor<T> scaled = *ft.frozen_snapshot;
    const T beta = static_cast<T>(1.0 - alpha);
    for (std::size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= beta;
    return tape.scale_add_const(tape.param(ft), static_cast<T>(alpha), scaled);
}

struct TemporalConfig {
    int blocks = 4;  // T
    bool enabled = true;
    bool disable_temporal_attention = false;
    bool serial = false;
    int n_heads = 4;
    int max_frames = 32;
    SWAConfig swa;
    SwaMode eval_mode = SwaMode::eval_mean;  // inference-time weights
};

struct FrameSamplingConfig {
    int frames_per_clip = 8;  // F
    int eval_clips = 4;
};

// Frame index selection. Train mode picks one jittered clip; eval mode
// tiles `clips` uniform clips across the video. Videos shorter than F are
// padded by repetition.
inline std::vector<std::vector<int>> sample_frames(int video_len, int frames_per_clip, int clips,
                                                   bool train, Rng& rng) {
    if (video_len < 1) throw std::invalid_argument("sample_frames: empty video");
    if (frames_per_clip < 1) throw std::invalid_argument("sample_frames: F must be >= 1");
    const int f = frames_per_clip;
    std::vector<std::vector<int>> out;
    if (video_len < f) {
        std::vector<int> idx(f);
        for (int i = 0; i < f; ++i) idx[i] = i % video_len;
        const int n = train ? 1 : clips;
        for (int c = 0; c < n; ++c) out.push_back(idx);
        return out;
    }
    if (train) {
        std::vector<int> idx(f);
        const double seg = static_cast<double>(video_len) / f;
        for (int i = 0; i < f; ++i) {
            const double jitter = rng.next_double() * seg;
            int v = static_cast<int>(i * seg + jitter);
            idx[i] = std::min(v, video_len - 1);
        }
        out.push_back(idx);
        return out;
    }
    if (clips < 1) throw std::invalid_argument("sample_frames: clips must be >= 1");
    for (int c = 0; c < clips; ++c) {
        std::vector<int> idx(f);
        for (int i = 0; i < f; ++i) {
            long long v = (static_cast<long long>(i) * clips + c) * video_len /
                          (static_cast<long long>(f) * clips);
            idx[i] = static_cast<int>(std::min<long long>(v, video_len - 1));
        }
        out.push_back(idx);
    }
    return out;
}

// Plain-tensor snapshot of one frame's backbone pass, reusable across
// steps while the backbone stays frozen.
template <typename T>
struct CachedFrameEncoding {
    std::vector<Tensor<T>> taps;
    Tensor<T> embedding;
};

// Parallel temporal modeling branch over the last T backbone layers.
// Each block fuses the corresponding backbone tap, runs temporal attention
// per spatial location (TMP appended to every temporal sequence) and
// spatial attention per frame under SWA-interpolated weights.
template <typename T>
class VideoEncoder {
public:
    using Ref = typename Tape<T>::Ref;

    VideoEncoder(ParameterStore<T>& store, const ToyVisionBackbone<T>& backbone,
                 const TemporalConfig& cfg, std::uint64_t seed)
        : cfg_(cfg), backbone_(&backbone) {
        cfg_.swa.validate();
        const VisionConfig& vc = backbone.config();
        if (!cfg_.enabled) cfg_.blocks = 0;
        if (cfg_.blocks < 0 || cfg_.blocks > vc.layers)
            throw std::invalid_argument("temporal blocks must be in [0, vision layers]");
        if (cfg_.blocks == 0) return;

        // temporal positions carry the only order signal the branch sees;
        // random init breaks the permutation symmetry from step one
        pos_spatial_ = &store.add_init("temporal.pos_spatial", {vc.patches(), vc.d_vis}, true,
                                       seed, InitScheme::zeros);
        pos_temporal_ = &store.add_init("temporal.pos_temporal", {cfg_.max_frames, vc.d_vis},
                                        true, seed, InitScheme::normal_scaled);
        for (int t = 0; t < cfg_.blocks; ++t) {
            Block b;
            const std::string p = "temporal.block" + std::to_string(t);
            const int tap_layer = vc.layers - cfg_.blocks + t + 1;
            b.tap_layer = tap_layer;
            const TransformerBlockParams<T>& src = backbone.block(tap_layer - 1);

            // spatial attention initialized from the corresponding backbone
            // layer; snapshots capture theta_frozen
            b.ln_spatial.gain = &store.add(p + ".spatial.ln.gain", src.ln1.gain->values, true);
            b.ln_spatial.bias = &store.add(p + ".spatial.ln.bias", src.ln1.bias->values, true);
            b.spatial.wq = &store.add(p + ".spatial.wq", src.attn.wq->values, true);
            b.spatial.wk = &store.add(p + ".spatial.wk", src.attn.wk->values, true);
            b.spatial.wv = &store.add(p + ".spatial.wv", src.attn.wv->values, true);
            b.spatial.wo = &store.add(p + ".spatial.wo", src.attn.wo->values, true);

            b.ln_temporal =
                LayerNormParams<T>::create(store, p + ".temporal.ln", vc.d_vis, true, seed);
            b.temporal = AttentionParams<T>::create(store, p + ".temporal", vc.d_vis, true, seed);
            b.proj_spatial = &store.add_init(p + ".proj_spatial", {vc.d_vis, vc.d_vis}, true,
                                             seed, InitScheme::zeros);
            blocks_.push_back(b);
        }
    }

    const TemporalConfig& config() const { return cfg_; }
    int tap_layer(int block) const { return blocks_[block].tap_layer; }

    // Mean of the per-frame CLS tokens at branch entry.
    Ref init_tmp(Tape<T>& tape, const std::vector<Ref>& entry_cls_rows) const {
        if (entry_cls_rows.empty()) throw std::invalid_argument("init_tmp: no frames");
        return tape.mean_rows(tape.concat_rows(entry_cls_rows));
    }

    // Encodes one clip of frames (already sampled). alphas must hold one
    // entry per temporal block (ignored when the branch is disabled).
    // frame_keys, when given, lets frozen-backbone passes be served from
    // the cache.
    Ref encode_clip(Tape<T>& tape, const std::vector<std::vector<T>>& frames,
                    const std::vector<double>& alphas,
                    const std::vector<std::string>& frame_keys = {}) const {
        const VisionConfig& vc = backbone_->config();
        const int f = static_cast<int>(frames.size());
        if (f < 1) throw std::invalid_argument("encode_clip: no frames");
        const int patches = vc.patches();

        std::vector<FrameEncoding<T>> enc;
        enc.reserve(f);
        for (int i = 0; i < f; ++i) {
            if (!frame_keys.empty())
                enc.push_back(encode_frame_cached(tape, frames[i], frame_keys[i]));
            else
                enc.push_back(backbone_->encode_frame(tape, frames[i]));
        }

        std::vector<Ref> pooled;
        if (cfg_.blocks > 0) {
            if (f > cfg_.max_frames) throw std::invalid_argument("encode_clip: too many frames");
            if (static_cast<int>(alphas.size()) != cfg_.blocks)
                throw std::invalid_argument("encode_clip: need one alpha per block");
            const int entry_layer = vc.layers - cfg_.blocks;

            std::vector<Ref> entry_patches, entry_cls;
            for (int i = 0; i < f; ++i) {
                entry_patches.push_back(tape.slice_rows(enc[i].taps[entry_layer], 1, patches));
                entry_cls.push_back(tape.slice_rows(enc[i].taps[entry_layer], 0, 1));
            }
            // branch tokens laid out frame-major: row f*P + p
            Ref x = tape.concat_rows(entry_patches);
            Ref tmp = init_tmp(tape, entry_cls);

            std::vector<int> sp_idx(static_cast<std::size_t>(f) * patches);
            std::vector<int> tm_idx(static_cast<std::size_t>(f) * patches);
            for (int i = 0; i < f; ++i)
                for (int p = 0; p < patches; ++p) {
                    sp_idx[static_cast<std::size_t>(i) * patches + p] = p;
                    tm_idx[static_cast<std::size_t>(i) * patches + p] = i;
                }
            x = tape.add(x, tape.row_select(tape.param(*pos_spatial_), sp_idx));
            x = tape.add(x, tape.row_select(tape.param(*pos_temporal_), tm_idx));

            for (int t = 0; t < cfg_.blocks; ++t) {
                std::optional<Ref> tap;
                if (!cfg_.serial || t == 0) {
                    std::vector<Ref> taps;
                    for (int i = 0; i < f; ++i)
                        taps.push_back(
                            tape.slice_rows(enc[i].taps[blocks_[t].tap_layer], 1, patches));
                    tap = tape.concat_rows(taps);
                }
                auto [nx, ntmp] = temporal_block_forward(tape, t, x, tap, tmp, f, alphas[t]);
                x = nx;
                tmp = ntmp;
            }
            pooled.push_back(backbone_->project_token(tape, tmp));
        }
        for (int i = 0; i < f; ++i) pooled.push_back(enc[i].embedding);
        return tape.l2_normalize_rows(tape.mean_rows(tape.concat_rows(pooled)));
    }

    // Full video path: samples frames, encodes each clip, averages clip
    // embeddings before the final normalization. Training draws stochastic
    // alphas; evaluation uses the configured inference mode. cache_id, when
    // nonempty and the backbone caching is enabled, keys the per-frame
    // backbone cache.
    Ref encode_video(Tape<T>& tape, const std::vector<std::vector<T>>& video_frames, bool train,
                     const FrameSamplingConfig& sampling, Rng& rng,
                     const std::string& cache_id = "") const {
        auto clip_indices = sample_frames(static_cast<int>(video_frames.size()),
                                          sampling.frames_per_clip,
                                          train ? 1 : sampling.eval_clips, train, rng);
        std::vector<Ref> clip_embs;
        for (const auto& idx : clip_indices) {
            std::vector<std::vector<T>> frames;
            std::vector<std::string> keys;
            frames.reserve(idx.size());
            for (int i : idx) {
                frames.push_back(video_frames[i]);
                if (cache_enabled_ && !cache_id.empty())
                    keys.push_back(cache_id + "#" + std::to_string(i));
            }
            clip_embs.push_back(encode_clip(tape, frames, draw_alphas(rng, train), keys));
        }
        if (clip_embs.size() == 1) return clip_embs[0];
        return tape.l2_normalize_rows(tape.mean_rows(tape.concat_rows(clip_embs)));
    }

    // Frozen-backbone memoization; safe only while backbone weights are
    // immutable.
    void set_frame_cache_enabled(bool enabled) {
        cache_enabled_ = enabled;
        if (!enabled) frame_cache_.clear();
    }
    void clear_frame_cache() { frame_cache_.clear(); }

    std::vector<double> draw_alphas(Rng& rng, bool train = true) const {
        SWAConfig active = cfg_.swa;
        if (!train) active.mode = cfg_.eval_mode;
        std::vector<double> a(cfg_.blocks);
        for (auto& v : a) v = swa_draw_alpha(active, rng);
        return a;
    }

    std::vector<double> draw_alphas_fixed(double alpha) const {
        return std::vector<double>(static_cast<std::size_t>(cfg_.blocks), alpha);
    }

    // anchor_l2_coeff * sum over SWA'd parameters of ||theta_ft - theta_frozen||^2
    Ref anchor_penalty(Tape<T>& tape) const {
        Tensor<T> zero(1, 1);
        Ref total = tape.constant(zero);
        for (const auto& b : blocks_) {
            for (Parameter<T>* p : swa_params(b)) {
                Tensor<T> neg = *p->frozen_snapshot;
                for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
                auto diff = tape.scale_add_const(tape.param(*p), T(1), neg);
                total = tape.add(total, tape.sum_squares(diff));
            }
        }
        return tape.scale(total, static_cast<T>(cfg_.swa.anchor_l2_coeff));
    }

    // One temporal block: fuse the backbone tap (when given), temporal
    // attention per spatial location with TMP appended, spatial attention
    // per frame under SWA-effective weights. branch_tokens is (F*P) x d_vis
    // frame-major; returns the updated tokens and TMP.
    std::pair<Ref, Ref> temporal_block_forward(Tape<T>& tape, int t, Ref branch_tokens,
                                               std::optional<Ref> tap_tokens, Ref tmp, int f,
                                               double alpha) const {
        if (t < 0 || t >= cfg_.blocks) throw std::invalid_argument("temporal block out of range");
        const Block& b = blocks_[t];
        const VisionConfig& vc = backbone_->config();
        const int patches = vc.patches();
        const AttentionSpec spec(cfg_.n_heads, vc.d_vis, false);
        Ref x = branch_tokens;
        if (tape.value(x).rows() != f * patches)
            throw std::invalid_argument("temporal block: token row count mismatch");

        if (tap_tokens)
            x = tape.add(x, tape.matmul_nt(*tap_tokens, tape.param(*b.proj_spatial)));

        // spatial attention per frame over the patch tokens, SWA-effective
        // weights; TMP is excluded. Runs before the temporal sublayer so
        // its output always reaches the TMP update (and hence the loss).
        {
            auto gain = swa_effective_weights(tape, *b.ln_spatial.gain, alpha);
            auto bias = swa_effective_weights(tape, *b.ln_spatial.bias, alpha);
            auto h = tape.layer_norm(x, gain, bias);
            AttentionWeightRefs<T> w{swa_effective_weights(tape, *b.spatial.wq, alpha),
                                     swa_effective_weights(tape, *b.spatial.wk, alpha),
                                     swa_effective_weights(tape, *b.spatial.wv, alpha),
                                     swa_effective_weights(tape, *b.spatial.wo, alpha)};
            std::vector<Ref> parts(f);
            for (int i = 0; i < f; ++i) {
                auto rows = tape.slice_rows(h, i * patches, patches);
                parts[i] = multi_head_attention(tape, spec, w, rows, rows);
            }
            x = tape.add(x, tape.concat_rows(parts));
        }

        // temporal attention across frames per spatial location, TMP joined
        // to every sequence
        if (!cfg_.disable_temporal_attention) {
            auto h = b.ln_temporal.forward(tape, x);
            auto htmp = b.ln_temporal.forward(tape, tmp);
            auto w = b.temporal.refs(tape);
            std::vector<Ref> frame_parts(patches);
            std::vector<Ref> tmp_parts(patches);
            for (int p = 0; p < patches; ++p) {
                std::vector<int> idx(f);
                for (int i = 0; i < f; ++i) idx[i] = i * patches + p;
                auto seq = tape.concat_rows({tape.row_select(h, idx), htmp});
                auto out = multi_head_attention(tape, spec, w, seq, seq);
                frame_parts[p] = tape.slice_rows(out, 0, f);
                tmp_parts[p] = tape.slice_rows(out, f, 1);
            }
            // frame_parts concatenation is patch-major; restore frame-major
            std::vector<int> perm(static_cast<std::size_t>(f) * patches);
            for (int i = 0; i < f; ++i)
                for (int p = 0; p < patches; ++p)
                    perm[static_cast<std::size_t>(i) * patches + p] = p * f + i;
            auto y = tape.row_select(tape.concat_rows(frame_parts), perm);
            x = tape.add(x, y);
            tmp = tape.add(tmp, tape.mean_rows(tape.concat_rows(tmp_parts)));
        }
        if (!tape.value(x).all_finite())
            throw std::runtime_error("non-finite activations in temporal block " +
                                     std::to_string(t));
        return {x, tmp};
    }

private:
    struct Block {
        int tap_layer = 0;
        LayerNormParams<T> ln_spatial;
        AttentionParams<T> spatial;
        LayerNormParams<T> ln_temporal;
        AttentionParams<T> temporal;
        Parameter<T>* proj_spatial = nullptr;
    };

    FrameEncoding<T> encode_frame_cached(Tape<T>& tape, const std::vector<T>& frame,
                                         const std::string& key) const {
        auto it = frame_cache_.find(key);
        if (it == frame_cache_.end()) {
            Tape<T> scratch;
            auto enc = backbone_->encode_frame(scratch, frame);
            CachedFrameEncoding<T> cached;
            for (Ref tap : enc.taps) cached.taps.push_back(scratch.value(tap));
            cached.embedding = scratch.value(enc.embedding);
            it = frame_cache_.emplace(key, std::move(cached)).first;
        }
        FrameEncoding<T> out;
        for (const auto& tap : it->second.taps) out.taps.push_back(tape.constant(tap));
        out.embedding = tape.constant(it->second.embedding);
        return out;
    }

    static std::vector<Parameter<T>*> swa_params(const Block& b) {
        return {b.ln_spatial.gain, b.ln_spatial.bias, b.spatial.wq, b.spatial.wk, b.spatial.wv,
                b.spatial.wo};
    }

    TemporalConfig cfg_;
    const ToyVisionBackbone<T>* backbone_;
    Parameter<T>* pos_spatial_ = nullptr;
    Parameter<T>* pos_temporal_ = nullptr;
    std::vector<Block> blocks_;
    bool cache_enabled_ = false;
    mutable std::map<std::string, CachedFrameEncoding<T>> frame_cache_;
};

}  // namespace ovml
