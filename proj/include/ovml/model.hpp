#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/backbones.hpp"
#include "ovml/checkpoint.hpp"
#include "ovml/label_encoder.hpp"
#include "ovml/tokenizer.hpp"
#include "ovml/video_encoder.hpp"

namespace ovml {

struct ModelConfig {
    TextEncoderConfig text;
    VisionConfig vision;
    LlmConfig llm;
    LabelEncoderConfig label;
    TemporalConfig temporal;
    FrameSamplingConfig sampling;
    EncoderVariant variant = EncoderVariant::learnable_llm;
    int context_len = 4;                        // coop/dualcoop soft prompt rows
    bool train_text_encoder = false;            // ViFi-style finetuning
    bool train_vision_backbone = false;
    std::vector<std::string> prompt_templates;  // templates variant resource
    std::uint64_t init_seed = 0;

    void validate() const {
        if (text.joint_dim != vision.joint_dim)
            throw std::invalid_argument("text and vision joint dims must match");
        if (context_len < 1) throw std::invalid_argument("context_len must be >= 1");
    }
};

// Full system for one label-encoder variant: frozen backbones, the
// trainable text side for that variant, and the temporal video encoder.
template <typename T>
class Model {
public:
    using Ref = typename Tape<T>::Ref;

    Model(const ModelConfig& cfg, const Tokenizer& tok) : cfg_(cfg), tok_(&tok) {
        cfg_.validate();
        if (cfg_.prompt_templates.empty()) cfg_.prompt_templates = default_prompt_templates();
        text_ = std::make_unique<ToyTextEncoder<T>>(store_, cfg_.text, tok.vocab_size(),
                                                    derive_seed(cfg_.init_seed, "clip_text"),
                                                    cfg_.train_text_encoder);
        vision_ = std::make_unique<ToyVisionBackbone<T>>(store_, cfg_.vision,
                                                         derive_seed(cfg_.init_seed, "clip_vis"),
                                                         cfg_.train_vision_backbone);
        llm_ = std::make_unique<ToyEncDecLLM<T>>(store_, cfg_.llm, tok.vocab_size(),
                                                 derive_seed(cfg_.init_seed, "llm"));
        label_enc_ = std::make_unique<LabelEncoder<T>>(store_, cfg_.label, tok, *llm_, *text_,
                                                       derive_seed(cfg_.init_seed, "label_enc"));
        video_enc_ = std::make_unique<VideoEncoder<T>>(store_, *vision_, cfg_.temporal,
                                                       derive_seed(cfg_.init_seed, "temporal"));
        video_enc_->set_frame_cache_enabled(!cfg_.train_vision_backbone);
        if (cfg_.variant == EncoderVariant::coop) {
            ctx_pos_ = &store_.add_init("coop.ctx", {cfg_.context_len, cfg_.text.d_clip}, true,
                                        derive_seed(cfg_.init_seed, "coop"),
                                        InitScheme::normal_scaled);
        } else if (cfg_.variant == EncoderVariant::dualcoop) {
            ctx_pos_ = &store_.add_init("coop.pos_ctx", {cfg_.context_len, cfg_.text.d_clip},
                                        true, derive_seed(cfg_.init_seed, "coop.pos"),
                                        InitScheme::normal_scaled);
            ctx_neg_ = &store_.add_init("coop.neg_ctx", {cfg_.context_len, cfg_.text.d_clip},
                                        true, derive_seed(cfg_.init_seed, "coop.neg"),
                                        InitScheme::normal_scaled);
        }
        apply_freeze_policy();
    }

    const ModelConfig& config() const { return cfg_; }
    const Tokenizer& tokenizer() const { return *tok_; }
    ParameterStore<T>& store() { return store_; }
    const ParameterStore<T>& store() const { return store_; }
    LabelEncoder<T>& label_encoder() { return *label_enc_; }
    VideoEncoder<T>& video_encoder() { return *video_enc_; }
    ToyVisionBackbone<T>& vision() { return *vision_; }
    ToyTextEncoder<T>& text_encoder() { return *text_; }
    ToyEncDecLLM<T>& llm() { return *llm_; }

    // The freeze policy of the active variant: exactly the intended
    // trainable set, everything else frozen.
    void apply_freeze_policy() {
        const EncoderVariant v = cfg_.variant;
        const bool train_text = cfg_.train_text_encoder;
        const bool train_vis = cfg_.train_vision_backbone;
        store_.set_trainable_where([v, train_text, train_vis](const std::string& name) {
            if (name.rfind("label_enc.", 0) == 0) return v == EncoderVariant::learnable_llm;
            if (name.rfind("temporal.", 0) == 0) return true;
            if (name.rfind("coop.", 0) == 0)
                return v == EncoderVariant::coop || v == EncoderVariant::dualcoop;
            if (name.rfind("clip_text.", 0) == 0) return train_text;
            if (name.rfind("clip_vis.", 0) == 0) return train_vis;
            if (name.rfind("llm.", 0) == 0) return false;
            return false;
        });
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < store_.size(); ++i)
            if (store_.at(i).trainable) out.push_back(store_.at(i).name);
        return out;
    }

    // Whether label embeddings depend on trainable parameters; when false
    // they are cached across steps.
    bool label_path_trainable() const {
        switch (cfg_.variant) {
            case EncoderVariant::learnable_llm:
            case EncoderVariant::coop:
            case EncoderVariant::dualcoop:
                return true;
            default:
                return cfg_.train_text_encoder;
        }
    }

    Ref encode_label(Tape<T>& tape, const std::string& label) {
        switch (cfg_.variant) {
            case EncoderVariant::learnable_llm:
                return label_enc_->encode(tape, label);
            case EncoderVariant::coop:
                return label_enc_->encode_soft_context(tape, label, *ctx_pos_);
            case EncoderVariant::dualcoop:
                return label_enc_->encode_soft_context(tape, label, *ctx_pos_);
            case EncoderVariant::fixed_llm:
                if (!label_path_trainable()) return tape.constant(cached_label(label));
                return label_enc_->encode_fixed_llm(tape, label);
            case EncoderVariant::classname:
                if (!label_path_trainable()) return tape.constant(cached_label(label));
                return label_enc_->encode_classname(tape, label);
            case EncoderVariant::templates:
                if (!label_path_trainable()) return tape.constant(cached_label(label));
                return label_enc_->encode_templates(tape, label, cfg_.prompt_templates);
        }
        throw std::logic_error("unknown variant");
    }

    // Negative-context embedding (dualcoop only).
    Ref encode_label_negative(Tape<T>& tape, const std::string& label) {
        if (cfg_.variant != EncoderVariant::dualcoop)
            throw std::logic_error("negative context only exists for dualcoop");
        return label_enc_->encode_soft_context(tape, label, *ctx_neg_);
    }

    bool has_negative_context() const { return cfg_.variant == EncoderVariant::dualcoop; }

    Ref encode_video(Tape<T>& tape, const std::vector<std::vector<T>>& frames, bool train,
                     Rng& rng, const std::string& cache_id = "") {
        return video_enc_->encode_video(tape, frames, train, cfg_.sampling, rng, cache_id);
    }

    // ---- eval-side plain tensors ----

    Tensor<T> label_embedding(const std::string& label) {
        Tape<T> tape;
        return tape.value(encode_label(tape, label));
    }

    Tensor<T> label_embedding_negative(const std::string& label) {
        Tape<T> tape;
        return tape.value(encode_label_negative(tape, label));
    }

    Tensor<T> video_embedding(const std::vector<std::vector<T>>& frames,
                              const std::string& cache_id = "") {
        Tape<T> tape;
        Rng rng(0);  // eval path draws no stochastic alphas
        return tape.value(encode_video(tape, frames, false, rng, cache_id));
    }

    void invalidate_label_cache() { label_cache_.clear(); }

    std::uint64_t weights_hash() const { return checkpoint_hash(store_); }

    void save(const std::string& path) const { save_checkpoint(store_, path); }
    void load(const std::string& path) {
        load_checkpoint(store_, path);
        invalidate_label_cache();
        video_enc_->clear_frame_cache();
    }

private:
    const Tensor<T>& cached_label(const std::string& label) {
        auto it = label_cache_.find(label);
        if (it != label_cache_.end()) return it->second;
        Tape<T> tape;
        Ref r;
        switch (cfg_.variant) {
            case EncoderVariant::fixed_llm:
                r = label_enc_->encode_fixed_llm(tape, label);
                break;
            case EncoderVariant::classname:
                r = label_enc_->encode_classname(tape, label);
                break;
            case EncoderVariant::templates:
                r = label_enc_->encode_templates(tape, label, cfg_.prompt_templates);
                break;
            default:
                throw std::logic_error("cached_label: variant is trainable");
        }
        return label_cache_.emplace(label, tape.value(r)).first->second;
    }

    ModelConfig cfg_;
    const Tokenizer* tok_;
    ParameterStore<T> store_;
    std::unique_ptr<ToyTextEncoder<T>> text_;
    std::unique_ptr<ToyVisionBackbone<T>> vision_;
    std::unique_ptr<ToyEncDecLLM<T>> llm_;
    std::unique_ptr<LabelEncoder<T>> label_enc_;
    std::unique_ptr<VideoEncoder<T>> video_enc_;
    Parameter<T>* ctx_pos_ = nullptr;
    Parameter<T>* ctx_neg_ = nullptr;
    std::map<std::string, Tensor<T>> label_cache_;
};

}  // namespace ovml
