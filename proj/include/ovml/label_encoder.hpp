#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/backbones.hpp"
#include "ovml/nn.hpp"
#include "ovml/tape.hpp"
#include "ovml/tokenizer.hpp"

namespace ovml {

enum class EncoderVariant { learnable_llm, fixed_llm, coop, dualcoop, classname, templates };

inline EncoderVariant encoder_variant_from_string(const std::string& s) {
    if (s == "learnable_llm") return EncoderVariant::learnable_llm;
    if (s == "fixed_llm") return EncoderVariant::fixed_llm;
    if (s == "coop") return EncoderVariant::coop;
    if (s == "dualcoop") return EncoderVariant::dualcoop;
    if (s == "classname") return EncoderVariant::classname;
    if (s == "templates") return EncoderVariant::templates;
    throw std::invalid_argument("unknown label encoder variant: " + s);
}

inline std::string to_string(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::learnable_llm: return "learnable_llm";
        case EncoderVariant::fixed_llm: return "fixed_llm";
        case EncoderVariant::coop: return "coop";
        case EncoderVariant::dualcoop: return "dualcoop";
        case EncoderVariant::classname: return "classname";
        case EncoderVariant::templates: return "templates";
    }
    return "?";
}

// The question template put to the LLM for a class label.
inline std::string llm_template_text(const std::string& label) {
    return "Q: What are useful features for distinguishing a " + label +
           " in a photo? A: There are several useful visual features to tell about a " + label +
           " in a photo: 1.";
}

inline std::string classname_prompt_text(const std::string& label) {
    return "a video of " + label;
}

inline std::string attribute_prompt_text(const std::string& label, const std::string& attribute) {
    return label + ", which has " + attribute;
}

inline std::vector<std::string> default_prompt_templates() {
    return {
        "a video of {label}",
        "a photo of {label}",
        "a video clip of {label}",
        "a video showing {label}",
        "footage of {label}",
        "a short video of {label}",
        "an example of {label} in a video",
    };
}

inline std::string render_prompt_template(const std::string& tpl, const std::string& label) {
    std::string out = tpl;
    const std::string key = "{label}";
    std::size_t pos = 0;
    while ((pos = out.find(key, pos)) != std::string::npos) {
        out.replace(pos, key.size(), label);
        pos += label.size();
    }
    return out;
}

// Words used by templates and prompts; the harness folds these into the
// tokenizer vocabulary so prompt text does not hit UNK.
inline std::vector<std::string> prompt_vocabulary_words() {
    std::vector<std::string> words;
    auto absorb = [&words](const std::string& text) {
        for (const auto& w : Tokenizer::split_normalized(text)) words.push_back(w);
    };
    absorb(llm_template_text("x"));
    absorb(attribute_prompt_text("x", "y"));
    for (const auto& t : default_prompt_templates()) absorb(render_prompt_template(t, "x"));
    for (int d = 1; d <= 9; ++d) words.push_back(std::to_string(d));
    return words;
}

// DualCoOp prediction: softmax over (s_pos/tau, s_neg/tau), positive part.
inline double dualcoop_probability(double s_pos, double s_neg, double tau) {
    if (tau <= 0) throw std::invalid_argument("dualcoop: tau must be positive");
    const double z = (s_pos - s_neg) / tau;
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct LabelEncoderConfig {
    int n_prefixes = 4;    // N
    int k_attributes = 5;  // K
    int l_tokens = 5;      // L; soft prompt length equals L
    int decode_steps = 0;  // defaults to K*L
    int pt_blocks = 2;
    int pt_heads = 4;
    int fixed_decode_max_steps = 24;
};

// Learnable label encoder: N LLM prefixes -> KL continuous decoded states
// -> K soft attributes -> prompt transformer -> soft prompts -> frozen text
// encoder; the N*K attribute features are mean-pooled and normalized.
template <typename T>
class LabelEncoder {
public:
    using Ref = typename Tape<T>::Ref;

    LabelEncoder(ParameterStore<T>& store, const LabelEncoderConfig& cfg, const Tokenizer& tok,
                 const ToyEncDecLLM<T>& llm, const ToyTextEncoder<T>& text_enc,
                 std::uint64_t seed)
        : cfg_(cfg), tok_(&tok), llm_(&llm), text_(&text_enc) {
        if (cfg.n_prefixes < 1) throw std::invalid_argument("label encoder: N must be >= 1");
        if (cfg.k_attributes < 1 || cfg.l_tokens < 1)
            throw std::invalid_argument("label encoder: K and L must be >= 1");
        if (cfg_.decode_steps == 0) cfg_.decode_steps = cfg.k_attributes * cfg.l_tokens;
        if (cfg_.decode_steps != cfg.k_attributes * cfg.l_tokens)
            throw std::invalid_argument("label encoder: decode_steps must equal K*L");
        const int d_llm = llm.config().d_llm;
        const int d_clip = text_enc.config().d_clip;
        prefixes_ = &store.add_init("label_enc.prefixes", {cfg.n_prefixes, d_llm}, true, seed,
                                    InitScheme::normal_scaled);
        pt_lift_w_ = &store.add_init("label_enc.pt.lift_w", {d_clip, d_llm}, true, seed,
                                     InitScheme::normal_scaled);
        pt_lift_b_ = &store.add_init("label_enc.pt.lift_b", {1, d_clip}, true, seed,
                                     InitScheme::zeros);
        AttentionSpec spec(cfg.pt_heads, d_clip, false);
        for (int i = 0; i < cfg.pt_blocks; ++i)
            pt_blocks_.push_back(TransformerBlockParams<T>::create(
                store, "label_enc.pt.block" + std::to_string(i), spec, true, seed));
    }

    const LabelEncoderConfig& config() const { return cfg_; }

    std::vector<int> build_template(const std::string& label) const {
        if (label.empty()) throw std::invalid_argument("build_template: empty label");
        return tok_->tokenize(llm_template_text(label));
    }

    // K soft attributes (L x d_llm each) for one prefix.
    std::vector<Ref> generate_soft_attributes(Tape<T>& tape, int prefix_index,
                                              const std::string& label) const {
        if (prefix_index < 0 || prefix_index >= cfg_.n_prefixes)
            throw std::invalid_argument("prefix index out of range");
        auto prefix_row = tape.row_select(tape.param(*prefixes_), {prefix_index});
        auto enc = llm_->encode(tape, prefix_row, build_template(label));
        auto states = llm_->decode_continuous(tape, enc, cfg_.decode_steps);
        std::vector<Ref> attrs;
        for (int k = 0; k < cfg_.k_attributes; ++k)
            attrs.push_back(tape.slice_rows(states, k * cfg_.l_tokens, cfg_.l_tokens));
        return attrs;
    }

    Ref prompt_transformer(Tape<T>& tape, Ref attribute_block) const {
        auto x = tape.linear(attribute_block, tape.param(*pt_lift_w_), tape.param(*pt_lift_b_));
        for (const auto& b : pt_blocks_) x = b.forward(tape, x);
        return x;
    }

    Ref encode(Tape<T>& tape, const std::string& label) const {
        ++encode_calls_;
        const auto label_ids = tok_->tokenize(label);
        std::vector<Ref> features;
        features.reserve(static_cast<std::size_t>(cfg_.n_prefixes) * cfg_.k_attributes);
        for (int i = 0; i < cfg_.n_prefixes; ++i) {
            for (Ref attr : generate_soft_attributes(tape, i, label)) {
                Ref prompt = bypass_prompt_transformer ? attr : prompt_transformer(tape, attr);
                features.push_back(text_->encode_text_soft(tape, prompt, label_ids));
            }
        }
        return tape.l2_normalize_rows(tape.mean_rows(tape.concat_rows(features)));
    }

    // Fixed-prompt baseline: greedy-decode attribute text, split it on
    // numbered-list boundaries, drop exact repeats, then prompt the text
    // encoder with the class name and each attribute.
    Ref encode_fixed_llm(Tape<T>& tape, const std::string& label,
                         const std::function<void(const std::string&)>& warn = {}) const {
        auto enc = llm_->encode_tokens(tape, build_template(label));
        auto ids = llm_->decode_discrete(tape, enc, cfg_.fixed_decode_max_steps);
        return encode_fixed_from_attributes(tape, label, parse_numbered_list(tok_->detokenize(ids)),
                                            warn);
    }

    Ref encode_fixed_from_attributes(Tape<T>& tape, const std::string& label,
                                     const std::vector<std::string>& attributes,
                                     const std::function<void(const std::string&)>& warn = {}) const {
        std::vector<Ref> features;
        features.push_back(encode_classname(tape, label));
        for (const auto& a : attributes)
            features.push_back(
                text_->encode_text(tape, tok_->tokenize(attribute_prompt_text(label, a))));
        if (attributes.empty()) {
            if (warn) warn("no attributes parsed for label '" + label + "', classname fallback");
            return features[0];
        }
        return tape.l2_normalize_rows(tape.mean_rows(tape.concat_rows(features)));
    }

    Ref encode_classname(Tape<T>& tape, const std::string& label) const {
        return text_->encode_text(tape, tok_->tokenize(classname_prompt_text(label)));
    }

    Ref encode_templates(Tape<T>& tape, const std::string& label,
                         const std::vector<std::string>& templates) const {
        if (templates.empty()) throw std::invalid_argument("encode_templates: empty list");
        std::vector<Ref> features;
        for (const auto& t : templates)
            features.push_back(text_->encode_text(tape, tok_->tokenize(
                                                            render_prompt_template(t, label))));
        return tape.l2_normalize_rows(tape.mean_rows(tape.concat_rows(features)));
    }

    Ref encode_soft_context(Tape<T>& tape, const std::string& label, Parameter<T>& context) const {
        return text_->encode_text_soft(tape, tape.param(context), tok_->tokenize(label));
    }

    // Splits "1 big mane 2 four legs" style word streams into items; the
    // tokenizer has already stripped punctuation from the numbers.
    static std::vector<std::string> parse_numbered_list(const std::string& text) {
        std::vector<std::string> items;
        std::string current;
        auto flush = [&]() {
            while (!current.empty() && current.back() == ' ') current.pop_back();
            if (!current.empty()) {
                bool dup = false;
                for (const auto& it : items) dup = dup || it == current;
                if (!dup) items.push_back(current);
            }
            current.clear();
        };
        for (const auto& w : Tokenizer::split_normalized(text)) {
            const bool is_number = !w.empty() && w.find_first_not_of("0123456789") == std::string::npos;
            if (is_number) {
                flush();
                continue;
            }
            if (!current.empty()) current.push_back(' ');
            current += w;
        }
        flush();
        return items;
    }

    std::int64_t encode_call_count() const { return encode_calls_; }
    void reset_encode_call_count() const { encode_calls_ = 0; }

    Parameter<T>& prefix_bank() { return *prefixes_; }

    // Test hook: when set, soft attributes feed the text encoder directly
    // (requires d_llm == d_clip).
    bool bypass_prompt_transformer = false;

private:
    LabelEncoderConfig cfg_;
    const Tokenizer* tok_;
    const ToyEncDecLLM<T>* llm_;
    const ToyTextEncoder<T>* text_;
    Parameter<T>* prefixes_ = nullptr;
    Parameter<T>* pt_lift_w_ = nullptr;
    Parameter<T>* pt_lift_b_ = nullptr;
    std::vector<TransformerBlockParams<T>> pt_blocks_;
    mutable std::int64_t encode_calls_ = 0;
};

}  // namespace ovml
