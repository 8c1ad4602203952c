#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovml/label_encoder.hpp"
#include "ovml/model.hpp"
#include "ovml/synth_data.hpp"
#include "ovml/trainer.hpp"

namespace ovml {

inline constexpr const char* kVersion = "0.1.0";

struct PipelineConfig {
    int top_k = 10;
    double min_sim = 0.7;
    int kmeans_k = 0;  // 0: ceil(distinct / 3)
    int kmeans_max_iters = 100;
};

// Whole-run configuration. The JSON layout mirrors the flat dotted key
// names (temporal.blocks -> j["temporal"]["blocks"], and so on).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SyntheticDatasetSpec data;
    PipelineConfig pipeline;
    std::string templates_file;

    static RunConfig desk_preset() {
        RunConfig cfg;
        cfg.model.text = {.d_clip = 48, .layers = 3, .n_heads = 4, .max_len = 96, .joint_dim = 32};
        cfg.model.vision = {.grid = 4, .d_vis = 48, .layers = 6, .n_heads = 4, .joint_dim = 32};
        cfg.model.llm = {.d_llm = 32, .enc_layers = 2, .dec_layers = 2, .n_heads = 4,
                         .max_len = 96};
        cfg.model.label = {.n_prefixes = 2, .k_attributes = 2, .l_tokens = 2};
        cfg.model.temporal.blocks = 4;
        cfg.model.sampling = {.frames_per_clip = 8, .eval_clips = 1};
        cfg.train.steps = 2000;
        cfg.train.warmup_steps = 100;
        cfg.train.lr = 3e-4;
        cfg.train.batch_videos = 4;
        cfg.train.eval_every = 200;
        cfg.train.checkpoint_every = 500;
        return cfg;
    }

    // Paper-scale hyperparameters, far beyond desk CPU budgets; shipped for
    // completeness and config documentation.
    static RunConfig paper_preset() {
        RunConfig cfg = desk_preset();
        cfg.model.label = {.n_prefixes = 4, .k_attributes = 5, .l_tokens = 5};
        cfg.model.temporal.blocks = 4;
        cfg.model.sampling = {.frames_per_clip = 8, .eval_clips = 4};
        cfg.train.steps = 30000;
        cfg.train.warmup_steps = 2000;
        cfg.train.lr = 1e-5;
        cfg.train.weight_decay = 1e-7;
        cfg.train.batch_videos = 12;
        cfg.data.train_videos = 4096;
        cfg.data.val_videos = 256;
        cfg.data.test_closed_videos = 256;
        cfg.data.test_open_videos = 128;
        return cfg;
    }
};

namespace config_detail {

template <typename V>
void maybe(const nlohmann::json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace config_detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using config_detail::maybe;
    RunConfig cfg = RunConfig::desk_preset();
    if (j.contains("preset")) {
        const std::string p = j.at("preset").get<std::string>();
        if (p == "paper")
            cfg = RunConfig::paper_preset();
        else if (p != "desk")
            throw std::invalid_argument("unknown preset: " + p);
    }
    if (j.contains("text")) {
        const auto& t = j.at("text");
        maybe(t, "d_clip", cfg.model.text.d_clip);
        maybe(t, "layers", cfg.model.text.layers);
        maybe(t, "n_heads", cfg.model.text.n_heads);
        maybe(t, "max_len", cfg.model.text.max_len);
        maybe(t, "joint_dim", cfg.model.text.joint_dim);
    }
    if (j.contains("vision")) {
        const auto& v = j.at("vision");
        maybe(v, "grid", cfg.model.vision.grid);
        maybe(v, "d_vis", cfg.model.vision.d_vis);
        maybe(v, "layers", cfg.model.vision.layers);
        maybe(v, "n_heads", cfg.model.vision.n_heads);
        maybe(v, "joint_dim", cfg.model.vision.joint_dim);
    }
    if (j.contains("llm")) {
        const auto& l = j.at("llm");
        maybe(l, "d_llm", cfg.model.llm.d_llm);
        maybe(l, "enc_layers", cfg.model.llm.enc_layers);
        maybe(l, "dec_layers", cfg.model.llm.dec_layers);
        maybe(l, "n_heads", cfg.model.llm.n_heads);
        maybe(l, "max_len", cfg.model.llm.max_len);
    }
    if (j.contains("label_encoder")) {
        const auto& l = j.at("label_encoder");
        if (l.contains("variant"))
            cfg.model.variant = encoder_variant_from_string(l.at("variant").get<std::string>());
        maybe(l, "n_prefixes", cfg.model.label.n_prefixes);
        maybe(l, "k_attributes", cfg.model.label.k_attributes);
        maybe(l, "l_tokens", cfg.model.label.l_tokens);
        maybe(l, "decode_steps", cfg.model.label.decode_steps);
        maybe(l, "pt_blocks", cfg.model.label.pt_blocks);
        maybe(l, "pt_heads", cfg.model.label.pt_heads);
        maybe(l, "fixed_decode_max_steps", cfg.model.label.fixed_decode_max_steps);
        maybe(l, "context_len", cfg.model.context_len);
        maybe(l, "templates_file", cfg.templates_file);
    }
    if (j.contains("temporal")) {
        const auto& t = j.at("temporal");
        maybe(t, "blocks", cfg.model.temporal.blocks);
        maybe(t, "enabled", cfg.model.temporal.enabled);
        maybe(t, "disable_temporal_attention", cfg.model.temporal.disable_temporal_attention);
        maybe(t, "serial", cfg.model.temporal.serial);
        maybe(t, "n_heads", cfg.model.temporal.n_heads);
        maybe(t, "max_frames", cfg.model.temporal.max_frames);
        maybe(t, "lambda", cfg.model.temporal.swa.lambda);
        maybe(t, "anchor_l2", cfg.model.temporal.swa.anchor_l2_coeff);
        if (t.contains("mode"))
            cfg.model.temporal.swa.mode = swa_mode_from_string(t.at("mode").get<std::string>());
        if (t.contains("eval_mode"))
            cfg.model.temporal.eval_mode =
                swa_mode_from_string(t.at("eval_mode").get<std::string>());
    }
    if (j.contains("video")) {
        const auto& v = j.at("video");
        maybe(v, "frames_per_clip", cfg.model.sampling.frames_per_clip);
        maybe(v, "eval_clips", cfg.model.sampling.eval_clips);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        maybe(b, "unfreeze", cfg.model.train_vision_backbone);
        maybe(b, "unfreeze_text", cfg.model.train_text_encoder);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        maybe(t, "steps", cfg.train.steps);
        maybe(t, "warmup_steps", cfg.train.warmup_steps);
        maybe(t, "lr", cfg.train.lr);
        maybe(t, "weight_decay", cfg.train.weight_decay);
        maybe(t, "batch_videos", cfg.train.batch_videos);
        maybe(t, "tau", cfg.train.loss.tau);
        maybe(t, "neg_weight", cfg.train.loss.neg_weight);
        maybe(t, "balance_negatives", cfg.train.loss.balance_negatives);
        if (t.contains("loss"))
            cfg.train.loss.kind = loss_kind_from_string(t.at("loss").get<std::string>());
        maybe(t, "anchor_penalty", cfg.train.use_anchor_penalty);
        maybe(t, "eval_every", cfg.train.eval_every);
        maybe(t, "checkpoint_every", cfg.train.checkpoint_every);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        maybe(d, "grid", cfg.data.grid);
        maybe(d, "static_concepts", cfg.data.static_concepts);
        maybe(d, "temporal_concepts", cfg.data.temporal_concepts);
        maybe(d, "frames_per_video", cfg.data.frames_per_video);
        maybe(d, "train_videos", cfg.data.train_videos);
        maybe(d, "val_videos", cfg.data.val_videos);
        maybe(d, "test_closed_videos", cfg.data.test_closed_videos);
        maybe(d, "test_open_videos", cfg.data.test_open_videos);
        maybe(d, "min_labels_per_video", cfg.data.min_labels_per_video);
        maybe(d, "max_labels_per_video", cfg.data.max_labels_per_video);
        maybe(d, "noise", cfg.data.noise);
        maybe(d, "static_amp", cfg.data.static_amp);
        maybe(d, "temporal_amp", cfg.data.temporal_amp);
    }
    if (j.contains("pipeline")) {
        const auto& p = j.at("pipeline");
        maybe(p, "top_k", cfg.pipeline.top_k);
        maybe(p, "min_sim", cfg.pipeline.min_sim);
        maybe(p, "kmeans_k", cfg.pipeline.kmeans_k);
        maybe(p, "kmeans_max_iters", cfg.pipeline.kmeans_max_iters);
    }
    // keep the generator grid in sync with the vision patch grid
    cfg.data.grid = cfg.model.vision.grid;
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    return run_config_from_json(nlohmann::json::parse(in));
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["text"] = {{"d_clip", cfg.model.text.d_clip},
                 {"layers", cfg.model.text.layers},
                 {"n_heads", cfg.model.text.n_heads},
                 {"max_len", cfg.model.text.max_len},
                 {"joint_dim", cfg.model.text.joint_dim}};
    j["vision"] = {{"grid", cfg.model.vision.grid},
                   {"d_vis", cfg.model.vision.d_vis},
                   {"layers", cfg.model.vision.layers},
                   {"n_heads", cfg.model.vision.n_heads},
                   {"joint_dim", cfg.model.vision.joint_dim}};
    j["llm"] = {{"d_llm", cfg.model.llm.d_llm},
                {"enc_layers", cfg.model.llm.enc_layers},
                {"dec_layers", cfg.model.llm.dec_layers},
                {"n_heads", cfg.model.llm.n_heads},
                {"max_len", cfg.model.llm.max_len}};
    j["label_encoder"] = {{"variant", to_string(cfg.model.variant)},
                          {"n_prefixes", cfg.model.label.n_prefixes},
                          {"k_attributes", cfg.model.label.k_attributes},
                          {"l_tokens", cfg.model.label.l_tokens},
                          {"pt_blocks", cfg.model.label.pt_blocks},
                          {"pt_heads", cfg.model.label.pt_heads},
                          {"context_len", cfg.model.context_len}};
    if (!cfg.templates_file.empty()) j["label_encoder"]["templates_file"] = cfg.templates_file;
    j["temporal"] = {{"blocks", cfg.model.temporal.blocks},
                     {"enabled", cfg.model.temporal.enabled},
                     {"disable_temporal_attention",
                      cfg.model.temporal.disable_temporal_attention},
                     {"serial", cfg.model.temporal.serial},
                     {"n_heads", cfg.model.temporal.n_heads},
                     {"max_frames", cfg.model.temporal.max_frames},
                     {"lambda", cfg.model.temporal.swa.lambda},
                     {"anchor_l2", cfg.model.temporal.swa.anchor_l2_coeff},
                     {"mode", cfg.model.temporal.swa.mode == SwaMode::train_stochastic
                                  ? "train_stochastic"
                                  : cfg.model.temporal.swa.mode == SwaMode::eval_mean
                                        ? "eval_mean"
                                        : "eval_finetuned"},
                     {"eval_mode", cfg.model.temporal.eval_mode == SwaMode::eval_mean
                                       ? "eval_mean"
                                       : cfg.model.temporal.eval_mode == SwaMode::eval_finetuned
                                             ? "eval_finetuned"
                                             : "train_stochastic"}};
    j["video"] = {{"frames_per_clip", cfg.model.sampling.frames_per_clip},
                  {"eval_clips", cfg.model.sampling.eval_clips}};
    j["backbone"] = {{"unfreeze", cfg.model.train_vision_backbone},
                     {"unfreeze_text", cfg.model.train_text_encoder}};
    j["train"] = {{"steps", cfg.train.steps},
                  {"warmup_steps", cfg.train.warmup_steps},
                  {"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"batch_videos", cfg.train.batch_videos},
                  {"tau", cfg.train.loss.tau},
                  {"neg_weight", cfg.train.loss.neg_weight},
                  {"balance_negatives", cfg.train.loss.balance_negatives},
                  {"loss", cfg.train.loss.kind == LossKind::multilabel_bce ? "multilabel_bce"
                                                                           : "single_label_ce"},
                  {"anchor_penalty", cfg.train.use_anchor_penalty},
                  {"eval_every", cfg.train.eval_every},
                  {"checkpoint_every", cfg.train.checkpoint_every}};
    j["data"] = {{"grid", cfg.data.grid},
                 {"static_concepts", cfg.data.static_concepts},
                 {"temporal_concepts", cfg.data.temporal_concepts},
                 {"frames_per_video", cfg.data.frames_per_video},
                 {"train_videos", cfg.data.train_videos},
                 {"val_videos", cfg.data.val_videos},
                 {"test_closed_videos", cfg.data.test_closed_videos},
                 {"test_open_videos", cfg.data.test_open_videos},
                 {"min_labels_per_video", cfg.data.min_labels_per_video},
                 {"max_labels_per_video", cfg.data.max_labels_per_video},
                 {"noise", cfg.data.noise},
                 {"static_amp", cfg.data.static_amp},
                 {"temporal_amp", cfg.data.temporal_amp}};
    j["pipeline"] = {{"top_k", cfg.pipeline.top_k},
                     {"min_sim", cfg.pipeline.min_sim},
                     {"kmeans_k", cfg.pipeline.kmeans_k},
                     {"kmeans_max_iters", cfg.pipeline.kmeans_max_iters}};
    return j;
}

// Tokenizer covering dataset labels plus every prompt rendering.
inline Tokenizer build_tokenizer(const DatasetManifest& manifest) {
    std::vector<std::string> words = prompt_vocabulary_words();
    for (const auto& w : dataset_words(manifest)) words.push_back(w);
    return Tokenizer(words);
}

inline void write_run_record(const std::string& out_dir, const std::string& command,
                             const RunConfig& cfg, std::uint64_t seed,
                             const std::string& source_hash) {
    std::filesystem::create_directories(out_dir);
    nlohmann::ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    j["version"] = kVersion;
    j["source_hash"] = source_hash;
    j["config"] = run_config_to_json(cfg);
    std::ofstream out(std::filesystem::path(out_dir) / "run.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write run.json in " + out_dir);
    out << j.dump(2) << '\n';
}

}  // namespace ovml
