#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovml/batch.hpp"
#include "ovml/loss.hpp"
#include "ovml/metrics.hpp"
#include "ovml/model.hpp"
#include "ovml/optim.hpp"
#include "ovml/synth_data.hpp"

namespace ovml {

struct TrainConfig {
    int steps = 2000;
    int warmup_steps = 100;
    double lr = 3e-4;
    double weight_decay = 0.0;
    int batch_videos = 4;
    LossConfig loss;
    bool use_anchor_penalty = true;
    int eval_every = 200;
    int checkpoint_every = 500;
    std::uint64_t seed = 0;
};

// Linear warmup then cosine decay to zero.
inline double lr_at_step(const TrainConfig& cfg, int step) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;
    const int total = std::max(cfg.steps - cfg.warmup_steps, 1);
    const int t = std::min(step - cfg.warmup_steps, total);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t / total));
}

struct EvalRecord {
    int step = 0;
    std::map<std::string, double> aupr;
    std::map<std::string, double> peak_f1;
};

struct TrainResult {
    std::vector<double> losses;
    std::vector<EvalRecord> evals;
    bool nan_abort = false;
    int abort_step = -1;
    std::string final_checkpoint;
    std::string last_good_checkpoint;
};

// Scores every (video, label) pair of a split against a vocabulary.
template <typename T>
ScoredPairSet score_split(Model<T>& model, const DatasetManifest& manifest,
                          const std::vector<const VideoRecord*>& videos,
                          const std::vector<std::string>& vocab, const std::string& dataset_name) {
    ScoredPairSet set;
    set.dataset = dataset_name;
    std::vector<Tensor<T>> label_embs;
    std::vector<Tensor<T>> label_embs_neg;
    for (const auto& l : vocab) {
        label_embs.push_back(model.label_embedding(l));
        if (model.has_negative_context()) label_embs_neg.push_back(model.label_embedding_negative(l));
    }
    for (const auto* v : videos) {
        const Tensor<T> emb = model.video_embedding(video_frames<T>(manifest, *v), v->id);
        std::set<std::string> truth(v->labels.begin(), v->labels.end());
        for (std::size_t c = 0; c < vocab.size(); ++c) {
            double s = static_cast<double>(score(label_embs[c], emb));
            if (model.has_negative_context())
                s = (s - static_cast<double>(score(label_embs_neg[c], emb))) / 2.0;
            set.records.push_back(
                {v->id, vocab[c], s, truth.count(vocab[c]) ? 1 : 0});
        }
    }
    return set;
}

// One optimization step over a prepared batch; returns the scalar loss.
template <typename T>
double train_step(Model<T>& model, const DatasetManifest& manifest, const TrainingBatch& batch,
                  const TrainConfig& cfg, AdamW<T>& opt, int step) {
    Tape<T> tape;
    using Ref = typename Tape<T>::Ref;

    // each distinct pool label is encoded exactly once per batch
    model.label_encoder().reset_encode_call_count();
    std::vector<Ref> label_refs, label_refs_neg;
    for (const auto& l : batch.class_pool) {
        label_refs.push_back(model.encode_label(tape, l));
        if (model.has_negative_context())
            label_refs_neg.push_back(model.encode_label_negative(tape, l));
    }
    if (model.config().variant == EncoderVariant::learnable_llm &&
        model.label_encoder().encode_call_count() !=
            static_cast<std::int64_t>(batch.class_pool.size()))
        throw std::logic_error("label encoder call count != pool size");

    // one per-step stream drives frame jitter and alpha draws, in video order
    Rng step_rng(derive_seed(cfg.seed, 0x10000ull + static_cast<std::uint64_t>(step)));
    std::vector<Ref> video_refs;
    for (const auto* v : batch.videos) {
        auto frames = video_frames<T>(manifest, *v);
        video_refs.push_back(model.encode_video(tape, frames, true, step_rng, v->id));
    }

    auto labels_mat = tape.concat_rows(label_refs);
    auto videos_mat = tape.concat_rows(video_refs);
    auto scores = tape.matmul_nt(videos_mat, labels_mat);
    if (model.has_negative_context()) {
        auto neg_mat = tape.concat_rows(label_refs_neg);
        scores = tape.scale(tape.sub(scores, tape.matmul_nt(videos_mat, neg_mat)), T(0.5));
    }

    const auto pos_mask = batch.positive_mask();
    Ref loss = cfg.loss.kind == LossKind::multilabel_bce
                   ? multilabel_bce(tape, scores, pos_mask, cfg.loss)
                   : single_label_ce(tape, scores, pos_mask, cfg.loss);
    if (cfg.use_anchor_penalty && model.config().temporal.swa.anchor_l2_coeff > 0.0)
        loss = tape.add(loss, model.video_encoder().anchor_penalty(tape));

    const double loss_value = static_cast<double>(tape.value(loss).at(0, 0));
    if (!std::isfinite(loss_value)) return loss_value;  // caller aborts

    model.store().zero_grads();
    tape.backward(loss);
    opt.set_lr(lr_at_step(cfg, step));
    opt.step(model.store());
    return loss_value;
}

template <typename T>
TrainResult train_loop(Model<T>& model, const DatasetManifest& manifest, const TrainConfig& cfg,
                       const std::string& out_dir = "",
                       const std::vector<std::string>& eval_splits = {"val"}) {
    cfg.loss.validate();
    TrainResult result;
    auto train_videos = manifest.split("train");
    if (train_videos.empty()) throw std::runtime_error("train split is empty");

    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW<T> opt(ocfg);

    std::ofstream metrics_log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_log.open(std::filesystem::path(out_dir) / "metrics.jsonl", std::ios::trunc);
    }

    auto write_checkpoint = [&](const std::string& name) {
        if (out_dir.empty()) return std::string();
        const auto path = (std::filesystem::path(out_dir) / name).string();
        model.save(path);
        return path;
    };

    auto run_eval = [&](int step) {
        EvalRecord rec;
        rec.step = step;
        for (const auto& split : eval_splits) {
            auto videos = manifest.split(split);
            if (videos.empty()) continue;
            const auto& vocab =
                split == "test_open" ? manifest.open_vocabulary : manifest.vocabulary;
            auto pairs = score_split(model, manifest, videos, vocab, split);
            rec.aupr[split] = aupr(pairs);
            rec.peak_f1[split] = peak_f1(pairs).f1;
        }
        result.evals.push_back(rec);
        if (metrics_log.is_open()) {
            nlohmann::ordered_json j;
            j["step"] = step;
            j["loss"] = result.losses.empty() ? 0.0 : result.losses.back();
            for (const auto& [k, v] : rec.aupr) j["aupr_" + k] = v;
            for (const auto& [k, v] : rec.peak_f1) j["peak_f1_" + k] = v;
            metrics_log << j.dump() << '\n' << std::flush;
        }
    };

    for (int step = 0; step < cfg.steps; ++step) {
        Rng batch_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step)));
        auto batch = build_batch(train_videos, cfg.batch_videos, manifest.vocabulary, batch_rng);
        const double loss = train_step(model, manifest, batch, cfg, opt, step);
        if (!std::isfinite(loss)) {
            result.nan_abort = true;
            result.abort_step = step;
            break;
        }
        result.losses.push_back(loss);
        if (model.label_path_trainable()) model.invalidate_label_cache();
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) run_eval(step + 1);
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            result.last_good_checkpoint =
                write_checkpoint("step_" + std::to_string(step + 1) + ".ckpt");
    }
    if (!result.nan_abort) {
        result.final_checkpoint = write_checkpoint("final.ckpt");
        if (cfg.eval_every > 0 && (result.evals.empty() || result.evals.back().step != cfg.steps))
            run_eval(cfg.steps);
    }
    return result;
}

}  // namespace ovml
