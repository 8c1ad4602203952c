#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/tape.hpp"
#include "ovml/tensor.hpp"

namespace ovml {

enum class LossKind { multilabel_bce, single_label_ce };

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "multilabel_bce") return LossKind::multilabel_bce;
    if (s == "single_label_ce") return LossKind::single_label_ce;
    throw std::invalid_argument("unknown loss kind: " + s);
}

struct LossConfig {
    double tau = 0.05;
    double neg_weight = 1.0;
    LossKind kind = LossKind::multilabel_bce;
    bool balance_negatives = false;  // w = |P| / |N| instead of neg_weight

    void validate() const {
        if (tau <= 0) throw std::invalid_argument("loss: tau must be positive");
        if (neg_weight <= 0) throw std::invalid_argument("loss: neg_weight must be positive");
    }
};

// Inner-product score of two unit-norm embeddings.
template <typename T>
T score(const Tensor<T>& label_embedding, const Tensor<T>& video_embedding) {
    if (label_embedding.numel() != video_embedding.numel())
        throw std::invalid_argument("score: dimension mismatch");
    T s = 0;
    for (std::size_t i = 0; i < label_embedding.numel(); ++i)
        s += label_embedding[i] * video_embedding[i];
    return s;
}

inline double effective_neg_weight(const LossConfig& cfg, std::size_t positives,
                                   std::size_t negatives) {
    if (!cfg.balance_negatives) return cfg.neg_weight;
    if (negatives == 0) return cfg.neg_weight;
    return static_cast<double>(positives) / static_cast<double>(negatives);
}

// Weighted multi-label BCE over a (videos x pool) score matrix; every
// entry is a positive or a negative. Stabilized log-sigmoid form.
template <typename T>
typename Tape<T>::Ref multilabel_bce(Tape<T>& tape, typename Tape<T>::Ref scores,
                                     const std::vector<std::uint8_t>& pos_mask,
                                     const LossConfig& cfg) {
    cfg.validate();
    std::size_t pos = 0;
    for (auto m : pos_mask) pos += m ? 1 : 0;
    const double w = effective_neg_weight(cfg, pos, pos_mask.size() - pos);
    auto logits = tape.scale(scores, static_cast<T>(1.0 / cfg.tau));
    return tape.bce_with_logits(logits, pos_mask, static_cast<T>(w));
}

// Softmax cross entropy for the single-label variant; requires exactly one
// positive per video row.
template <typename T>
typename Tape<T>::Ref single_label_ce(Tape<T>& tape, typename Tape<T>::Ref scores,
                                      const std::vector<std::uint8_t>& pos_mask,
                                      const LossConfig& cfg) {
    cfg.validate();
    const int rows = tape.value(scores).rows();
    const int cols = tape.value(scores).cols();
    if (pos_mask.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("single_label_ce: mask size mismatch");
    std::vector<int> targets(rows, -1);
    for (int v = 0; v < rows; ++v) {
        for (int c = 0; c < cols; ++c) {
            if (!pos_mask[static_cast<std::size_t>(v) * cols + c]) continue;
            if (targets[v] != -1)
                throw std::runtime_error("single_label_ce: more than one positive for a video");
            targets[v] = c;
        }
        if (targets[v] == -1)
            throw std::runtime_error("single_label_ce: video has no positive label");
    }
    auto logits = tape.scale(scores, static_cast<T>(1.0 / cfg.tau));
    return tape.softmax_nll(logits, targets);
}

}  // namespace ovml
