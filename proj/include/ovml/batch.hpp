#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/rng.hpp"
#include "ovml/synth_data.hpp"

namespace ovml {

// One training batch: B videos, their positive sets, and a class pool of
// exactly 4B labels (pooled positives plus sampled negatives). Every video
// treats all non-positive pool labels as negatives.
struct TrainingBatch {
    std::vector<const VideoRecord*> videos;
    std::vector<std::vector<std::string>> positives;  // P(v), per video
    std::vector<std::string> pooled_positives;        // P_B
    std::vector<std::string> sampled_negatives;       // N_B
    std::vector<std::string> class_pool;              // P_B ∪ N_B, fixed order

    std::vector<std::string> negatives_of(std::size_t video_index) const {
        std::set<std::string> pos(positives[video_index].begin(),
                                  positives[video_index].end());
        std::vector<std::string> out;
        for (const auto& l : class_pool)
            if (!pos.count(l)) out.push_back(l);
        return out;
    }

    // pos_mask[v * pool + c] = 1 iff class_pool[c] ∈ P(videos[v])
    std::vector<std::uint8_t> positive_mask() const {
        std::vector<std::uint8_t> mask(videos.size() * class_pool.size(), 0);
        for (std::size_t v = 0; v < videos.size(); ++v) {
            std::set<std::string> pos(positives[v].begin(), positives[v].end());
            for (std::size_t c = 0; c < class_pool.size(); ++c)
                if (pos.count(class_pool[c]))
                    mask[v * class_pool.size() + c] = 1;
        }
        return mask;
    }
};

inline TrainingBatch build_batch(const std::vector<const VideoRecord*>& dataset, int batch_videos,
                                 const std::vector<std::string>& vocabulary, Rng& rng) {
    if (batch_videos < 1) throw std::invalid_argument("build_batch: B must be >= 1");
    if (static_cast<int>(dataset.size()) < batch_videos)
        throw std::invalid_argument("build_batch: dataset smaller than batch");
    const std::size_t budget = static_cast<std::size_t>(4) * batch_videos;
    if (vocabulary.size() < budget)
        throw std::invalid_argument("build_batch: vocabulary smaller than 4B");

    TrainingBatch batch;

    // B videos without replacement
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int i = 0; i < batch_videos; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(order.size() - i));
        std::swap(order[i], order[j]);
        batch.videos.push_back(dataset[order[i]]);
    }

    std::set<std::string> pooled;
    for (const auto* v : batch.videos) {
        std::vector<std::string> pos(v->labels.begin(), v->labels.end());
        std::sort(pos.begin(), pos.end());
        pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
        for (const auto& l : pos) pooled.insert(l);
        batch.positives.push_back(std::move(pos));
    }
    if (pooled.size() > budget)
        throw std::runtime_error(
            "batch positives exceed class budget: raise B or cap labels per video");
    batch.pooled_positives.assign(pooled.begin(), pooled.end());

    std::vector<std::string> candidates;
    for (const auto& l : vocabulary)
        if (!pooled.count(l)) candidates.push_back(l);
    const std::size_t need = budget - pooled.size();
    if (candidates.size() < need)
        throw std::runtime_error("build_batch: not enough negative candidates in vocabulary");
    for (std::size_t i = 0; i < need; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
        batch.sampled_negatives.push_back(candidates[i]);
    }

    batch.class_pool = batch.pooled_positives;
    batch.class_pool.insert(batch.class_pool.end(), batch.sampled_negatives.begin(),
                            batch.sampled_negatives.end());
    return batch;
}

}  // namespace ovml
