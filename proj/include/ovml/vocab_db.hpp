#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/checkpoint.hpp"
#include "ovml/model.hpp"
#include "ovml/synth_data.hpp"

namespace ovml {

inline constexpr std::uint32_t kVocabDbMagic = 0x4f564442;  // "OVDB"
inline constexpr std::uint32_t kVocabDbVersion = 1;

struct VocabDbEntry {
    std::string label;
    std::vector<float> vector;  // unit norm, joint space
};

// Persisted label-embedding database for post-training vocabulary
// expansion. Entries are bound to the producing model by checkpoint hash.
class VocabularyDB {
public:
    VocabularyDB() = default;
    VocabularyDB(std::uint32_t dim, std::string encoder_variant, std::uint64_t model_hash)
        : dim_(dim), variant_(std::move(encoder_variant)), model_hash_(model_hash) {}

    std::uint32_t dim() const { return dim_; }
    const std::string& encoder_variant() const { return variant_; }
    std::uint64_t model_hash() const { return model_hash_; }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<VocabDbEntry>& entries() const { return entries_; }
    bool contains(const std::string& label) const { return index_.count(label) != 0; }

    const VocabDbEntry& at(std::size_t i) const { return entries_[i]; }

    void add(const std::string& label, std::vector<float> vec) {
        if (index_.count(label)) throw std::runtime_error("duplicate db label: " + label);
        if (vec.size() != dim_) throw std::runtime_error("db vector dimension mismatch");
        double norm = 0;
        for (float v : vec) norm += static_cast<double>(v) * v;
        norm = std::sqrt(norm);
        if (std::abs(norm - 1.0) > 1e-5)
            throw std::runtime_error("db vectors must be unit norm: " + label);
        index_[label] = entries_.size();
        entries_.push_back({label, std::move(vec)});
    }

    std::string serialize() const {
        std::string out;
        detail::put_u32(out, kVocabDbMagic);
        detail::put_u32(out, kVocabDbVersion);
        detail::put_u32(out, dim_);
        detail::put_u64(out, entries_.size());
        detail::put_u64(out, model_hash_);
        detail::put_u32(out, static_cast<std::uint32_t>(variant_.size()));
        out.append(variant_);
        for (const auto& e : entries_) {
            detail::put_u32(out, static_cast<std::uint32_t>(e.label.size()));
            out.append(e.label);
            for (float v : e.vector) detail::put_f32(out, v);
        }
        return out;
    }

    void save(const std::string& path) const { detail::write_file_bytes(path, serialize()); }

    static VocabularyDB load(const std::string& path) {
        const std::string bytes = detail::read_file_bytes(path);
        detail::ByteReader r(bytes);
        if (r.u32() != kVocabDbMagic) throw std::runtime_error("not a vocabulary db: " + path);
        if (r.u32() != kVocabDbVersion)
            throw std::runtime_error("vocabulary db version mismatch: " + path);
        VocabularyDB db;
        db.dim_ = r.u32();
        const std::uint64_t count = r.u64();
        db.model_hash_ = r.u64();
        db.variant_ = r.str(r.u32());
        for (std::uint64_t i = 0; i < count; ++i) {
            VocabDbEntry e;
            e.label = r.str(r.u32());
            e.vector.resize(db.dim_);
            for (auto& v : e.vector) v = r.f32();
            if (db.index_.count(e.label))
                throw std::runtime_error("duplicate label in db file: " + e.label);
            db.index_[e.label] = db.entries_.size();
            db.entries_.push_back(std::move(e));
        }
        if (!r.exhausted()) throw std::runtime_error("trailing bytes in vocabulary db");
        return db;
    }

private:
    std::uint32_t dim_ = 0;
    std::string variant_;
    std::uint64_t model_hash_ = 0;
    std::vector<VocabDbEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Appends embeddings for labels not already present; existing entries are
// untouched. An empty db adopts the model's identity.
template <typename T>
VocabularyDB expand_vocabulary(const VocabularyDB& db, const std::vector<std::string>& labels,
                               Model<T>& model) {
    if (model.config().variant == EncoderVariant::dualcoop)
        throw std::runtime_error("dualcoop labels cannot be stored in a single-vector database");
    const std::uint64_t hash = model.weights_hash();
    VocabularyDB out = db;
    if (out.empty() && out.dim() == 0) {
        out = VocabularyDB(static_cast<std::uint32_t>(model.config().text.joint_dim),
                           to_string(model.config().variant), hash);
    } else if (out.model_hash() != hash) {
        throw std::runtime_error("vocabulary built with different model");
    }
    for (const auto& l : labels) {
        if (out.contains(l)) continue;
        const Tensor<T> emb = model.label_embedding(l);
        std::vector<float> vec(emb.numel());
        for (std::size_t i = 0; i < emb.numel(); ++i) vec[i] = static_cast<float>(emb[i]);
        out.add(l, std::move(vec));
    }
    return out;
}

struct InferenceResult {
    std::string video_id;
    std::vector<std::string> labels;  // db order
    std::vector<double> scores;
    std::optional<double> threshold;
    std::vector<std::string> predicted;  // labels with s >= threshold

    std::size_t rank_first() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < scores.size(); ++i)
            if (scores[i] > scores[best]) best = i;
        return best;
    }
};

template <typename T>
InferenceResult infer_frames(const VocabularyDB& db, Model<T>& model,
                             const std::vector<std::vector<T>>& frames,
                             const std::string& video_id,
                             std::optional<double> threshold = std::nullopt) {
    if (db.empty()) throw std::runtime_error("empty vocabulary db");
    if (db.model_hash() != model.weights_hash())
        throw std::runtime_error("vocabulary built with different model");
    const Tensor<T> emb = model.video_embedding(frames);
    if (static_cast<std::uint32_t>(emb.numel()) != db.dim())
        throw std::runtime_error("db dimension does not match model");
    InferenceResult res;
    res.video_id = video_id;
    res.threshold = threshold;
    for (std::size_t i = 0; i < db.size(); ++i) {
        const auto& e = db.at(i);
        T s = 0;
        for (std::size_t j = 0; j < e.vector.size(); ++j)
            s += static_cast<T>(e.vector[j]) * emb[j];
        res.labels.push_back(e.label);
        res.scores.push_back(static_cast<double>(s));
        if (threshold && static_cast<double>(s) >= *threshold) res.predicted.push_back(e.label);
    }
    return res;
}

template <typename T>
InferenceResult infer(const VocabularyDB& db, Model<T>& model, const DatasetManifest& manifest,
                      const std::string& video_id,
                      std::optional<double> threshold = std::nullopt) {
    const VideoRecord& rec = manifest.video_by_id(video_id);
    return infer_frames(db, model, video_frames<T>(manifest, rec), video_id, threshold);
}

}  // namespace ovml
