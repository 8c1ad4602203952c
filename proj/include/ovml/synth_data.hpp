#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovml/rng.hpp"
#include "ovml/tokenizer.hpp"

namespace ovml {

// Seeded synthetic video-label testbed. Static concepts render a fixed
// patch pattern in every frame. Temporal concepts come in pairs that share
// the same two patterns (x, y) but alternate them with different periods,
// so the multiset of frames is identical within a pair and only temporal
// order separates the two classes. Open-vocabulary labels are synonym
// names built from in-tokenizer words.

struct SyntheticDatasetSpec {
    int grid = 4;
    int static_concepts = 10;
    int temporal_concepts = 6;  // even; concepts pair up
    int frames_per_video = 8;
    int train_videos = 256;
    int val_videos = 64;
    int test_closed_videos = 64;
    int test_open_videos = 32;
    int min_labels_per_video = 1;
    int max_labels_per_video = 3;
    double noise = 0.15;
    double static_amp = 1.0;
    double temporal_amp = 1.0;
    std::uint64_t seed = 0;

    int concepts() const { return static_concepts + temporal_concepts; }
    int patches() const { return grid * grid; }
};

struct ConceptDef {
    std::string train_name;
    std::string open_name;
    bool temporal = false;
    int period = 0;                  // frames per pattern cycle (temporal only)
    std::vector<double> pattern_a;   // static pattern, or temporal pattern x
    std::vector<double> pattern_b;   // temporal pattern y
};

struct VideoRecord {
    std::string id;
    std::string split;  // train | val | test_closed | test_open
    std::vector<int> concepts;
    std::vector<int> phase_offsets;  // one per concept
    std::uint64_t noise_seed = 0;
    std::vector<std::string> labels;
    std::string frame_file;  // optional raw-tensor override
};

struct DatasetManifest {
    SyntheticDatasetSpec spec;
    std::vector<ConceptDef> concepts;
    std::vector<VideoRecord> videos;
    std::vector<std::string> vocabulary;       // train-split label names
    std::vector<std::string> open_vocabulary;  // synonym names for the open split

    bool concept_is_temporal(int c) const { return concepts[c].temporal; }

    std::vector<const VideoRecord*> split(const std::string& name) const {
        std::vector<const VideoRecord*> out;
        for (const auto& v : videos)
            if (v.split == name) out.push_back(&v);
        return out;
    }

    const VideoRecord& video_by_id(const std::string& id) const {
        for (const auto& v : videos)
            if (v.id == id) return v;
        throw std::runtime_error("unknown video id: " + id);
    }
};

namespace wordbank {

struct NamePair {
    const char* train_name;
    const char* open_name;
};

inline const std::vector<NamePair>& static_names() {
    static const std::vector<NamePair> names = {
        {"brick wall", "brick barrier"},   {"glass tower", "glass spire"},
        {"sand dune", "sand mound"},       {"metal fence", "metal railing"},
        {"stone arch", "stone vault"},     {"wooden bridge", "wooden walkway"},
        {"paper lantern", "paper lamp"},   {"clay statue", "clay figure"},
        {"ivory door", "ivory gate"},      {"copper roof", "copper canopy"},
        {"velvet curtain", "velvet drape"},{"marble column", "marble pillar"},
    };
    return names;
}

inline const std::vector<NamePair>& temporal_names() {
    static const std::vector<NamePair> names = {
        {"spinning wheel", "spinning disc"},   {"bouncing ball", "bouncing orb"},
        {"waving flag", "waving banner"},      {"swinging rope", "swinging cable"},
        {"flashing beacon", "flashing light"}, {"rolling barrel", "rolling drum"},
        {"drifting kite", "drifting glider"},  {"shaking bell", "shaking chime"},
    };
    return names;
}

}  // namespace wordbank

inline DatasetManifest generate_synthetic_dataset(const SyntheticDatasetSpec& spec) {
    if (spec.temporal_concepts % 2 != 0)
        throw std::invalid_argument("temporal_concepts must be even (concepts pair up)");
    if (spec.static_concepts > static_cast<int>(wordbank::static_names().size()) ||
        spec.temporal_concepts > static_cast<int>(wordbank::temporal_names().size()))
        throw std::invalid_argument("concept count exceeds word bank capacity");
    if (spec.max_labels_per_video < spec.min_labels_per_video || spec.min_labels_per_video < 1)
        throw std::invalid_argument("bad labels-per-video range");

    DatasetManifest m;
    m.spec = spec;
    Rng rng(derive_seed(spec.seed, "synthetic_dataset"));

    // One latent pattern per static concept, two per temporal pair. Plain
    // Gaussian draws in a G*G-dim space can collide badly (|cos| up to
    // ~0.7 among 16 patterns), which makes some classes inseparable by
    // construction; candidates are redrawn until the pairwise overlap
    // stays capped, keeping the Gaussian marginals.
    const int n_patterns = spec.static_concepts + spec.temporal_concepts;
    const double max_corr = 0.35;
    std::vector<std::vector<double>> patterns;
    patterns.reserve(n_patterns);
    for (int i = 0; i < n_patterns; ++i) {
        std::vector<double> best;
        double best_worst = 1e18;
        for (int attempt = 0; attempt < 64; ++attempt) {
            std::vector<double> cand(spec.patches());
            double norm = 0;
            for (auto& v : cand) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            if (norm < 1e-9) continue;
            double worst = 0;
            for (const auto& prev : patterns) {
                double d = 0, pn = 0;
                for (int k = 0; k < spec.patches(); ++k) {
                    d += cand[k] * prev[k];
                    pn += prev[k] * prev[k];
                }
                worst = std::max(worst, std::abs(d) / (norm * std::sqrt(pn)));
            }
            if (worst < best_worst) {
                best_worst = worst;
                best = std::move(cand);
            }
            if (best_worst <= max_corr) break;
        }
        if (best.empty()) throw std::runtime_error("degenerate pattern draw");
        patterns.push_back(std::move(best));
    }

    int next_pattern = 0;
    for (int i = 0; i < spec.static_concepts; ++i) {
        ConceptDef c;
        c.train_name = wordbank::static_names()[i].train_name;
        c.open_name = wordbank::static_names()[i].open_name;
        c.pattern_a = patterns[next_pattern++];
        for (auto& v : c.pattern_a) v *= spec.static_amp;
        m.concepts.push_back(std::move(c));
    }
    for (int i = 0; i < spec.temporal_concepts; ++i) {
        ConceptDef c;
        c.train_name = wordbank::temporal_names()[i].train_name;
        c.open_name = wordbank::temporal_names()[i].open_name;
        c.temporal = true;
        c.period = (i % 2 == 0) ? 2 : 4;
        if (i % 2 == 0) {
            c.pattern_a = patterns[next_pattern++];
            c.pattern_b = patterns[next_pattern++];
            for (auto& v : c.pattern_a) v *= spec.temporal_amp;
            for (auto& v : c.pattern_b) v *= spec.temporal_amp;
        } else {
            // pair partner: same patterns, different period
            c.pattern_a = m.concepts.back().pattern_a;
            c.pattern_b = m.concepts.back().pattern_b;
        }
        m.concepts.push_back(std::move(c));
    }

    for (const auto& c : m.concepts) m.vocabulary.push_back(c.train_name);
    for (const auto& c : m.concepts) m.open_vocabulary.push_back(c.open_name);

    const int n_concepts = spec.concepts();
    auto partner_of = [&](int c) {
        if (!m.concepts[c].temporal) return -1;
        const int t = c - spec.static_concepts;
        return spec.static_concepts + (t % 2 == 0 ? t + 1 : t - 1);
    };

    auto sample_video = [&](const std::string& id, const std::string& split, bool open_names) {
        VideoRecord v;
        v.id = id;
        v.split = split;
        const int span = spec.max_labels_per_video - spec.min_labels_per_video + 1;
        const int want = spec.min_labels_per_video + static_cast<int>(rng.next_below(span));
        std::set<int> chosen;
        int guard = 0;
        while (static_cast<int>(chosen.size()) < want && guard++ < 1000) {
            const int c = static_cast<int>(rng.next_below(n_concepts));
            if (chosen.count(c)) continue;
            const int partner = partner_of(c);
            if (partner >= 0 && chosen.count(partner)) continue;  // pair members never co-occur
            chosen.insert(c);
        }
        for (int c : chosen) {
            v.concepts.push_back(c);
            const int period = m.concepts[c].temporal ? m.concepts[c].period : 1;
            v.phase_offsets.push_back(static_cast<int>(rng.next_below(period)));
            v.labels.push_back(open_names ? m.concepts[c].open_name : m.concepts[c].train_name);
        }
        v.noise_seed = rng.next_u64();
        return v;
    };

    int counter = 0;
    for (int i = 0; i < spec.train_videos; ++i)
        m.videos.push_back(sample_video("train_" + std::to_string(counter++), "train", false));
    for (int i = 0; i < spec.val_videos; ++i)
        m.videos.push_back(sample_video("val_" + std::to_string(counter++), "val", false));
    for (int i = 0; i < spec.test_closed_videos; ++i)
        m.videos.push_back(
            sample_video("closed_" + std::to_string(counter++), "test_closed", false));
    for (int i = 0; i < spec.test_open_videos; ++i)
        m.videos.push_back(sample_video("open_" + std::to_string(counter++), "test_open", true));
    return m;
}

// Temporal rendering: a concept with period P alternates its two patterns,
// spending P/2 consecutive frames on each; the per-video phase offset
// rotates the schedule.
inline const std::vector<double>& temporal_pattern_at(const ConceptDef& c, int frame, int offset) {
    const int phase = (frame + offset) % c.period;
    return phase < c.period / 2 ? c.pattern_a : c.pattern_b;
}

template <typename T>
std::vector<std::vector<T>> materialize_frames(const DatasetManifest& m, const VideoRecord& v) {
    const auto& spec = m.spec;
    std::vector<std::vector<T>> frames(spec.frames_per_video,
                                       std::vector<T>(spec.patches(), T(0)));
    for (int f = 0; f < spec.frames_per_video; ++f) {
        for (std::size_t ci = 0; ci < v.concepts.size(); ++ci) {
            const ConceptDef& c = m.concepts[v.concepts[ci]];
            const std::vector<double>& pat =
                c.temporal ? temporal_pattern_at(c, f, v.phase_offsets[ci]) : c.pattern_a;
            for (int p = 0; p < spec.patches(); ++p)
                frames[f][p] += static_cast<T>(pat[p]);
        }
    }
    if (spec.noise > 0.0) {
        Rng noise(v.noise_seed);
        for (int f = 0; f < spec.frames_per_video; ++f)
            for (int p = 0; p < spec.patches(); ++p)
                frames[f][p] += static_cast<T>(noise.normal() * spec.noise);
    }
    return frames;
}

// Raw float tensor file for file-backed frames: u32 frame count, u32
// patches, then f32 values row-major (little-endian, as the checkpoint).
template <typename T>
void save_frames_file(const std::vector<std::vector<T>>& frames, const std::string& path) {
    std::string out;
    auto put_u32 = [&out](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put_u32(static_cast<std::uint32_t>(frames.size()));
    put_u32(frames.empty() ? 0 : static_cast<std::uint32_t>(frames[0].size()));
    for (const auto& f : frames)
        for (T v : f) {
            float fv = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &fv, 4);
            put_u32(bits);
        }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write frames file: " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

template <typename T>
std::vector<std::vector<T>> load_frames_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open frames file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto get_u32 = [&]() {
        if (pos + 4 > bytes.size()) throw std::runtime_error("truncated frames file: " + path);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    };
    const std::uint32_t count = get_u32();
    const std::uint32_t patches = get_u32();
    std::vector<std::vector<T>> frames(count, std::vector<T>(patches));
    for (auto& f : frames)
        for (auto& v : f) {
            const std::uint32_t bits = get_u32();
            float fv;
            std::memcpy(&fv, &bits, 4);
            v = static_cast<T>(fv);
        }
    return frames;
}

template <typename T>
std::vector<std::vector<T>> video_frames(const DatasetManifest& m, const VideoRecord& v) {
    if (!v.frame_file.empty()) return load_frames_file<T>(v.frame_file);
    return materialize_frames<T>(m, v);
}

// Words needed to tokenize every label (train and open) in the manifest.
inline std::vector<std::string> dataset_words(const DatasetManifest& m) {
    std::vector<std::string> words;
    for (const auto& c : m.concepts) {
        for (const auto& w : Tokenizer::split_normalized(c.train_name)) words.push_back(w);
        for (const auto& w : Tokenizer::split_normalized(c.open_name)) words.push_back(w);
    }
    return words;
}

// ---- persistence ----

inline void save_manifest(const DatasetManifest& m, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        nlohmann::ordered_json j;
        j["spec"] = {{"grid", m.spec.grid},
                     {"static_concepts", m.spec.static_concepts},
                     {"temporal_concepts", m.spec.temporal_concepts},
                     {"frames_per_video", m.spec.frames_per_video},
                     {"train_videos", m.spec.train_videos},
                     {"val_videos", m.spec.val_videos},
                     {"test_closed_videos", m.spec.test_closed_videos},
                     {"test_open_videos", m.spec.test_open_videos},
                     {"min_labels_per_video", m.spec.min_labels_per_video},
                     {"max_labels_per_video", m.spec.max_labels_per_video},
                     {"noise", m.spec.noise},
                     {"static_amp", m.spec.static_amp},
                     {"temporal_amp", m.spec.temporal_amp},
                     {"seed", m.spec.seed}};
        j["concepts"] = nlohmann::ordered_json::array();
        for (const auto& c : m.concepts) {
            nlohmann::ordered_json cj;
            cj["train_name"] = c.train_name;
            cj["open_name"] = c.open_name;
            cj["temporal"] = c.temporal;
            cj["period"] = c.period;
            cj["pattern_a"] = c.pattern_a;
            cj["pattern_b"] = c.pattern_b;
            j["concepts"].push_back(cj);
        }
        std::ofstream out(std::filesystem::path(dir) / "dataset.json", std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write dataset.json");
        out << j.dump(2) << '\n';
    }
    {
        std::ofstream out(std::filesystem::path(dir) / "manifest.jsonl", std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write manifest.jsonl");
        for (const auto& v : m.videos) {
            nlohmann::ordered_json j;
            j["video"] = v.id;
            if (v.frame_file.empty()) {
                j["source"] = {{"kind", "synthetic"},
                               {"concepts", v.concepts},
                               {"phase_offsets", v.phase_offsets},
                               {"noise_seed", v.noise_seed}};
            } else {
                j["source"] = {{"kind", "file"}, {"path", v.frame_file}};
            }
            j["labels"] = v.labels;
            j["split"] = v.split;
            out << j.dump() << '\n';
        }
    }
    {
        std::ofstream out(std::filesystem::path(dir) / "vocab.txt", std::ios::trunc);
        for (const auto& l : m.vocabulary) out << l << '\n';
    }
    {
        std::ofstream out(std::filesystem::path(dir) / "open_vocab.txt", std::ios::trunc);
        for (const auto& l : m.open_vocabulary) out << l << '\n';
    }
}

inline DatasetManifest load_manifest(const std::string& dir) {
    DatasetManifest m;
    {
        std::ifstream in(std::filesystem::path(dir) / "dataset.json");
        if (!in) throw std::runtime_error("cannot open dataset.json in " + dir);
        auto j = nlohmann::json::parse(in);
        const auto& s = j.at("spec");
        m.spec.grid = s.at("grid");
        m.spec.static_concepts = s.at("static_concepts");
        m.spec.temporal_concepts = s.at("temporal_concepts");
        m.spec.frames_per_video = s.at("frames_per_video");
        m.spec.train_videos = s.at("train_videos");
        m.spec.val_videos = s.at("val_videos");
        m.spec.test_closed_videos = s.at("test_closed_videos");
        m.spec.test_open_videos = s.at("test_open_videos");
        m.spec.min_labels_per_video = s.at("min_labels_per_video");
        m.spec.max_labels_per_video = s.at("max_labels_per_video");
        m.spec.noise = s.at("noise");
        m.spec.static_amp = s.at("static_amp");
        m.spec.temporal_amp = s.at("temporal_amp");
        m.spec.seed = s.at("seed");
        for (const auto& cj : j.at("concepts")) {
            ConceptDef c;
            c.train_name = cj.at("train_name");
            c.open_name = cj.at("open_name");
            c.temporal = cj.at("temporal");
            c.period = cj.at("period");
            c.pattern_a = cj.at("pattern_a").get<std::vector<double>>();
            c.pattern_b = cj.at("pattern_b").get<std::vector<double>>();
            m.concepts.push_back(std::move(c));
        }
    }
    {
        std::ifstream in(std::filesystem::path(dir) / "manifest.jsonl");
        if (!in) throw std::runtime_error("cannot open manifest.jsonl in " + dir);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            VideoRecord v;
            v.id = j.at("video");
            v.split = j.at("split");
            v.labels = j.at("labels").get<std::vector<std::string>>();
            const auto& src = j.at("source");
            if (src.at("kind") == "synthetic") {
                v.concepts = src.at("concepts").get<std::vector<int>>();
                v.phase_offsets = src.at("phase_offsets").get<std::vector<int>>();
                v.noise_seed = src.at("noise_seed");
            } else {
                v.frame_file = src.at("path");
            }
            m.videos.push_back(std::move(v));
        }
    }
    auto read_lines = [&](const char* name) {
        std::vector<std::string> out;
        std::ifstream in(std::filesystem::path(dir) / name);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) out.push_back(line);
        return out;
    };
    m.vocabulary = read_lines("vocab.txt");
    m.open_vocabulary = read_lines("open_vocab.txt");
    return m;
}

}  // namespace ovml
