#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovml/backbones.hpp"
#include "ovml/label_encoder.hpp"
#include "ovml/rng.hpp"
#include "ovml/synth_data.hpp"
#include "ovml/tokenizer.hpp"

namespace ovml {

// ---------------------------------------------------------------------------
// Stage records
// ---------------------------------------------------------------------------

struct CaptionRecord {
    std::string video;
    std::vector<std::string> captions;  // ordered frame captions, >= 1
};

struct ConceptRecord {
    std::string video;
    std::vector<std::string> concepts;  // normalized, duplicates allowed pre-dedup
};

struct VocabRecord {
    std::string label;
    long frequency = 0;
    int cluster = -1;
};

struct AssignmentRecord {
    std::string video;
    std::vector<std::string> labels;
};

// ---------------------------------------------------------------------------
// Pluggable model interfaces with deterministic stubs
// ---------------------------------------------------------------------------

class TextCompleter {
public:
    virtual ~TextCompleter() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual std::vector<double> embed(const std::string& text) = 0;  // unit norm
};

// The in-context extraction prompt: three worked examples, then the target
// video's captions.
inline std::string extraction_prompt_header() {
    return "Following is the description of a video. Output a numbered list of verbs "
           "representing visual actions performed in the video. Do not add any explanation.\n";
}

inline std::string render_extraction_prompt(const CaptionRecord& captions) {
    std::ostringstream p;
    p << extraction_prompt_header() << "\nVideo 1 description:\n"
      << "1. A group of people riding motorcycles at night.\n"
      << "2. A motorcycle is lit up with blue lights.\n"
      << "3. A person is riding a bike at night.\n"
      << "4. A motorcycle parked on the street at night.\n"
      << "5. A group of people are gathered in a dimly lit room.\n"
      << "6. A motorcycle parked in a dark room.\n"
      << "7. A motorcycle is parked in a dark room.\n"
      << "8. A person is riding a bike at night.\n"
      << "\nVerbs Found:\n1. riding motorcycle\n2. riding bike\n\n"
      << extraction_prompt_header() << "\nVideo 2 description:\n"
      << "1. A man is performing on stage with a band.\n"
      << "2. A group of men are performing on a stage.\n"
      << "3. A man with a microphone is performing on stage.\n"
      << "4. A group of young men performing on stage.\n"
      << "5. A man is singing on a stage with a band.\n"
      << "6. A man is playing a guitar on a stage.\n"
      << "7. A man and a woman are performing on stage.\n"
      << "8. A dark room with a bright light shining on it.\n"
      << "\nVerbs Found:\n1. performing on stage\n2. singing on stage\n3. playing guitar\n\n"
      << extraction_prompt_header() << "\nVideo 3 description:\n"
      << "1. A person is putting lotion on another person's hand.\n"
      << "2. A person is putting nail polish on another person's nails.\n"
      << "3. A person is putting nail polish on their nails.\n"
      << "4. A person is holding a ball point pen.\n"
      << "5. A person is writing on a piece of paper.\n"
      << "6. A person is holding another person's hand.\n"
      << "7. A person is putting a ring on another person's finger.\n"
      << "8. A black screen with a white frame.\n"
      << "\nVerbs Found:\n1. putting lotion\n2. putting nail polish\n3. writing\n4. putting ring\n\n"
      << extraction_prompt_header() << "\nVideo 4 description:\n";
    for (std::size_t i = 0; i < captions.captions.size(); ++i)
        p << (i + 1) << ". " << captions.captions[i] << "\n";
    p << "\nVerbs Found:\n";
    return p.str();
}

// Parses a completion as a numbered list; non-list lines are ignored and
// items are lowercased and trimmed.
inline std::vector<std::string> parse_numbered_completion(const std::string& completion) {
    std::vector<std::string> items;
    std::istringstream in(completion);
    std::string line;
    while (std::getline(in, line)) {
        std::size_t i = 0;
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t d = i;
        while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
        if (d == i) continue;  // no leading number: not a list item
        if (d < line.size() && (line[d] == '.' || line[d] == ')')) ++d;
        std::string item = line.substr(d);
        std::string cleaned;
        for (char c : item) cleaned.push_back(static_cast<char>(std::tolower(
                                static_cast<unsigned char>(c))));
        const auto first = cleaned.find_first_not_of(" \t\r");
        const auto last = cleaned.find_last_not_of(" \t\r");
        if (first == std::string::npos) continue;
        items.push_back(cleaned.substr(first, last - first + 1));
    }
    return items;
}

// Stage 2: concept extraction. Unparseable completions yield an empty list
// and a warning; the corpus run never aborts.
inline ConceptRecord extract_concepts(const CaptionRecord& captions, TextCompleter& extractor,
                                      const std::function<void(const std::string&)>& warn = {}) {
    if (captions.captions.empty()) throw std::invalid_argument("caption record without captions");
    ConceptRecord out;
    out.video = captions.video;
    const std::string completion = extractor.complete(render_extraction_prompt(captions));
    out.concepts = parse_numbered_completion(completion);
    if (out.concepts.empty() && warn)
        warn("no concepts parsed for video " + captions.video);
    return out;
}

// Deterministic keyword-table extractor stub: emits a numbered list of the
// table concepts whose keyword occurs in the target captions.
class StubKeywordCompleter : public TextCompleter {
public:
    explicit StubKeywordCompleter(std::vector<std::pair<std::string, std::string>> table)
        : table_(std::move(table)) {}

    std::string complete(const std::string& prompt) override {
        const std::string marker = "Video 4 description:";
        auto at = prompt.rfind(marker);
        if (at == std::string::npos) return "";
        std::string section = prompt.substr(at + marker.size());
        const auto stop = section.find("Verbs Found:");
        if (stop != std::string::npos) section = section.substr(0, stop);
        std::string lowered;
        for (char c : section)
            lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        std::ostringstream out;
        int n = 0;
        std::set<std::string> seen;
        for (const auto& [keyword, concept_name] : table_) {
            if (lowered.find(keyword) == std::string::npos) continue;
            if (!seen.insert(concept_name).second) continue;
            out << ++n << ". " << concept_name << "\n";
        }
        return out.str();
    }

private:
    std::vector<std::pair<std::string, std::string>> table_;
};

// Deterministic synonym-aware embedder stub: each word maps through a
// synonym table to a stem, and the text embeds as the normalized sum of the
// stems' hash vectors. Synonymous phrases land close together.
class StubSynonymEmbedder : public TextEmbedder {
public:
    StubSynonymEmbedder(int dim, std::map<std::string, std::string> synonyms)
        : dim_(dim), synonyms_(std::move(synonyms)) {}

    std::vector<double> embed(const std::string& text) override {
        std::vector<double> acc(dim_, 0.0);
        for (const auto& word : Tokenizer::split_normalized(text)) {
            auto it = synonyms_.find(word);
            const std::string& stem = it == synonyms_.end() ? word : it->second;
            Rng rng(fnv1a64(stem));
            for (int i = 0; i < dim_; ++i) acc[i] += rng.normal();
        }
        double norm = 0;
        for (double v : acc) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0) {
            acc.assign(dim_, 0.0);
            acc[0] = 1.0;
            return acc;
        }
        for (double& v : acc) v /= norm;
        return acc;
    }

private:
    int dim_;
    std::map<std::string, std::string> synonyms_;
};

// Embedder backed by the toy text encoder.
template <typename T>
class ClipTextEmbedder : public TextEmbedder {
public:
    ClipTextEmbedder(const ToyTextEncoder<T>& enc, const Tokenizer& tok)
        : enc_(&enc), tok_(&tok) {}

    std::vector<double> embed(const std::string& text) override {
        Tape<T> tape;
        auto e = enc_->encode_text(tape, tok_->tokenize(text));
        std::vector<double> out(tape.value(e).numel());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<double>(tape.value(e)[i]);
        return out;
    }

private:
    const ToyTextEncoder<T>* enc_;
    const Tokenizer* tok_;
};

// Stage 3a: one unit vector per distinct concept, in first-seen order.
inline std::pair<std::vector<std::string>, std::vector<std::vector<double>>> embed_concepts(
    const std::vector<std::string>& concepts, TextEmbedder& embedder) {
    std::vector<std::string> distinct;
    std::set<std::string> seen;
    for (const auto& c : concepts)
        if (seen.insert(c).second) distinct.push_back(c);
    std::vector<std::vector<double>> vectors;
    vectors.reserve(distinct.size());
    for (const auto& c : distinct) {
        auto v = embedder.embed(c);
        double norm = 0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 0)
            for (double& x : v) x /= norm;
        vectors.push_back(std::move(v));
    }
    return {distinct, vectors};
}

struct KMeansResult {
    std::vector<int> assignment;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
    int iterations = 0;
};

// Lloyd iterations with k-means++ seeding; stops at an assignment fixpoint
// or max_iters.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& vectors, int k,
                           std::uint64_t seed, int max_iters = 100) {
    const int n = static_cast<int>(vectors.size());
    if (k <= 0) throw std::invalid_argument("kmeans: k must be positive");
    if (k > n) throw std::invalid_argument("kmeans: k exceeds point count");
    const int dim = n > 0 ? static_cast<int>(vectors[0].size()) : 0;
    auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (int i = 0; i < dim; ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        return s;
    };

    KMeansResult res;
    Rng rng(seed);
    res.centroids.push_back(vectors[static_cast<std::size_t>(rng.next_below(n))]);
    std::vector<double> best_d2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(res.centroids.size()) < k) {
        double total = 0;
        for (int i = 0; i < n; ++i) {
            best_d2[i] = std::min(best_d2[i], dist2(vectors[i], res.centroids.back()));
            total += best_d2[i];
        }
        int pick = 0;
        if (total > 0) {
            double target = rng.next_double() * total;
            for (int i = 0; i < n; ++i) {
                target -= best_d2[i];
                if (target <= 0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.next_below(n));
        }
        res.centroids.push_back(vectors[pick]);
    }

    res.assignment.assign(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(vectors[i], res.centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d = dist2(vectors[i], res.centroids[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (res.assignment[i] != best) {
                res.assignment[i] = best;
                changed = true;
            }
        }
        res.iterations = iter + 1;
        // recompute centroids; empty clusters grab the point farthest from
        // its current centroid
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            for (int d = 0; d < dim; ++d) sums[res.assignment[i]][d] += vectors[i][d];
            counts[res.assignment[i]]++;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                int far = 0;
                double fd = -1;
                for (int i = 0; i < n; ++i) {
                    const double d = dist2(vectors[i], res.centroids[res.assignment[i]]);
                    if (d > fd) {
                        fd = d;
                        far = i;
                    }
                }
                res.centroids[c] = vectors[far];
                res.assignment[far] = c;
                changed = true;
                counts[c] = 1;
            } else {
                for (int d = 0; d < dim; ++d) res.centroids[c][d] = sums[c][d] / counts[c];
            }
        }
        if (!changed) break;
    }
    res.inertia = 0;
    for (int i = 0; i < n; ++i) res.inertia += dist2(vectors[i], res.centroids[res.assignment[i]]);
    return res;
}

struct ClusterMap {
    std::map<std::string, int> concept_cluster;
    std::map<int, std::string> canonical;  // cluster id -> most frequent member
    int k = 0;

    std::vector<std::string> vocabulary() const {
        std::set<std::string> distinct;
        for (const auto& [c, name] : canonical) distinct.insert(name);
        return std::vector<std::string>(distinct.begin(), distinct.end());
    }

    // Projection onto canonical labels; unknown concepts map to themselves.
    std::string canonicalize(const std::string& concept_name) const {
        auto it = concept_cluster.find(concept_name);
        if (it == concept_cluster.end()) return concept_name;
        return canonical.at(it->second);
    }
};

// Stage 3b: canonical label per cluster by corpus frequency, ties to the
// lexicographically smallest member.
inline ClusterMap dedup_vocabulary(const std::vector<std::string>& concepts,
                                   const std::map<std::string, long>& frequency,
                                   const std::vector<int>& assignment) {
    if (concepts.size() != assignment.size())
        throw std::invalid_argument("dedup: concept/assignment size mismatch");
    ClusterMap out;
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        out.concept_cluster[concepts[i]] = assignment[i];
        out.k = std::max(out.k, assignment[i] + 1);
        auto freq_of = [&](const std::string& c) {
            auto it = frequency.find(c);
            return it == frequency.end() ? 0L : it->second;
        };
        auto it = out.canonical.find(assignment[i]);
        if (it == out.canonical.end()) {
            out.canonical[assignment[i]] = concepts[i];
        } else {
            const long fn = freq_of(concepts[i]);
            const long fc = freq_of(it->second);
            if (fn > fc || (fn == fc && concepts[i] < it->second)) it->second = concepts[i];
        }
    }
    return out;
}

// Stage 4: a label is assigned when the best caption similarity reaches
// min_sim; at most top_k labels per video, highest similarity first.
inline AssignmentRecord assign_labels(const CaptionRecord& captions,
                                      const std::vector<std::string>& vocabulary,
                                      TextEmbedder& embedder, int top_k, double min_sim) {
    if (vocabulary.empty()) throw std::invalid_argument("assign_labels: empty vocabulary");
    AssignmentRecord out;
    out.video = captions.video;
    std::vector<std::vector<double>> cap_embs;
    for (const auto& c : captions.captions) cap_embs.push_back(embedder.embed(c));
    std::vector<std::pair<double, std::string>> hits;
    for (const auto& label : vocabulary) {
        const auto lab = embedder.embed(classname_prompt_text(label));
        double best = -1.0;
        for (const auto& cap : cap_embs) {
            double cos = 0;
            for (std::size_t i = 0; i < lab.size() && i < cap.size(); ++i) cos += lab[i] * cap[i];
            best = std::max(best, cos);
        }
        if (best >= min_sim) hits.push_back({best, label});
    }
    std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (const auto& [sim, label] : hits) {
        if (top_k > 0 && static_cast<int>(out.labels.size()) >= top_k) break;
        out.labels.push_back(label);
    }
    return out;
}

// Stage 5: augmentation-only merge; assigned labels extend the originals.
inline DatasetManifest merge_manifests(const DatasetManifest& manifest,
                                       const std::vector<AssignmentRecord>& assignments) {
    DatasetManifest out = manifest;
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < out.videos.size(); ++i) by_id[out.videos[i].id] = i;
    std::set<std::string> vocab(out.vocabulary.begin(), out.vocabulary.end());
    for (const auto& a : assignments) {
        auto it = by_id.find(a.video);
        if (it == by_id.end()) throw std::runtime_error("unknown video id in assignments: " + a.video);
        auto& labels = out.videos[it->second].labels;
        std::set<std::string> have(labels.begin(), labels.end());
        for (const auto& l : a.labels) {
            if (have.insert(l).second) labels.push_back(l);
            if (vocab.insert(l).second) out.vocabulary.push_back(l);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSONL stage files
// ---------------------------------------------------------------------------

namespace stage_io {

template <typename Record>
void write_jsonl(const std::vector<Record>& records, const std::string& path,
                 const std::function<nlohmann::ordered_json(const Record&)>& to_json) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write stage file: " + path);
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline void save_captions(const std::vector<CaptionRecord>& recs, const std::string& path) {
    write_jsonl<CaptionRecord>(recs, path, [](const CaptionRecord& r) {
        nlohmann::ordered_json j;
        j["video"] = r.video;
        j["captions"] = r.captions;
        return j;
    });
}

inline std::vector<CaptionRecord> load_captions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open stage file: " + path);
    std::vector<CaptionRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        out.push_back({j.at("video"), j.at("captions").get<std::vector<std::string>>()});
    }
    return out;
}

inline void save_concepts(const std::vector<ConceptRecord>& recs, const std::string& path) {
    write_jsonl<ConceptRecord>(recs, path, [](const ConceptRecord& r) {
        nlohmann::ordered_json j;
        j["video"] = r.video;
        j["concepts"] = r.concepts;
        return j;
    });
}

inline std::vector<ConceptRecord> load_concepts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open stage file: " + path);
    std::vector<ConceptRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        out.push_back({j.at("video"), j.at("concepts").get<std::vector<std::string>>()});
    }
    return out;
}

inline void save_vocab(const std::vector<VocabRecord>& recs, const std::string& path) {
    write_jsonl<VocabRecord>(recs, path, [](const VocabRecord& r) {
        nlohmann::ordered_json j;
        j["label"] = r.label;
        j["frequency"] = r.frequency;
        j["cluster"] = r.cluster;
        return j;
    });
}

inline std::vector<VocabRecord> load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open stage file: " + path);
    std::vector<VocabRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        out.push_back({j.at("label"), j.at("frequency"), j.at("cluster")});
    }
    return out;
}

inline void save_assignments(const std::vector<AssignmentRecord>& recs, const std::string& path) {
    write_jsonl<AssignmentRecord>(recs, path, [](const AssignmentRecord& r) {
        nlohmann::ordered_json j;
        j["video"] = r.video;
        j["labels"] = r.labels;
        return j;
    });
}

inline std::vector<AssignmentRecord> load_assignments(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open stage file: " + path);
    std::vector<AssignmentRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        out.push_back({j.at("video"), j.at("labels").get<std::vector<std::string>>()});
    }
    return out;
}

}  // namespace stage_io

// Deterministic captioner for the synthetic testbed: one caption per
// concept plus a generic scene line.
inline CaptionRecord caption_synthetic_video(const DatasetManifest& manifest,
                                             const VideoRecord& video) {
    CaptionRecord rec;
    rec.video = video.id;
    for (const auto& label : video.labels) rec.captions.push_back("a video of " + label);
    rec.captions.push_back("a short clip recorded on a fixed camera");
    return rec;
}

}  // namespace ovml
