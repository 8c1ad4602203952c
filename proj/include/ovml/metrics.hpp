#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ovml {

struct ScoredPair {
    std::string video;
    std::string label;
    double score = 0.0;
    int truth = 0;  // 1 positive, 0 negative
};

// Micro-averaged pool of (video, label) decisions for one dataset.
struct ScoredPairSet {
    std::string dataset;
    std::vector<ScoredPair> records;

    long positives() const {
        long p = 0;
        for (const auto& r : records) p += r.truth ? 1 : 0;
        return p;
    }
};

struct PRPoint {
    double threshold = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

struct PRCurve {
    std::vector<PRPoint> points;  // recall nondecreasing
    long total_positives = 0;
};

// Sweep distinct score thresholds from high to low; records tied on score
// enter the predicted set together.
inline PRCurve pr_curve(const ScoredPairSet& pairs) {
    const long pos = pairs.positives();
    if (pos == 0) throw std::runtime_error("undefined recall: no positive records");
    std::vector<const ScoredPair*> sorted;
    sorted.reserve(pairs.records.size());
    for (const auto& r : pairs.records) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredPair* a, const ScoredPair* b) { return a->score > b->score; });

    PRCurve curve;
    curve.total_positives = pos;
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        const double s = sorted[i]->score;
        while (i < sorted.size() && sorted[i]->score == s) {
            if (sorted[i]->truth)
                ++tp;
            else
                ++fp;
            ++i;
        }
        PRPoint pt;
        pt.threshold = s;
        pt.recall = static_cast<double>(tp) / static_cast<double>(pos);
        pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        curve.points.push_back(pt);
    }
    return curve;
}

// Average-precision (step) integration.
inline double aupr(const PRCurve& curve) {
    double area = 0.0;
    double prev_recall = 0.0;
    for (const auto& pt : curve.points) {
        area += (pt.recall - prev_recall) * pt.precision;
        prev_recall = pt.recall;
    }
    return area;
}

inline double aupr(const ScoredPairSet& pairs) { return aupr(pr_curve(pairs)); }

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0;
};

inline ConfusionCounts confusion_at(const ScoredPairSet& pairs, double threshold) {
    ConfusionCounts c;
    for (const auto& r : pairs.records) {
        const bool pred = r.score >= threshold;
        if (pred && r.truth)
            ++c.tp;
        else if (pred && !r.truth)
            ++c.fp;
        else if (!pred && r.truth)
            ++c.fn;
    }
    return c;
}

inline double f1_from_counts(const ConfusionCounts& c) {
    const long denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double f1_at(const ScoredPairSet& pairs, double threshold) {
    return f1_from_counts(confusion_at(pairs, threshold));
}

inline std::vector<double> f1_sweep(const ScoredPairSet& pairs, const std::vector<double>& grid) {
    std::vector<double> out;
    out.reserve(grid.size());
    for (double t : grid) out.push_back(f1_at(pairs, t));
    return out;
}

// All distinct scores plus midpoints between neighbours: the exact peak on
// finite data lies on this grid.
inline std::vector<double> threshold_grid(const std::vector<const ScoredPairSet*>& sets) {
    std::set<double> scores;
    for (const auto* s : sets)
        for (const auto& r : s->records) scores.insert(r.score);
    std::vector<double> grid(scores.begin(), scores.end());
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i + 1 < n; ++i) grid.push_back((grid[i] + grid[i + 1]) / 2.0);
    std::sort(grid.begin(), grid.end());
    return grid;
}

inline std::vector<double> threshold_grid(const ScoredPairSet& pairs) {
    return threshold_grid(std::vector<const ScoredPairSet*>{&pairs});
}

struct PeakF1Result {
    double f1 = 0.0;
    double threshold = 0.0;
};

inline PeakF1Result peak_f1(const ScoredPairSet& pairs) {
    if (pairs.positives() == 0) throw std::runtime_error("peak_f1: no positive records");
    PeakF1Result best;
    bool first = true;
    for (double t : threshold_grid(pairs)) {
        const double f1 = f1_at(pairs, t);
        if (first || f1 > best.f1) {
            best.f1 = f1;
            best.threshold = t;
            first = false;
        }
    }
    return best;
}

// Per-class macro averaging option: metric computed per label, averaged.
inline double aupr_macro(const ScoredPairSet& pairs) {
    std::map<std::string, ScoredPairSet> by_label;
    for (const auto& r : pairs.records) {
        auto& s = by_label[r.label];
        s.dataset = r.label;
        s.records.push_back(r);
    }
    double sum = 0.0;
    int counted = 0;
    for (auto& [label, s] : by_label) {
        if (s.positives() == 0) continue;  // undefined for all-negative classes
        sum += aupr(s);
        ++counted;
    }
    if (counted == 0) throw std::runtime_error("undefined recall: no positive records");
    return sum / counted;
}

struct ThresholdSelection {
    double threshold = 0.0;
    double worst_f1 = 0.0;
    std::vector<double> per_dataset_f1;
};

// Picks the grid threshold maximizing the minimum F1 across validation
// datasets; ties break toward the lower threshold.
inline ThresholdSelection select_threshold_maxmin(const std::vector<ScoredPairSet>& datasets,
                                                  std::vector<double> grid = {}) {
    if (datasets.empty()) throw std::invalid_argument("select_threshold_maxmin: no datasets");
    if (grid.empty()) {
        std::vector<const ScoredPairSet*> ptrs;
        for (const auto& d : datasets) ptrs.push_back(&d);
        grid = threshold_grid(ptrs);
    }
    ThresholdSelection best;
    bool first = true;
    for (double t : grid) {
        double worst = 1.0;
        for (const auto& d : datasets) worst = std::min(worst, f1_at(d, t));
        if (first || worst > best.worst_f1) {
            best.threshold = t;
            best.worst_f1 = worst;
            first = false;
        }
    }
    best.per_dataset_f1.clear();
    for (const auto& d : datasets) best.per_dataset_f1.push_back(f1_at(d, best.threshold));
    return best;
}

// ---- scored-pairs JSONL ----

inline void save_scored_pairs(const ScoredPairSet& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write scored pairs: " + path);
    for (const auto& r : pairs.records) {
        nlohmann::ordered_json j;
        j["video"] = r.video;
        j["label"] = r.label;
        j["score"] = r.score;
        j["truth"] = r.truth;
        out << j.dump() << '\n';
    }
}

inline ScoredPairSet load_scored_pairs(const std::string& path, const std::string& dataset = "") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scored pairs: " + path);
    ScoredPairSet set;
    set.dataset = dataset.empty() ? std::filesystem::path(path).stem().string() : dataset;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        ScoredPair r;
        r.video = j.at("video").get<std::string>();
        r.label = j.at("label").get<std::string>();
        r.score = j.at("score").get<double>();
        r.truth = j.at("truth").get<int>();
        set.records.push_back(std::move(r));
    }
    return set;
}

// ---- report emission ----

struct DatasetReport {
    std::string dataset;
    double aupr = 0.0;
    double peak_f1 = 0.0;
    double peak_threshold = 0.0;
    std::vector<double> grid;
    std::vector<double> f1_curve;
};

inline DatasetReport dataset_report(const ScoredPairSet& pairs) {
    DatasetReport r;
    r.dataset = pairs.dataset;
    r.aupr = aupr(pairs);
    const auto pk = peak_f1(pairs);
    r.peak_f1 = pk.f1;
    r.peak_threshold = pk.threshold;
    r.grid = threshold_grid(pairs);
    r.f1_curve = f1_sweep(pairs, r.grid);
    return r;
}

// One F1-vs-threshold polyline per dataset plus a vertical marker at the
// selected global threshold.
inline std::string render_f1_curves_svg(const std::vector<DatasetReport>& reports,
                                        double selected_threshold, bool has_selection) {
    const int w = 640, h = 420, ml = 60, mr = 20, mt = 20, mb = 50;
    double tmin = 0.0, tmax = 1.0;
    bool first = true;
    for (const auto& r : reports)
        for (double t : r.grid) {
            if (first) {
                tmin = tmax = t;
                first = false;
            }
            tmin = std::min(tmin, t);
            tmax = std::max(tmax, t);
        }
    if (tmax <= tmin) tmax = tmin + 1.0;
    auto sx = [&](double t) { return ml + (t - tmin) / (tmax - tmin) * (w - ml - mr); };
    auto sy = [&](double f1) { return h - mb - f1 * (h - mt - mb); };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << (w / 2) << "\" y=\"" << h - 12
        << "\" text-anchor=\"middle\" font-size=\"14\">threshold</text>\n";
    svg << "<text x=\"16\" y=\"" << (h / 2)
        << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 " << (h / 2)
        << ")\">F1</text>\n";
    int ci = 0;
    for (const auto& r : reports) {
        svg << "<polyline fill=\"none\" stroke=\"" << colors[ci % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < r.grid.size(); ++i)
            svg << sx(r.grid[i]) << "," << sy(r.f1_curve[i]) << " ";
        svg << "\"/>\n";
        svg << "<text x=\"" << w - mr - 8 << "\" y=\"" << mt + 16 + 16 * ci
            << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << colors[ci % 6] << "\">"
            << r.dataset << "</text>\n";
        ++ci;
    }
    if (has_selection) {
        svg << "<line x1=\"" << sx(selected_threshold) << "\" y1=\"" << mt << "\" x2=\""
            << sx(selected_threshold) << "\" y2=\"" << h - mb
            << "\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

inline nlohmann::ordered_json metrics_summary_json(const std::vector<DatasetReport>& reports,
                                                   const ThresholdSelection* selection) {
    nlohmann::ordered_json j;
    j["datasets"] = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json d;
        d["dataset"] = r.dataset;
        d["aupr"] = r.aupr;
        d["peak_f1"] = r.peak_f1;
        d["peak_threshold"] = r.peak_threshold;
        j["datasets"].push_back(d);
    }
    if (selection) {
        nlohmann::ordered_json s;
        s["threshold"] = selection->threshold;
        s["worst_f1"] = selection->worst_f1;
        s["per_dataset_f1"] = selection->per_dataset_f1;
        j["selected_threshold"] = s;
    }
    return j;
}

// Writes metrics.json and f1_curves.svg into out_dir.
inline void emit_report(const std::vector<DatasetReport>& reports,
                        const ThresholdSelection* selection, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto json_path = std::filesystem::path(out_dir) / "metrics.json";
    {
        std::ofstream out(json_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + json_path.string());
        out << metrics_summary_json(reports, selection).dump(2) << '\n';
    }
    const auto svg_path = std::filesystem::path(out_dir) / "f1_curves.svg";
    {
        std::ofstream out(svg_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + svg_path.string());
        out << render_f1_curves_svg(reports, selection ? selection->threshold : 0.0,
                                    selection != nullptr);
    }
}

}  // namespace ovml
