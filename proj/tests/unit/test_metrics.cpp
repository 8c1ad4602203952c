#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "ovml/metrics.hpp"
#include "ovml/rng.hpp"

using namespace ovml;

namespace {

ScoredPairSet make_pairs(const std::vector<double>& scores, const std::vector<int>& truths) {
    ScoredPairSet s;
    s.dataset = "fixture";
    for (std::size_t i = 0; i < scores.size(); ++i)
        s.records.push_back({"v" + std::to_string(i), "l", scores[i], truths[i]});
    return s;
}

// Independent oracle: rebuild the confusion matrix from scratch at every
// distinct score and integrate average precision in the same high-to-low
// threshold order.
double oracle_aupr(const ScoredPairSet& pairs) {
    std::set<double, std::greater<double>> thresholds;
    for (const auto& r : pairs.records) thresholds.insert(r.score);
    long positives = 0;
    for (const auto& r : pairs.records) positives += r.truth ? 1 : 0;
    double area = 0.0;
    double prev_recall = 0.0;
    for (double t : thresholds) {
        long tp = 0, fp = 0;
        for (const auto& r : pairs.records) {
            if (r.score >= t) {
                if (r.truth)
                    ++tp;
                else
                    ++fp;
            }
        }
        const double recall = static_cast<double>(tp) / positives;
        const double precision = static_cast<double>(tp) / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

double oracle_peak_f1(const ScoredPairSet& pairs) {
    std::set<double> distinct;
    for (const auto& r : pairs.records) distinct.insert(r.score);
    std::vector<double> grid(distinct.begin(), distinct.end());
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i + 1 < n; ++i) grid.push_back((grid[i] + grid[i + 1]) / 2.0);
    double best = 0.0;
    for (double t : grid) {
        long tp = 0, fp = 0, fn = 0;
        for (const auto& r : pairs.records) {
            const bool pred = r.score >= t;
            if (pred && r.truth) ++tp;
            if (pred && !r.truth) ++fp;
            if (!pred && r.truth) ++fn;
        }
        const long denom = 2 * tp + fp + fn;
        best = std::max(best, denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom));
    }
    return best;
}

ScoredPairSet random_instance(Rng& rng) {
    const int n = 2 + static_cast<int>(rng.next_below(199));
    std::vector<double> scores(n);
    std::vector<int> truths(n);
    bool any_pos = false;
    for (int i = 0; i < n; ++i) {
        // quantized scores produce frequent ties
        scores[i] = std::floor(rng.next_double() * 20.0) / 20.0;
        truths[i] = rng.next_double() < 0.3 ? 1 : 0;
        any_pos = any_pos || truths[i] == 1;
    }
    if (!any_pos) truths[static_cast<std::size_t>(rng.next_below(n))] = 1;
    return make_pairs(scores, truths);
}

}  // namespace

TEST_CASE("pr curve hand example") {
    auto pairs = make_pairs({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
    auto curve = pr_curve(pairs);
    REQUIRE(curve.points.size() == 4);

    bool has_half = false, has_full = false;
    for (const auto& p : curve.points) {
        if (p.recall == doctest::Approx(0.5) && p.precision == doctest::Approx(1.0))
            has_half = true;
        if (p.recall == doctest::Approx(1.0) && p.precision == doctest::Approx(2.0 / 3.0))
            has_full = true;
    }
    CHECK(has_half);
    CHECK(has_full);

    SUBCASE("aupr matches the hand enumeration") {
        CHECK(aupr(curve) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-12));
    }

    SUBCASE("f1 sweep values at the quoted thresholds") {
        auto f1s = f1_sweep(pairs, {0.25, 0.5, 0.85});
        CHECK(f1s[0] == doctest::Approx(0.8));
        CHECK(f1s[1] == doctest::Approx(0.5));
        CHECK(f1s[2] == doctest::Approx(2.0 / 3.0));
        CHECK(peak_f1(pairs).f1 == doctest::Approx(0.8));
    }
}

TEST_CASE("pr curve edge cases") {
    SUBCASE("perfect ranking keeps precision 1 everywhere and aupr 1") {
        auto pairs = make_pairs({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
        auto curve = pr_curve(pairs);
        for (const auto& p : curve.points)
            if (p.recall <= 1.0 && p.threshold >= 0.8) CHECK(p.precision == doctest::Approx(1.0));
        CHECK(aupr(curve) == doctest::Approx(1.0));
    }

    SUBCASE("all-tied scores give a single point at prevalence") {
        auto pairs = make_pairs({0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 1});
        auto curve = pr_curve(pairs);
        REQUIRE(curve.points.size() == 1);
        CHECK(curve.points[0].recall == doctest::Approx(1.0));
        CHECK(curve.points[0].precision == doctest::Approx(0.5));
    }

    SUBCASE("zero positives is an error") {
        auto pairs = make_pairs({0.5, 0.4}, {0, 0});
        CHECK_THROWS(pr_curve(pairs));
    }

    SUBCASE("recall is nondecreasing") {
        Rng rng(5);
        auto pairs = random_instance(rng);
        auto curve = pr_curve(pairs);
        for (std::size_t i = 1; i < curve.points.size(); ++i)
            CHECK(curve.points[i].recall >= curve.points[i - 1].recall);
    }
}

TEST_CASE("f1 threshold extremes") {
    auto pairs = make_pairs({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});

    SUBCASE("threshold below min predicts everything") {
        const double prevalence = 0.5;
        CHECK(f1_at(pairs, -2.0) ==
              doctest::Approx(2.0 * prevalence / (1.0 + prevalence)));
    }

    SUBCASE("threshold above max predicts nothing") { CHECK(f1_at(pairs, 2.0) == 0.0); }
}

TEST_CASE("oracle equivalence on random instances") {
    Rng rng(123);
    for (int i = 0; i < 300; ++i) {
        auto pairs = random_instance(rng);
        CHECK(aupr(pairs) == oracle_aupr(pairs));
        CHECK(peak_f1(pairs).f1 == oracle_peak_f1(pairs));
    }
}

TEST_CASE("metrics are invariant under monotone score transforms") {
    Rng rng(77);
    for (int i = 0; i < 25; ++i) {
        auto pairs = random_instance(rng);
        auto transformed = pairs;
        for (auto& r : transformed.records) {
            const double z = r.score / 0.05;
            r.score = 1.0 / (1.0 + std::exp(-z));
        }
        CHECK(aupr(pairs) == doctest::Approx(aupr(transformed)).epsilon(1e-12));
        CHECK(peak_f1(pairs).f1 == doctest::Approx(peak_f1(transformed).f1).epsilon(1e-12));
    }
}

TEST_CASE("peak f1 dominates the sweep") {
    Rng rng(31);
    auto pairs = random_instance(rng);
    const auto pk = peak_f1(pairs);
    for (double f1 : f1_sweep(pairs, threshold_grid(pairs))) CHECK(pk.f1 >= f1);
}

TEST_CASE("max-min threshold selection") {
    SUBCASE("single dataset reduces to peak f1") {
        auto pairs = make_pairs({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
        auto sel = select_threshold_maxmin({pairs});
        CHECK(f1_at(pairs, sel.threshold) == doctest::Approx(peak_f1(pairs).f1));
    }

    SUBCASE("duplicate dataset changes nothing") {
        auto pairs = make_pairs({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
        auto once = select_threshold_maxmin({pairs});
        auto twice = select_threshold_maxmin({pairs, pairs});
        CHECK(once.threshold == twice.threshold);
        CHECK(once.worst_f1 == twice.worst_f1);
    }

    SUBCASE("two datasets with disjoint optima select the lower envelope crossover") {
        // dataset A peaks at low thresholds, dataset B at high ones
        auto a = make_pairs({0.2, 0.15, 0.1, 0.05}, {1, 1, 0, 0});
        auto b = make_pairs({0.9, 0.8, 0.7, 0.6}, {1, 1, 0, 0});
        auto sel = select_threshold_maxmin({a, b});
        // any threshold in (0.15, 0.8] keeps both datasets at F1 = 1 for b
        // and predicts-all for a; the max-min optimum must beat using either
        // dataset's own peak on the other dataset
        const double fa = f1_at(a, sel.threshold);
        const double fb = f1_at(b, sel.threshold);
        CHECK(std::min(fa, fb) >= std::min(f1_at(a, 0.85), f1_at(b, 0.85)));
        CHECK(std::min(fa, fb) >= std::min(f1_at(a, 0.12), f1_at(b, 0.12)));
        for (double t : threshold_grid({&a, &b}))
            CHECK(std::min(f1_at(a, t), f1_at(b, t)) <= sel.worst_f1);
    }

    SUBCASE("ties break toward the lower threshold") {
        auto pairs = make_pairs({0.9, 0.1}, {1, 0});
        auto sel = select_threshold_maxmin({pairs});
        // every threshold in (0.1, 0.9] gives F1=1; the grid's lowest such
        // point is the midpoint 0.5
        CHECK(sel.threshold == doctest::Approx(0.5));
    }
}

TEST_CASE("macro aupr option") {
    ScoredPairSet s;
    s.dataset = "macro";
    s.records = {{"v1", "a", 0.9, 1}, {"v2", "a", 0.1, 0}, {"v1", "b", 0.2, 0}, {"v2", "b", 0.8, 1}};
    CHECK(aupr_macro(s) == doctest::Approx(1.0));
    CHECK(aupr(s) == doctest::Approx(1.0));
}

TEST_CASE("report emission") {
    auto a = make_pairs({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
    a.dataset = "alpha";
    auto b = make_pairs({0.7, 0.6, 0.2}, {1, 0, 1});
    b.dataset = "beta";
    std::vector<DatasetReport> reports = {dataset_report(a), dataset_report(b)};
    auto sel = select_threshold_maxmin({a, b});

    const std::string dir = "test_report_out";
    emit_report(reports, &sel, dir);

    SUBCASE("summary values match the metric functions exactly") {
        std::ifstream in(dir + "/metrics.json");
        auto j = nlohmann::json::parse(in);
        CHECK(j["datasets"][0]["aupr"].get<double>() == aupr(a));
        CHECK(j["datasets"][1]["aupr"].get<double>() == aupr(b));
        CHECK(j["datasets"][0]["peak_f1"].get<double>() == peak_f1(a).f1);
        CHECK(j["selected_threshold"]["threshold"].get<double>() == sel.threshold);
    }

    SUBCASE("rerun is byte identical") {
        const auto read = [&](const std::string& p) {
            std::ifstream in(p, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
        };
        const std::string json1 = read(dir + "/metrics.json");
        const std::string svg1 = read(dir + "/f1_curves.svg");
        emit_report(reports, &sel, dir);
        CHECK(read(dir + "/metrics.json") == json1);
        CHECK(read(dir + "/f1_curves.svg") == svg1);
        CHECK(svg1.find("<polyline") != std::string::npos);
        CHECK(svg1.find("stroke-dasharray") != std::string::npos);  // threshold marker
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("scored pairs JSONL round trip") {
    auto a = make_pairs({0.25, -0.5, 1.0}, {1, 0, 1});
    const std::string path = "test_pairs.jsonl";
    save_scored_pairs(a, path);
    auto b = load_scored_pairs(path, "fixture");
    REQUIRE(b.records.size() == a.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(b.records[i].video == a.records[i].video);
        CHECK(b.records[i].label == a.records[i].label);
        CHECK(b.records[i].score == a.records[i].score);
        CHECK(b.records[i].truth == a.records[i].truth);
    }
    std::filesystem::remove(path);
}

TEST_CASE("uniformly random scores approach prevalence aupr") {
    Rng rng(2024);
    ScoredPairSet s;
    s.dataset = "mc";
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        s.records.push_back({"v", "l", rng.next_double(), rng.next_double() < 0.2 ? 1 : 0});
    const double prevalence = static_cast<double>(s.positives()) / n;
    CHECK(std::abs(aupr(s) - prevalence) < 0.05 * prevalence + 0.02);
}
