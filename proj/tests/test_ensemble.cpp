#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "treesense/ensemble.hpp"
#include "treesense/reductions.hpp"

using namespace treesense;
using namespace testing_support;

namespace {

const char* kStump = R"({"num_features": 1, "num_classes": 2,
  "trees": [{"root": {"feature": 0, "threshold": 0.5, "yes": {"leaf": 1.0}, "no": {"leaf": -1.0}}}]})";

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

TEST_CASE("load_model: stump and two-tree fixture") {
    const Ensemble s = load_model(kStump);
    CHECK(s.trees().size() == 1);
    CHECK(s.num_leaves() == 2);
    CHECK(s.is_binary());

    const Ensemble e = load_model(kTwoTreeModel);
    CHECK(e.trees().size() == 2);
    CHECK(e.num_leaves() == 8);
    CHECK(e.num_features() == 10);
    // Dense ids follow tree order then yes-first DFS.
    CHECK(e.leaf_value(0) == 2.0);
    CHECK(e.leaf_value(1) == -2.0);
    CHECK(e.leaf_value(4) == 0.5);
    CHECK(e.leaf_value(7) == -0.125);
}

TEST_CASE("load_model: validation errors") {
    CHECK_THROWS_AS(load_model("{"), Error);
    CHECK_THROWS_AS(load_model(R"({"num_features": 1, "trees": []})"), Error);
    CHECK_THROWS_AS(load_model(R"({"num_features": 10, "num_classes": 2,
        "trees": [{"root": {"feature": 99, "threshold": 1, "yes": {"leaf": 1}, "no": {"leaf": 0}}}]})"),
                    Error);
    CHECK_THROWS_AS(load_model(R"({"num_features": 1, "num_classes": 3,
        "trees": [{"class_id": 3, "root": {"leaf": 1}}]})"),
                    Error);
    CHECK_THROWS_AS(load_model(R"({"num_features": 1, "num_classes": 3, "trees": [{"root": {"leaf": 1}}]})"), Error);
    CHECK_THROWS_AS(load_model(R"({"num_features": 1, "num_classes": 2,
        "trees": [{"root": {"feature": 0, "threshold": 1, "yes": {"leaf": 1}}}]})"),
                    Error);
}

TEST_CASE("dump_model round-trips thresholds and leaves exactly") {
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        RandomSpec spec;
        spec.num_classes = i % 2 ? 3 : 2;
        const Ensemble e = random_ensemble(rng, spec);
        const Ensemble back = load_model(dump_model(e));
        REQUIRE(back.trees().size() == e.trees().size());
        CHECK(dump_model(back) == dump_model(e));
        for (int t = 0; t < 20; ++t) {
            std::vector<double> x(e.num_features());
            for (auto& v : x) v = uniform_int(rng, -1, 10);
            CHECK(raw_scores(back, x) == raw_scores(e, x));
        }
    }
}

TEST_CASE("raw_score examples") {
    const Ensemble s = load_model(kStump);
    const std::vector<double> x0{0.0};
    CHECK(raw_score(s, x0, 1) == 1.0);
    CHECK(raw_score(s, x0, 0) == -1.0);
    CHECK_THROWS_AS(raw_score(s, x0, 2), Error);

    const auto [ss, q] = gen_subsetsum_ensemble({{1, 2}, 3});
    const std::vector<double> ones{1, 1, 1};
    CHECK(raw_score(ss, ones, 1) == 0.5);

    // Stumps at 2 and 4 on the same feature, x = 3: no-leaf of the first plus yes-leaf of the second.
    const Ensemble two = load_model(R"({"num_features": 1, "num_classes": 2, "trees": [
        {"root": {"feature": 0, "threshold": 2, "yes": {"leaf": 1}, "no": {"leaf": 10}}},
        {"root": {"feature": 0, "threshold": 4, "yes": {"leaf": 100}, "no": {"leaf": 1000}}}]})");
    CHECK(raw_score(two, std::vector<double>{3.0}, 1) == 110.0);
    CHECK(raw_score(two, std::vector<double>{1.0}, 1) == 101.0);
    CHECK(raw_score(two, std::vector<double>{4.0}, 1) == 1010.0);
}

TEST_CASE("base_score shifts every class") {
    const Ensemble e = load_model(R"({"num_features": 1, "num_classes": 3, "base_score": 0.5, "trees": [
        {"class_id": 0, "root": {"leaf": 1}}, {"class_id": 2, "root": {"leaf": -1}}]})");
    const std::vector<double> x{0.0};
    CHECK(raw_scores(e, x) == std::vector<double>{1.5, 0.5, -0.5});
}

TEST_CASE("predict_prob examples") {
    const Ensemble zero = load_model(R"({"num_features": 1, "num_classes": 2, "trees": [{"root": {"leaf": 0}}]})");
    const auto p = predict_prob(zero, std::vector<double>{0.0});
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);

    const Ensemble ln3 = Ensemble({Tree{{Node{-1, 0, -1, -1, std::log(3.0)}}, 1}}, 1);
    const auto q = predict_prob(ln3, std::vector<double>{0.0});
    CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(0.75).epsilon(1e-12));

    const Ensemble multi = load_model(R"({"num_features": 1, "num_classes": 3, "trees": [
        {"class_id": 0, "root": {"leaf": 0}}, {"class_id": 1, "root": {"leaf": 0}}, {"class_id": 2, "root": {"leaf": 0}}]})");
    for (double v : predict_prob(multi, std::vector<double>{0.0})) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        RandomSpec spec;
        spec.num_classes = 2 + i % 3;
        spec.leaf_steps = 400;
        const Ensemble e = random_ensemble(rng, spec);
        std::vector<double> x(e.num_features());
        for (auto& v : x) v = uniform_int(rng, 0, 10);
        double sum = 0;
        for (double v : predict_prob(e, x)) sum += v;
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("evaluation rejects bad inputs") {
    const Ensemble s = load_model(kStump);
    CHECK_THROWS_AS(raw_scores(s, std::vector<double>{}), Error);
    CHECK_THROWS_AS(raw_scores(s, std::vector<double>{std::nan("")}), Error);
    CHECK_THROWS_AS(raw_scores(s, std::vector<double>{kInf}), Error);
}

TEST_CASE("guard index: dedup, sentinels, unconstrained features") {
    const Ensemble e = load_model(R"({"num_features": 2, "num_classes": 2, "trees": [
        {"root": {"feature": 0, "threshold": 2, "yes": {"leaf": 1}, "no": {"leaf": 0}}},
        {"root": {"feature": 0, "threshold": 2, "yes": {"leaf": 1}, "no": {"leaf": 0}}},
        {"root": {"feature": 0, "threshold": 5, "yes": {"leaf": 1}, "no": {"leaf": 0}}}]})");
    const GuardIndex gi(e);
    CHECK(gi.thresholds(0) == std::vector<double>{-kInf, 2, 5, kInf});
    CHECK(gi.interval_count(0) == 3);
    CHECK(gi.real_threshold_count(0) == 2);
    CHECK_FALSE(gi.guarded(1));
    CHECK(gi.interval_count(1) == 0);
    CHECK(gi.interval_of(0, 1.9) == 0);
    CHECK(gi.interval_of(0, 2.0) == 1);
    CHECK(gi.interval_of(0, 4.999) == 1);
    CHECK(gi.interval_of(0, 5.0) == 2);

    const GuardIndex d(load_model(kTwoTreeModel));
    CHECK(d.real_threshold_count(4) == 1);
    CHECK(d.interval_count(4) == 2);
    CHECK(d.real_threshold_count(7) == 1);
    CHECK(d.real_threshold_count(9) == 2);
    CHECK(d.interval_count(9) == 3);
    for (int f : {0, 1, 2, 3, 5, 6, 8}) CHECK_FALSE(d.guarded(f));
}

TEST_CASE("guard index: every real value lands in exactly one interval") {
    Rng rng(5);
    for (int i = 0; i < 30; ++i) {
        const Ensemble e = random_ensemble(rng, {});
        const GuardIndex gi(e);
        for (int f = 0; f < e.num_features(); ++f) {
            const auto th = model_thresholds(e, f);
            if (th.empty()) continue;
            for (double v = th.front() - 2; v <= th.back() + 2; v += 0.25) {
                int hits = 0;
                for (int k = 0; k < gi.interval_count(f); ++k) hits += v >= gi.lower(f, k) && v < gi.upper(f, k);
                CHECK(hits == 1);
                CHECK(gi.interval_of(f, v) == ref_interval(th, v));
            }
        }
    }
}

TEST_CASE("unaffected leaves") {
    const Ensemble e = load_model(kTwoTreeModel);
    const std::vector<FeatureId> f4{4};
    CHECK(unaffected_leaves(e, f4) == std::vector<int>{2, 3, 4, 5, 6, 7});
    CHECK(unaffected_leaves(e, std::vector<FeatureId>{}).size() == 8);
    const std::vector<FeatureId> f7{7};
    CHECK(unaffected_leaves(e, f7).empty());
}

TEST_CASE("unaffected leaves match a naive per-path scan and are reached together") {
    Rng rng(7);
    for (int i = 0; i < 40; ++i) {
        const Ensemble e = random_ensemble(rng, {});
        std::vector<FeatureId> F{uniform_int(rng, 0, e.num_features() - 1)};
        if (i % 2) F.push_back((F[0] + 1) % e.num_features());
        std::sort(F.begin(), F.end());
        std::vector<int> naive;
        for (int id = 0; id < e.num_leaves(); ++id) {
            const auto& ref = e.leaf(id);
            const auto& nodes = e.trees()[ref.tree].nodes;
            // Walk from the root toward the leaf by searching both children.
            std::function<bool(int, bool&)> find = [&](int n, bool& hit) -> bool {
                if (n == ref.node) return true;
                if (nodes[n].is_leaf()) return false;
                bool h = hit || std::find(F.begin(), F.end(), nodes[n].feature) != F.end();
                if (find(nodes[n].yes, h) || find(nodes[n].no, h)) {
                    hit = h;
                    return true;
                }
                return false;
            };
            bool hit = false;
            find(0, hit);
            if (!hit) naive.push_back(id);
        }
        const auto U = unaffected_leaves(e, F);
        CHECK(U == naive);

        for (int s = 0; s < 20; ++s) {
            std::vector<double> x(e.num_features()), y;
            for (auto& v : x) v = uniform_int(rng, -1, 10);
            y = x;
            for (FeatureId f : F) y[f] = uniform_int(rng, -1, 10);
            for (int id : U) {
                const auto& ref = e.leaf(id);
                const Tree& t = e.trees()[ref.tree];
                CHECK((t.leaf_for(x) == ref.node) == (t.leaf_for(y) == ref.node));
            }
        }
    }
}

TEST_CASE("representative_input rules") {
    const Ensemble e = load_model(R"({"num_features": 3, "num_classes": 2, "trees": [
        {"root": {"feature": 0, "threshold": 2, "yes": {"leaf": 1}, "no":
          {"feature": 0, "threshold": 5, "yes": {"leaf": 2}, "no": {"leaf": 3}}}},
        {"root": {"feature": 1, "threshold": 5, "yes": {"leaf": 1}, "no": {"leaf": 0}}}]})");
    const GuardIndex gi(e);
    CHECK(representative_input(gi, {1, 0, kUnassigned})[0] == 3.5);
    CHECK(representative_input(gi, {0, 0, kUnassigned})[0] == 1.0);
    CHECK(representative_input(gi, {2, 1, kUnassigned})[0] == 5.0);
    CHECK(representative_input(gi, {2, 1, kUnassigned})[2] == 0.0);

    DataHint hint{{-3, 0, 0}, {9, 9, 7}, {4, 4, 6}};
    const Input x = representative_input(gi, {0, 1, kUnassigned}, &hint);
    CHECK(x[0] == -3.0);
    CHECK(x[1] == 9.0);
    CHECK(x[2] == 6.0);
    // A data minimum above the upper bound cannot be used.
    DataHint high{{3, 0, 0}, {4, 4, 4}, {0, 0, 0}};
    CHECK(representative_input(gi, {0, 0, kUnassigned}, &high)[0] < 2.0);
    // Data maximum below the lower bound is clamped to the bound.
    CHECK(representative_input(gi, {2, 1, kUnassigned}, &high)[0] == 5.0);

    CHECK_THROWS_AS(representative_input(gi, {kUnassigned, 0, kUnassigned}), Error);
    CHECK_THROWS_AS(representative_input(gi, {3, 0, kUnassigned}), Error);
}

TEST_CASE("region faithfulness: points of one interval assignment share leaves") {
    Rng rng(9);
    for (int i = 0; i < 30; ++i) {
        const Ensemble e = random_ensemble(rng, {});
        const GuardIndex gi(e);
        IntervalAssignment a(e.num_features(), kUnassigned);
        for (int f = 0; f < e.num_features(); ++f)
            if (gi.guarded(f)) a[f] = uniform_int(rng, 0, gi.interval_count(f) - 1);
        const Input base = representative_input(gi, a);
        CHECK(assignment_of(gi, base) == a);
        for (int s = 0; s < 25; ++s) {
            Input x(e.num_features());
            for (int f = 0; f < e.num_features(); ++f) {
                if (!gi.guarded(f)) {
                    x[f] = uniform_int(rng, -100, 100);
                    continue;
                }
                const double lo = std::isinf(gi.lower(f, a[f])) ? gi.upper(f, a[f]) - 50 : gi.lower(f, a[f]);
                const double hi = std::isinf(gi.upper(f, a[f])) ? lo + 50 : gi.upper(f, a[f]);
                x[f] = lo + (hi - lo) * uniform01(rng);
                if (x[f] >= hi) x[f] = lo;
            }
            for (int t = 0; t < static_cast<int>(e.trees().size()); ++t) {
                CHECK(e.trees()[t].leaf_for(x) == e.trees()[t].leaf_for(base));
                CHECK(leaf_for_assignment(e.trees()[t], t, gi, a) == e.trees()[t].leaf_for(x));
            }
        }
    }
}

TEST_CASE("find_feature resolves names and indices") {
    const auto [ss, q] = gen_subsetsum_ensemble({{1, 2}, 3});
    CHECK(ss.find_feature("f_prime") == 2);
    CHECK(ss.find_feature("f1") == 1);
    CHECK(ss.find_feature("0") == 0);
    CHECK_FALSE(ss.find_feature("nope"));
    CHECK_FALSE(ss.find_feature("3"));
}
