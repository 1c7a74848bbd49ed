#pragma once

// Test-side generators and reference oracles. The oracles walk the raw model nodes and never
// touch GuardIndex, the solver or the encoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "treesense/data_aware.hpp"
#include "treesense/ensemble.hpp"
#include "treesense/query.hpp"

namespace testing_support {

using namespace treesense;

using Rng = std::mt19937_64;

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

struct RandomSpec {
    int min_trees = 1;
    int max_trees = 5;
    int max_depth = 3;
    int num_features = 6;
    int max_thresholds = 4;
    int num_classes = 2;
    /** Leaf values are k / 8 for k in [-leaf_steps, leaf_steps]. */
    int leaf_steps = 8;
};

inline Ensemble random_ensemble(Rng& rng, const RandomSpec& s) {
    std::vector<std::vector<double>> pool(s.num_features);
    for (auto& p : pool) {
        std::set<double> vals;
        const int n = uniform_int(rng, 1, s.max_thresholds);
        while (static_cast<int>(vals.size()) < n) vals.insert(uniform_int(rng, 0, 9) + 0.5);
        p.assign(vals.begin(), vals.end());
    }
    const int ntrees = uniform_int(rng, s.min_trees, s.max_trees);
    std::vector<Tree> trees;
    for (int t = 0; t < ntrees; ++t) {
        Tree tree;
        tree.class_id = s.num_classes > 2 ? t % s.num_classes : 1;
        std::function<int(int)> grow = [&](int depth) -> int {
            const int idx = static_cast<int>(tree.nodes.size());
            tree.nodes.emplace_back();
            const bool split = depth < s.max_depth && (depth == 0 || uniform01(rng) < 0.75);
            if (!split) {
                tree.nodes[idx].value = uniform_int(rng, -s.leaf_steps, s.leaf_steps) / 8.0;
                return idx;
            }
            const int f = uniform_int(rng, 0, s.num_features - 1);
            const auto& p = pool[f];
            tree.nodes[idx].feature = f;
            tree.nodes[idx].threshold = p[uniform_int(rng, 0, static_cast<int>(p.size()) - 1)];
            const int yes = grow(depth + 1);
            const int no = grow(depth + 1);
            tree.nodes[idx].yes = yes;
            tree.nodes[idx].no = no;
            return idx;
        };
        grow(0);
        trees.push_back(std::move(tree));
    }
    return Ensemble(std::move(trees), s.num_features, s.num_classes, 0.0);
}

/** Sorted distinct thresholds of f read straight off the model. */
inline std::vector<double> model_thresholds(const Ensemble& e, FeatureId f) {
    std::set<double> th;
    for (const Tree& t : e.trees())
        for (const Node& n : t.nodes)
            if (!n.is_leaf() && n.feature == f) th.insert(n.threshold);
    return {th.begin(), th.end()};
}

/** One value per threshold interval: below the first threshold, then each threshold itself. */
inline std::vector<double> candidate_values(const Ensemble& e, FeatureId f) {
    auto th = model_thresholds(e, f);
    if (th.empty()) return {0.0};
    std::vector<double> out{th.front() - 1.0};
    out.insert(out.end(), th.begin(), th.end());
    return out;
}

inline int ref_interval(const std::vector<double>& th, double v) {
    return static_cast<int>(std::upper_bound(th.begin(), th.end(), v) - th.begin());
}

/** Per-class raw scores by direct traversal; binary returns {-s, s}. */
inline std::vector<double> ref_raw(const Ensemble& e, const std::vector<double>& x) {
    auto walk = [&](const Tree& t) {
        int n = 0;
        while (t.nodes[n].feature >= 0) n = x[t.nodes[n].feature] < t.nodes[n].threshold ? t.nodes[n].yes : t.nodes[n].no;
        return t.nodes[n].value;
    };
    if (e.num_classes() == 2) {
        double s = e.base_score();
        for (const Tree& t : e.trees()) s += walk(t);
        return {-s, s};
    }
    std::vector<double> raw(e.num_classes(), e.base_score());
    for (const Tree& t : e.trees()) raw[t.class_id] += walk(t);
    return raw;
}

struct RefGap {
    bool binary = true;
    double delta = 0.0;  // binary raw threshold
    double need = 0.0;   // multiclass log-ratio threshold including the strict epsilon
    int c1 = 0, c2 = 0;
};

inline RefGap ref_gap_binary_prob(double g) { return {true, std::log((0.5 + g) / (0.5 - g))}; }
inline RefGap ref_gap_binary_raw(double d) { return {true, d}; }
inline RefGap ref_gap_multi(double g, int c1, int c2) { return {false, 0.0, std::log(g) + 1e-6, c1, c2}; }

inline bool ref_gap_holds(const RefGap& g, const std::vector<double>& r1, const std::vector<double>& r2) {
    if (g.binary) return r1[1] >= g.delta && r2[1] <= -g.delta;
    for (size_t c = 0; c < r1.size(); ++c) {
        if (static_cast<int>(c) != g.c1 && !(r1[g.c1] - r1[c] >= g.need)) return false;
        if (static_cast<int>(c) != g.c2 && !(r2[g.c2] - r2[c] >= g.need)) return false;
    }
    return true;
}

/** Add-one smoothed interval frequencies; unguarded features get a single interval. */
inline std::vector<std::vector<double>> ref_log_marginals(const Ensemble& e, const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out(e.num_features());
    for (int f = 0; f < e.num_features(); ++f) {
        const auto th = model_thresholds(e, f);
        std::vector<double> counts(th.size() + 1, 1.0);
        for (const auto& r : rows) counts[ref_interval(th, r[f])] += 1.0;
        const double total = static_cast<double>(rows.size()) + static_cast<double>(counts.size());
        for (double c : counts) out[f].push_back(std::log(c / total));
    }
    return out;
}

inline double ref_utility(const Ensemble& e, const std::vector<std::vector<double>>& logm, const std::vector<double>& x1,
                          const std::vector<double>& x2) {
    double u = 0.0;
    for (int f = 0; f < e.num_features(); ++f) {
        const auto th = model_thresholds(e, f);
        if (th.empty()) continue;
        u += logm[f][ref_interval(th, x1[f])] + logm[f][ref_interval(th, x2[f])];
    }
    return u;
}

/** A cavity as real-valued bounds lb <= x_f < ub per literal. */
struct RefBox {
    std::vector<std::tuple<int, double, double>> lits;
};

inline bool ref_in_box(const RefBox& b, const std::vector<double>& x) {
    for (auto [f, lb, ub] : b.lits)
        if (!(x[f] >= lb && x[f] < ub)) return false;
    return true;
}

inline RefBox ref_box(const GuardIndex& gi, const Clause& c) {
    RefBox b;
    for (const auto& l : c.literals) b.lits.emplace_back(l.feature, gi.lower(l.feature, l.lo), gi.upper(l.feature, l.hi - 1));
    return b;
}

struct RefResult {
    bool sensitive = false;
    std::optional<double> best_utility;
    std::uint64_t pairs = 0;
};

/** Exhaustive search over candidate-value pairs that agree outside F. */
inline RefResult ref_oracle(const Ensemble& e, const std::vector<FeatureId>& F, const RefGap& gap,
                            const std::vector<std::vector<double>>* logm = nullptr,
                            const std::vector<RefBox>* boxes = nullptr) {
    std::vector<std::vector<double>> cand(e.num_features());
    for (int f = 0; f < e.num_features(); ++f) cand[f] = candidate_values(e, f);
    struct Digit {
        int f;
        int copy;
    };
    std::vector<Digit> digits;
    for (int f = 0; f < e.num_features(); ++f) {
        if (std::find(F.begin(), F.end(), f) != F.end()) {
            digits.push_back({f, 1});
            digits.push_back({f, 2});
        } else {
            digits.push_back({f, 0});
        }
    }
    std::vector<size_t> idx(digits.size(), 0);
    std::vector<double> x1(e.num_features()), x2(e.num_features());
    RefResult res;
    while (true) {
        ++res.pairs;
        for (size_t i = 0; i < digits.size(); ++i) {
            const double v = cand[digits[i].f][idx[i]];
            if (digits[i].copy != 2) x1[digits[i].f] = v;
            if (digits[i].copy != 1) x2[digits[i].f] = v;
        }
        bool ok = ref_gap_holds(gap, ref_raw(e, x1), ref_raw(e, x2));
        if (ok && boxes)
            for (const auto& b : *boxes)
                if (ref_in_box(b, x1) || ref_in_box(b, x2)) {
                    ok = false;
                    break;
                }
        if (ok) {
            res.sensitive = true;
            if (!logm) return res;
            const double u = ref_utility(e, *logm, x1, x2);
            if (!res.best_utility || u > *res.best_utility) res.best_utility = u;
        }
        size_t i = 0;
        for (; i < digits.size(); ++i) {
            if (++idx[i] < cand[digits[i].f].size()) break;
            idx[i] = 0;
        }
        if (i == digits.size()) return res;
    }
}

/** Rows clustered near a few random centers so that cavities exist. */
inline Dataset random_dataset(Rng& rng, int num_features, int rows, int clusters = 3) {
    Dataset d;
    for (int f = 0; f < num_features; ++f) d.header.push_back("c" + std::to_string(f));
    std::vector<std::vector<double>> centers(clusters, std::vector<double>(num_features));
    for (auto& c : centers)
        for (auto& v : c) v = uniform_int(rng, 0, 10);
    std::normal_distribution<double> noise(0.0, 1.25);
    for (int r = 0; r < rows; ++r) {
        const auto& c = centers[uniform_int(rng, 0, clusters - 1)];
        Input row(num_features);
        for (int f = 0; f < num_features; ++f) row[f] = std::round((c[f] + noise(rng)) * 4.0) / 4.0;
        d.rows.push_back(std::move(row));
    }
    return d;
}

/**
 * Two trees sharing root f7 < c1, F = {f4} leaves six unaffected leaves.
 * T1: f7<5 ? (f4<2 ? l0 : l1) : (f9<7 ? l2 : l3); T2: f7<5 ? (f9<3 ? l4 : l5) : (f9<7 ? l6 : l7).
 */
inline const char* kTwoTreeModel = R"({
  "num_features": 10, "num_classes": 2, "base_score": 0,
  "trees": [
    {"root": {"feature": 7, "threshold": 5,
      "yes": {"feature": 4, "threshold": 2, "yes": {"leaf": 2}, "no": {"leaf": -2}},
      "no": {"feature": 9, "threshold": 7, "yes": {"leaf": 0.25}, "no": {"leaf": -0.25}}}},
    {"root": {"feature": 7, "threshold": 5,
      "yes": {"feature": 9, "threshold": 3, "yes": {"leaf": 0.5}, "no": {"leaf": -0.5}},
      "no": {"feature": 9, "threshold": 7, "yes": {"leaf": 0.125}, "no": {"leaf": -0.125}}}}
  ]
})";

}  // namespace testing_support
