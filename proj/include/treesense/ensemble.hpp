#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace treesense {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using FeatureId = int;
using Input = std::vector<double>;

/** One node of a tree in flat storage. Leaves have feature == -1. */
struct Node {
    FeatureId feature = -1;
    double threshold = 0.0;
    int yes = -1;  // taken when x[feature] < threshold
    int no = -1;
    double value = 0.0;

    bool is_leaf() const { return feature < 0; }
};

/** A binary decision tree; node 0 is the root. */
struct Tree {
    std::vector<Node> nodes;
    int class_id = 1;

    /** Leaf node indices in yes-first depth-first order. */
    std::vector<int> leaves() const;
    int depth() const;
    /** Node index of the leaf reached by x. */
    int leaf_for(std::span<const double> x) const;
    double eval(std::span<const double> x) const { return nodes[leaf_for(x)].value; }
};

/** Global leaf identifier: (tree, node) plus a dense id across the ensemble. */
struct LeafRef {
    int tree = 0;
    int node = 0;
};

class Ensemble {
public:
    Ensemble() = default;
    Ensemble(std::vector<Tree> trees, int num_features, int num_classes = 2, double base_score = 0.0,
             std::vector<std::string> feature_names = {});

    const std::vector<Tree>& trees() const { return trees_; }
    int num_features() const { return num_features_; }
    int num_classes() const { return num_classes_; }
    bool is_binary() const { return num_classes_ == 2; }
    double base_score() const { return base_score_; }
    const std::vector<std::string>& feature_names() const { return feature_names_; }

    /** Dense leaf ids: leaf_id(t, node) for leaves, in tree order then yes-first DFS. */
    int num_leaves() const { return static_cast<int>(leaf_refs_.size()); }
    const LeafRef& leaf(int id) const { return leaf_refs_[id]; }
    int leaf_id(int tree, int node) const;
    int first_leaf(int tree) const { return first_leaf_[tree]; }
    double leaf_value(int id) const { return trees_[leaf_refs_[id].tree].nodes[leaf_refs_[id].node].value; }

    /** Feature id for a name or a decimal index string. */
    std::optional<FeatureId> find_feature(std::string_view name_or_index) const;
    std::string feature_label(FeatureId f) const;

private:
    void validate_and_index();

    std::vector<Tree> trees_;
    int num_features_ = 0;
    int num_classes_ = 2;
    double base_score_ = 0.0;
    std::vector<std::string> feature_names_;
    std::vector<LeafRef> leaf_refs_;
    std::vector<int> first_leaf_;
    std::vector<std::vector<int>> node_to_leaf_;
};

Ensemble load_model(std::string_view json_text);
Ensemble load_model_file(const std::string& path);
std::string dump_model(const Ensemble& e);

/** Raw score of class c. Binary: class 1 is the signed sum, class 0 its negation. */
double raw_score(const Ensemble& e, std::span<const double> x, int c);
std::vector<double> raw_scores(const Ensemble& e, std::span<const double> x);
std::vector<double> predict_prob(const Ensemble& e, std::span<const double> x);
std::vector<double> probs_from_raw(const Ensemble& e, std::span<const double> raw);
double sigmoid(double z);

/**
 * Sorted, deduplicated guard thresholds per feature with -inf/+inf sentinels.
 *
 * For a guarded feature f, thresholds(f) = (-inf, t_1, ..., t_R, +inf) and
 * interval k (0-based) is [thresholds(f)[k], thresholds(f)[k+1]). Ungarded
 * features have empty lists and are unconstrained.
 */
class GuardIndex {
public:
    GuardIndex() = default;
    explicit GuardIndex(const Ensemble& e);

    int num_features() const { return static_cast<int>(thresholds_.size()); }
    bool guarded(FeatureId f) const { return !thresholds_[f].empty(); }
    const std::vector<double>& thresholds(FeatureId f) const { return thresholds_[f]; }
    /** Number of intervals, or 0 for an unconstrained feature. */
    int interval_count(FeatureId f) const {
        return guarded(f) ? static_cast<int>(thresholds_[f].size()) - 1 : 0;
    }
    /** Real (non-sentinel) thresholds of f. */
    int real_threshold_count(FeatureId f) const { return guarded(f) ? interval_count(f) - 1 : 0; }
    /** Interval containing v; 0 for unconstrained features. */
    int interval_of(FeatureId f, double v) const;
    /** Position of an exact threshold in thresholds(f), or -1. */
    int position_of(FeatureId f, double threshold) const;
    /** Position of the guard of an internal node in thresholds(node.feature). */
    int guard_position(int tree, int node) const { return guard_pos_[tree][node]; }

    double lower(FeatureId f, int k) const { return thresholds_[f][k]; }
    double upper(FeatureId f, int k) const { return thresholds_[f][k + 1]; }

private:
    std::vector<std::vector<double>> thresholds_;
    std::vector<std::vector<int>> guard_pos_;
};

/** Interval index per feature; -1 means unconstrained (or unassigned during search). */
using IntervalAssignment = std::vector<int>;

inline constexpr int kUnassigned = -1;

/** Interval assignment containing point x. */
IntervalAssignment assignment_of(const GuardIndex& gi, std::span<const double> x);

/** Leaf node reached in a tree when every guarded feature is fixed by a. */
int leaf_for_assignment(const Tree& t, int tree_index, const GuardIndex& gi, const IntervalAssignment& a);

/** Leaves whose ancestry contains no guard on a feature of F. Sorted dense ids. */
std::vector<int> unaffected_leaves(const Ensemble& e, std::span<const FeatureId> F);

/** Per-feature summary used to pick in-region representative values. */
struct DataHint {
    std::vector<double> min;
    std::vector<double> max;
    std::vector<double> median;
};

/** A point inside the region of a; features marked unconstrained get 0 or the hint median. */
Input representative_input(const GuardIndex& gi, const IntervalAssignment& a, const DataHint* hint = nullptr);

void require_finite(std::span<const double> x, int num_features);

}  // namespace treesense
