#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treesense/data_aware.hpp"
#include "treesense/ensemble.hpp"
#include "treesense/solver.hpp"

namespace treesense {

/** Per-feature min-max scaling fitted on a dataset. */
struct Scaler {
    std::vector<double> min;
    std::vector<double> max;

    bool degenerate(FeatureId f) const { return !(max[f] > min[f]); }
    double apply(FeatureId f, double v) const { return (v - min[f]) / (max[f] - min[f]); }
};

Scaler fit_scaler(const Dataset& d);

/** Axis-aligned box, lo[f] <= x_f < hi[f], infinite bounds allowed. */
struct RegionBox {
    std::vector<double> lo;
    std::vector<double> hi;

    bool contains(std::span<const double> x) const;
};

RegionBox interval_box(const GuardIndex& gi, const IntervalAssignment& a);
/** Inputs that reach the same leaf as x in every tree. */
RegionBox leaf_pattern_box(const Ensemble& e, std::span<const double> x);
/** Region of the pair restricted to features outside F; F features are left unbounded. */
RegionBox pair_region_box(const Ensemble& e, const CounterexamplePair& p, std::span<const FeatureId> F);

struct RegionDistanceReport {
    double distance = 0.0;
    int nearest_row_index = -1;
    /** Normalized clamp gap per feature at the nearest row; 0 for F and degenerate features. */
    std::vector<double> contributions;
};

RegionDistanceReport region_distance(const Dataset& d, const RegionBox& box, std::span<const FeatureId> F,
                                     const Scaler& scaler);
RegionDistanceReport region_distance(const Ensemble& e, const Dataset& d, const CounterexamplePair& p,
                                     std::span<const FeatureId> F, const Scaler& scaler);

/** One row of a per-mode report. */
struct InstanceResult {
    std::string instance;
    std::string mode;
    Verdict verdict = Verdict::not_sensitive;
    std::optional<double> distance;
    std::optional<double> utility_log;
    double runtime_ms = 0.0;
};

struct PairwiseRates {
    std::string a;
    std::string b;
    int instances = 0;
    double win = 0.0;
    double draw = 0.0;
    double loss = 0.0;
};

struct ModeSummary {
    std::string mode;
    int sensitive = 0;
    std::optional<double> mean_distance;
};

struct ComparisonReport {
    std::vector<ModeSummary> modes;
    std::vector<PairwiseRates> pairs;
};

/**
 * Win/draw/loss of a against b on distance over instances where both are sensitive.
 * Modes keep their order of first appearance; pair (m_j, m_i) is reported for i < j.
 */
ComparisonReport compare_modes(const std::vector<InstanceResult>& results, double tie_eps = 1e-9);

std::string dump_report(const ComparisonReport& r);
std::string dump_results(const std::vector<InstanceResult>& results);
/** Accepts a single result object or an array of them. */
std::vector<InstanceResult> load_results(const std::string& json_text);

}  // namespace treesense
