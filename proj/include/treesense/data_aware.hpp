#pragma once

#include <optional>
#include <string>
#include <vector>

#include "treesense/ensemble.hpp"

namespace treesense {

/** Numeric rows, one column per model feature. */
struct Dataset {
    std::vector<std::string> header;
    std::vector<Input> rows;

    int num_columns() const { return rows.empty() ? static_cast<int>(header.size()) : static_cast<int>(rows[0].size()); }
};

/** CSV with a header line and numeric cells only. */
Dataset load_csv(const std::string& path);
Dataset parse_csv(const std::string& text);
void validate_dataset(const Dataset& d, int num_features);
DataHint make_data_hint(const Dataset& d);

/** Per-feature interval marginals and their natural logs. */
struct MarginalTable {
    std::vector<std::vector<double>> probs;
    std::vector<std::vector<double>> logs;

    double log_prob(FeatureId f, int interval) const { return logs[f][interval]; }
};

MarginalTable estimate_marginals(const GuardIndex& gi, const Dataset& d, double alpha = 1.0);

/** Sum over features of log m_f at x1 plus log m_f at x2. */
double utility_log(const MarginalTable& m, const GuardIndex& gi, const Input& x1, const Input& x2);

/**
 * Linear objective over real-threshold predicate variables.
 *
 * coef[f][j-1] is the coefficient of p_{f,j} (threshold position j, 1 <= j <= R_f) in each
 * copy. For any consistent pair, sum coef * (p1 + p2) == utility_log + constant.
 */
struct ObjectiveCoeffs {
    std::vector<std::vector<double>> coef;
    double constant = 0.0;
};

ObjectiveCoeffs objective_coeffs(const MarginalTable& m, const GuardIndex& gi);

std::string dump_marginals(const MarginalTable& m);
MarginalTable load_marginals(const std::string& json_text, const GuardIndex& gi);

/** x_f in [thresholds(f)[lo], thresholds(f)[hi]) */
struct ClauseLiteral {
    FeatureId feature = 0;
    int lo = 0;
    int hi = 1;

    bool operator==(const ClauseLiteral&) const = default;
};

/** A data cavity; the clause it induces is the negation of the box. */
struct Clause {
    std::vector<ClauseLiteral> literals;  // strictly increasing features

    int width() const { return static_cast<int>(literals.size()); }
    bool operator==(const Clause&) const = default;
};

/** True when interval assignment a lies in the cavity box (unassigned features fail). */
bool box_contains(const Clause& c, const IntervalAssignment& a);
bool point_in_box(const Clause& c, const GuardIndex& gi, const Input& x);
/** False iff x lies inside the cavity. */
bool clause_satisfied(const Clause& c, const GuardIndex& gi, const Input& x);
/** inner box is a subset of outer box. */
bool box_subsumed(const Clause& inner, const Clause& outer);

struct MineOptions {
    int max_width = 3;
    int max_clauses = 1500;
    std::optional<int> feature_budget = 64;
};

std::vector<Clause> mine_clauses(const Ensemble& e, const GuardIndex& gi, const Dataset& d, const MineOptions& opts = {});

std::string dump_clauses(const std::vector<Clause>& clauses, const GuardIndex& gi);
std::vector<Clause> load_clauses(const std::string& json_text, const GuardIndex& gi);

}  // namespace treesense
