#pragma once

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "treesense/data_aware.hpp"
#include "treesense/ensemble.hpp"

namespace treesense {

/** Binary gap in probability space, 0 <= g < 0.5. */
struct ProbGap {
    double g = 0.0;
};
/** Binary gap directly on raw scores, delta >= 0. */
struct RawGap {
    double delta = 0.0;
};
/** Multiclass ratio gap, g >= 1. */
struct RatioGap {
    double g = 1.0;
};

using Gap = std::variant<ProbGap, RawGap, RatioGap>;

enum class DataMode { none, prob, clause, probclause };

std::string to_string(DataMode m);
DataMode parse_data_mode(const std::string& s);

inline bool uses_marginals(DataMode m) { return m == DataMode::prob || m == DataMode::probclause; }
inline bool uses_clauses(DataMode m) { return m == DataMode::clause || m == DataMode::probclause; }

/** Slack realizing strict inequalities. */
inline constexpr double kStrictEps = 1e-6;

struct SensitivityQuery {
    std::vector<FeatureId> features;  // F, sorted and unique after validate()
    Gap gap = ProbGap{0.0};
    std::optional<std::pair<int, int>> classes;
    DataMode mode = DataMode::none;
    std::vector<Clause> clauses;
    std::optional<MarginalTable> marginals;
    bool strict_zero = false;

    bool in_f(FeatureId f) const;
};

double delta_from_gap(double g);
double eta_from_gap(double g);

/** Normalizes F and checks that the query is consistent with the model. Throws Error. */
void validate_query(const Ensemble& e, SensitivityQuery& q);

/** Binary raw-score threshold (delta, with the strict-zero slack applied). */
double binary_delta(const SensitivityQuery& q);
/** Multiclass log-ratio threshold eta. */
double multiclass_eta(const SensitivityQuery& q);

/**
 * The gap condition on per-class raw scores of the two copies, exactly as the
 * solver, oracle and encoding state it: raw1 >= delta and raw2 <= -delta (binary),
 * or raw_c1 - raw_c >= eta + eps for every other class (multiclass).
 */
bool gap_holds(const Ensemble& e, const SensitivityQuery& q, const std::vector<double>& raw1,
               const std::vector<double>& raw2);

}  // namespace treesense
