#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treesense/encoding.hpp"
#include "treesense/ensemble.hpp"
#include "treesense/query.hpp"

namespace treesense {

enum class Verdict { sensitive, not_sensitive, timeout };

std::string to_string(Verdict v);
Verdict parse_verdict(const std::string& s);

struct CounterexamplePair {
    Input x1, x2;
    IntervalAssignment region1, region2;
    std::vector<double> raw1, raw2;
    std::vector<double> prob1, prob2;
    std::optional<double> utility_log;
    double objective = 0.0;
};

struct SolveStats {
    std::uint64_t nodes = 0;
    std::uint64_t pruned_bound = 0;
    std::uint64_t pruned_clause = 0;
    double wall_ms = 0.0;
};

struct Outcome {
    Verdict verdict = Verdict::not_sensitive;
    /** Witness when sensitive; best known pair (if any) on timeout. */
    std::optional<CounterexamplePair> pair;
    SolveStats stats;
};

struct Budget {
    double time_limit_s = 3600.0;
    std::uint64_t node_limit = 0;  // 0 = unlimited
};

struct SolveOptions {
    OptLevel level = OptLevel::full;
    /** Disables gap and utility bounds (clause propagation stays on). */
    bool bounding = true;
    Budget budget;
    const DataHint* data_hint = nullptr;
};

/**
 * Branch-and-bound over interval assignments.
 *
 * Features outside F carry one interval choice shared by both copies; features in F carry
 * one choice per copy. Leaves are derived from the assignment. For prob modes the returned
 * pair maximizes the log-marginal utility; otherwise the first feasible pair is returned.
 */
Outcome solve(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, const SolveOptions& opts = {});

struct OracleOptions {
    double max_states = 1e7;
    const DataHint* data_hint = nullptr;
};

/** Exhaustive ground truth over every pair of interval assignments. */
Outcome brute_force_oracle(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q,
                           const OracleOptions& opts = {});

enum class CheckReason { ok, dimension, non_finite, agreement, gap, clause };

std::string to_string(CheckReason r);

struct CheckResult {
    bool ok = false;
    CheckReason reason = CheckReason::ok;

    explicit operator bool() const { return ok; }
};

/** Certificate check on the concrete points: agreement outside F, gap within 1e-9, clauses. */
CheckResult check_pair(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, const CounterexamplePair& p);

/** Completes raw/prob/utility fields of a pair from its points. */
CounterexamplePair make_pair(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, Input x1, Input x2);

struct Depth1Options {
    int max_free_features = 16;
    double max_combinations = 1e7;
};

/** Polynomial decision for depth-1 binary ensembles with few features outside F (strict signs, zero gap). */
bool depth1_poly_check(const Ensemble& e, std::span<const FeatureId> F, const Depth1Options& opts = {});

}  // namespace treesense
