#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "treesense/ensemble.hpp"
#include "treesense/query.hpp"

namespace treesense {

/** Ablation tiers: each adds to the previous one. */
enum class OptLevel { base, unaff, aff, full };

std::string to_string(OptLevel l);
OptLevel parse_opt_level(const std::string& s);

enum class Family { PredOrder, LeafSum, RootLink, NodeLink, SameOnNonF, Gap, UnAff, Aff, ClauseBlock, Domain };

inline constexpr int kNumFamilies = 10;
std::string to_string(Family f);

enum class Sense { le, ge, eq };

struct Variable {
    std::string name;
    bool binary = false;
    int copy = 1;
};

struct Term {
    int var = 0;
    double coef = 0.0;
};

struct LinearConstraint {
    std::string name;
    Family family = Family::PredOrder;
    std::vector<Term> terms;
    Sense sense = Sense::le;
    double rhs = 0.0;
    /** 1 or 2 when every term belongs to that copy, 0 for cross-copy rows. */
    int copy = 0;
};

/**
 * The full MILP for a sensitivity query.
 *
 * Predicate variables p{i}_f{f}_k{j} stand for X_f < t_j (j-th real threshold of f,
 * 1-based) in copy i; sentinel guards are constants and never materialized. Leaf
 * variables l{i}_{n} use dense ensemble leaf ids.
 */
struct EncodingArtifact {
    std::vector<Variable> variables;
    std::vector<LinearConstraint> constraints;
    std::vector<Term> objective;
    double objective_constant = 0.0;
    OptLevel level = OptLevel::full;
    bool has_objective = false;
    /** Set when a row with no terms can never hold (e.g. the Aff row when F is empty). */
    bool trivially_infeasible = false;

    /** pred_var[copy-1][f][j-1] */
    std::vector<std::vector<std::vector<int>>> pred_var;
    /** leaf_var[copy-1][leaf id] */
    std::vector<std::vector<int>> leaf_var;

    int count(Family f) const;
};

EncodingArtifact encode(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q,
                        OptLevel level = OptLevel::full);

/** Evaluates lhs of a row at a full variable assignment. */
double row_activity(const LinearConstraint& c, const std::vector<double>& values);
bool row_satisfied(const LinearConstraint& c, const std::vector<double>& values, double tol = 1e-9);

/** CPLEX LP text; deterministic for a given artifact. */
void export_lp(const EncodingArtifact& a, std::ostream& sink);
std::string export_lp_string(const EncodingArtifact& a);

}  // namespace treesense
