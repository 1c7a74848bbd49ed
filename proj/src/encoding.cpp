#include "treesense/encoding.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

namespace treesense {

namespace {

void subtree_leaves(const Ensemble& e, int t, int n, std::vector<int>& out) {
    const Node& node = e.trees()[t].nodes[n];
    if (node.is_leaf()) {
        out.push_back(e.leaf_id(t, n));
        return;
    }
    subtree_leaves(e, t, node.yes, out);
    subtree_leaves(e, t, node.no, out);
}

std::string fmt_real(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

class Builder {
public:
    Builder(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, OptLevel level)
        : e_(e), gi_(gi), q_(q) {
        a_.level = level;
    }

    EncodingArtifact build() {
        make_variables();
        emit_pred_order();
        emit_leaf_sum();
        emit_links();
        emit_same();
        emit_gap();
        const auto unaffected = unaffected_leaves(e_, q_.features);
        is_unaffected_.assign(e_.num_leaves(), 0);
        for (int n : unaffected) is_unaffected_[n] = 1;
        if (a_.level >= OptLevel::unaff) emit_unaff(unaffected);
        LinearConstraint aff = make_aff();
        if (aff.terms.empty() && aff.rhs > 0.0) a_.trivially_infeasible = true;
        if (a_.level >= OptLevel::aff) a_.constraints.push_back(std::move(aff));
        if (uses_clauses(q_.mode)) emit_clauses();
        if (a_.level == OptLevel::full) emit_objective();
        return std::move(a_);
    }

private:
    int add_var(std::string name, bool binary, int copy) {
        a_.variables.push_back({std::move(name), binary, copy});
        return static_cast<int>(a_.variables.size()) - 1;
    }

    void add_row(std::string name, Family fam, std::vector<Term> terms, Sense sense, double rhs, int copy) {
        a_.constraints.push_back({std::move(name), fam, std::move(terms), sense, rhs, copy});
    }

    void make_variables() {
        a_.pred_var.assign(2, std::vector<std::vector<int>>(e_.num_features()));
        a_.leaf_var.assign(2, std::vector<int>(e_.num_leaves(), -1));
        for (int i = 1; i <= 2; ++i)
            for (int f = 0; f < e_.num_features(); ++f)
                for (int j = 1; j <= gi_.real_threshold_count(f); ++j)
                    a_.pred_var[i - 1][f].push_back(add_var(
                        "p" + std::to_string(i) + "_f" + std::to_string(f) + "_k" + std::to_string(j), true, i));
        for (int i = 1; i <= 2; ++i)
            for (int n = 0; n < e_.num_leaves(); ++n)
                a_.leaf_var[i - 1][n] = add_var("l" + std::to_string(i) + "_" + std::to_string(n), false, i);
    }

    int pred(int copy, FeatureId f, int position) const { return a_.pred_var[copy - 1][f][position - 1]; }
    int leafv(int copy, int leaf) const { return a_.leaf_var[copy - 1][leaf]; }

    void emit_pred_order() {
        for (int f = 0; f < e_.num_features(); ++f)
            for (int j = 1; j < gi_.real_threshold_count(f); ++j)
                for (int i = 1; i <= 2; ++i)
                    add_row("predord_f" + std::to_string(f) + "_k" + std::to_string(j) + "_c" + std::to_string(i),
                            Family::PredOrder, {{pred(i, f, j), 1.0}, {pred(i, f, j + 1), -1.0}}, Sense::le, 0.0, i);
    }

    void emit_leaf_sum() {
        for (int t = 0; t < static_cast<int>(e_.trees().size()); ++t)
            for (int i = 1; i <= 2; ++i) {
                std::vector<Term> terms;
                for (int n : e_.trees()[t].leaves()) terms.push_back({leafv(i, e_.leaf_id(t, n)), 1.0});
                add_row("leafsum_t" + std::to_string(t) + "_c" + std::to_string(i), Family::LeafSum, std::move(terms),
                        Sense::eq, 1.0, i);
            }
    }

    void emit_links() {
        struct Pending {
            int t, n;
        };
        std::vector<Pending> roots, inner;
        for (int t = 0; t < static_cast<int>(e_.trees().size()); ++t) {
            const auto& nodes = e_.trees()[t].nodes;
            for (int n = 0; n < static_cast<int>(nodes.size()); ++n) {
                if (nodes[n].is_leaf()) continue;
                (n == 0 ? roots : inner).push_back({t, n});
            }
        }
        auto emit = [&](const Pending& pn, bool root) {
            const Node& node = e_.trees()[pn.t].nodes[pn.n];
            std::vector<int> tset, fset;
            subtree_leaves(e_, pn.t, node.yes, tset);
            subtree_leaves(e_, pn.t, node.no, fset);
            const int pos = gi_.guard_position(pn.t, pn.n);
            const std::string stem = root ? "rootlink_t" + std::to_string(pn.t)
                                          : "nodelink_t" + std::to_string(pn.t) + "_n" + std::to_string(pn.n);
            const Family fam = root ? Family::RootLink : Family::NodeLink;
            for (int i = 1; i <= 2; ++i) {
                const int p = pred(i, node.feature, pos);
                // p = sum over TSet (root) or p >= sum over TSet.
                std::vector<Term> yes{{p, -1.0}};
                for (int l : tset) yes.push_back({leafv(i, l), 1.0});
                add_row(stem + "_yes_c" + std::to_string(i), fam, std::move(yes), root ? Sense::eq : Sense::le, 0.0, i);
                // 1 - sum over FSet = p (root) or >= p.
                std::vector<Term> no{{p, 1.0}};
                for (int l : fset) no.push_back({leafv(i, l), 1.0});
                add_row(stem + "_no_c" + std::to_string(i), fam, std::move(no), root ? Sense::eq : Sense::le, 1.0, i);
            }
        };
        for (const auto& r : roots) emit(r, true);
        for (const auto& n : inner) emit(n, false);
    }

    void emit_same() {
        for (int f = 0; f < e_.num_features(); ++f) {
            if (q_.in_f(f)) continue;
            for (int j = 1; j <= gi_.real_threshold_count(f); ++j)
                add_row("same_f" + std::to_string(f) + "_k" + std::to_string(j), Family::SameOnNonF,
                        {{pred(1, f, j), -1.0}, {pred(2, f, j), 1.0}}, Sense::eq, 0.0, 0);
        }
    }

    std::vector<int> class_leaves(int c) const {
        std::vector<int> out;
        for (int n = 0; n < e_.num_leaves(); ++n)
            if (e_.trees()[e_.leaf(n).tree].class_id == c) out.push_back(n);
        return out;
    }

    void emit_gap() {
        if (e_.is_binary()) {
            const double d = binary_delta(q_);
            for (int i = 1; i <= 2; ++i) {
                std::vector<Term> terms;
                for (int n = 0; n < e_.num_leaves(); ++n) terms.push_back({leafv(i, n), e_.leaf_value(n)});
                const double rhs = (i == 1 ? d : -d) - e_.base_score();
                add_row("gap_c" + std::to_string(i), Family::Gap, std::move(terms), i == 1 ? Sense::ge : Sense::le, rhs,
                        i);
            }
            return;
        }
        const double need = multiclass_eta(q_) + kStrictEps;
        const auto [c1, c2] = *q_.classes;
        for (int i = 1; i <= 2; ++i) {
            const int target = i == 1 ? c1 : c2;
            for (int c = 0; c < e_.num_classes(); ++c) {
                if (c == target) continue;
                std::vector<Term> terms;
                for (int n : class_leaves(target)) terms.push_back({leafv(i, n), e_.leaf_value(n)});
                for (int n : class_leaves(c)) terms.push_back({leafv(i, n), -e_.leaf_value(n)});
                add_row("gap_c" + std::to_string(i) + "_k" + std::to_string(c), Family::Gap, std::move(terms), Sense::ge,
                        need, i);
            }
        }
    }

    void emit_unaff(const std::vector<int>& unaffected) {
        for (int n : unaffected)
            add_row("unaff_l" + std::to_string(n), Family::UnAff, {{leafv(1, n), 1.0}, {leafv(2, n), -1.0}}, Sense::eq,
                    0.0, 0);
    }

    LinearConstraint make_aff() const {
        LinearConstraint row{"aff", Family::Aff, {}, Sense::ge, 0.0, 0};
        auto add_diff = [&](int n, double sign) {
            if (is_unaffected_[n]) return;
            row.terms.push_back({leafv(1, n), sign * e_.leaf_value(n)});
            row.terms.push_back({leafv(2, n), -sign * e_.leaf_value(n)});
        };
        if (e_.is_binary()) {
            for (int n = 0; n < e_.num_leaves(); ++n) add_diff(n, 1.0);
            row.rhs = 2.0 * binary_delta(q_);
        } else {
            const auto [c1, c2] = *q_.classes;
            for (int n : class_leaves(c1)) add_diff(n, 1.0);
            for (int n : class_leaves(c2)) add_diff(n, -1.0);
            row.rhs = 2.0 * (multiclass_eta(q_) + kStrictEps);
        }
        return row;
    }

    void emit_clauses() {
        for (size_t ci = 0; ci < q_.clauses.size(); ++ci) {
            const Clause& c = q_.clauses[ci];
            for (int i = 1; i <= 2; ++i) {
                // Outside the box: sum_j (p_lo + 1 - p_hi) >= 1, sentinels folded into the rhs.
                std::vector<Term> terms;
                double constant = 0.0;
                for (const auto& lit : c.literals) {
                    if (lit.feature < 0 || lit.feature >= e_.num_features() || !gi_.guarded(lit.feature))
                        throw Error("clause references a feature without guards");
                    const int K = gi_.interval_count(lit.feature);
                    if (lit.lo < 0 || lit.hi > K || lit.lo >= lit.hi)
                        throw Error("clause references a threshold absent from the guard index");
                    constant += 1.0;
                    if (lit.lo > 0) terms.push_back({pred(i, lit.feature, lit.lo), 1.0});
                    if (lit.hi < K)
                        terms.push_back({pred(i, lit.feature, lit.hi), -1.0});
                    else
                        constant -= 1.0;
                }
                const double rhs = 1.0 - constant;
                if (terms.empty() && rhs > 0.0) a_.trivially_infeasible = true;
                add_row("clause_q" + std::to_string(ci) + "_c" + std::to_string(i), Family::ClauseBlock,
                        std::move(terms), Sense::ge, rhs, i);
            }
        }
    }

    void emit_objective() {
        a_.has_objective = true;
        if (uses_marginals(q_.mode)) {
            const auto oc = objective_coeffs(*q_.marginals, gi_);
            for (int i = 1; i <= 2; ++i)
                for (int f = 0; f < e_.num_features(); ++f)
                    for (int j = 1; j <= gi_.real_threshold_count(f); ++j)
                        a_.objective.push_back({pred(i, f, j), oc.coef[f][j - 1]});
            a_.objective_constant = -oc.constant;
            return;
        }
        if (e_.is_binary()) {
            for (int i = 1; i <= 2; ++i)
                for (int n = 0; n < e_.num_leaves(); ++n)
                    a_.objective.push_back({leafv(i, n), i == 1 ? e_.leaf_value(n) : -e_.leaf_value(n)});
            return;
        }
        const auto [c1, c2] = *q_.classes;
        for (int n : class_leaves(c1)) {
            a_.objective.push_back({leafv(1, n), e_.leaf_value(n)});
            a_.objective.push_back({leafv(2, n), -e_.leaf_value(n)});
        }
        for (int n : class_leaves(c2)) {
            a_.objective.push_back({leafv(2, n), e_.leaf_value(n)});
            a_.objective.push_back({leafv(1, n), -e_.leaf_value(n)});
        }
    }

    const Ensemble& e_;
    const GuardIndex& gi_;
    const SensitivityQuery& q_;
    EncodingArtifact a_;
    std::vector<char> is_unaffected_;
};

void write_expr(std::ostream& os, const EncodingArtifact& a, const std::vector<Term>& terms) {
    if (terms.empty()) {
        // LP rows need at least one variable.
        os << "0 " << a.variables.front().name;
        return;
    }
    bool first = true;
    for (const Term& t : terms) {
        const double c = t.coef;
        if (first) {
            if (c < 0 || std::signbit(c)) os << "- " << fmt_real(-c);
            else os << fmt_real(c);
            first = false;
        } else {
            if (c < 0 || std::signbit(c)) os << " - " << fmt_real(-c);
            else os << " + " << fmt_real(c);
        }
        os << ' ' << a.variables[t.var].name;
    }
}

}  // namespace

std::string to_string(OptLevel l) {
    switch (l) {
        case OptLevel::base: return "base";
        case OptLevel::unaff: return "+unaff";
        case OptLevel::aff: return "+aff";
        case OptLevel::full: return "full";
    }
    return "full";
}

OptLevel parse_opt_level(const std::string& s) {
    if (s == "base") return OptLevel::base;
    if (s == "+unaff" || s == "unaff") return OptLevel::unaff;
    if (s == "+aff" || s == "aff") return OptLevel::aff;
    if (s == "full") return OptLevel::full;
    throw Error("unknown level '" + s + "' (expected base, +unaff, +aff or full)");
}

std::string to_string(Family f) {
    static const char* names[] = {"PredOrder", "LeafSum", "RootLink", "NodeLink",    "SameOnNonF",
                                  "Gap",       "UnAff",   "Aff",      "ClauseBlock", "Domain"};
    return names[static_cast<int>(f)];
}

int EncodingArtifact::count(Family f) const {
    int n = 0;
    for (const auto& c : constraints) n += c.family == f;
    return n;
}

EncodingArtifact encode(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, OptLevel level) {
    SensitivityQuery vq = q;
    validate_query(e, vq);
    if (uses_clauses(vq.mode))
        for (const auto& c : vq.clauses)
            for (const auto& l : c.literals)
                if (!gi.guarded(l.feature)) throw Error("clause references a feature without guards");
    return Builder(e, gi, vq, level).build();
}

double row_activity(const LinearConstraint& c, const std::vector<double>& values) {
    double s = 0.0;
    for (const Term& t : c.terms) s += t.coef * values[t.var];
    return s;
}

bool row_satisfied(const LinearConstraint& c, const std::vector<double>& values, double tol) {
    const double lhs = row_activity(c, values);
    switch (c.sense) {
        case Sense::le: return lhs <= c.rhs + tol;
        case Sense::ge: return lhs >= c.rhs - tol;
        case Sense::eq: return std::abs(lhs - c.rhs) <= tol;
    }
    return false;
}

void export_lp(const EncodingArtifact& a, std::ostream& os) {
    if (a.leaf_var.empty() || a.leaf_var[0].empty()) throw Error("cannot export an encoding of a model with no trees");
    os << "\\ sensitivity encoding, level " << to_string(a.level) << "\n";
    if (a.objective_constant != 0.0) os << "\\ objective constant " << fmt_real(a.objective_constant) << "\n";
    os << "Maximize\n obj: ";
    write_expr(os, a, a.objective);
    os << "\nSubject To\n";
    for (const auto& c : a.constraints) {
        os << ' ' << c.name << ": ";
        write_expr(os, a, c.terms);
        switch (c.sense) {
            case Sense::le: os << " <= "; break;
            case Sense::ge: os << " >= "; break;
            case Sense::eq: os << " = "; break;
        }
        os << fmt_real(c.rhs == 0.0 ? 0.0 : c.rhs) << '\n';
    }
    os << "Bounds\n";
    for (const auto& v : a.variables)
        if (!v.binary) os << " 0 <= " << v.name << " <= 1\n";
    os << "Binary\n";
    for (const auto& v : a.variables)
        if (v.binary) os << ' ' << v.name << '\n';
    os << "End\n";
    if (!os) throw Error("failed writing LP output");
}

std::string export_lp_string(const EncodingArtifact& a) {
    std::ostringstream ss;
    export_lp(a, ss);
    return ss.str();
}

}  // namespace treesense
