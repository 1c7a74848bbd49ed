#include "treesense/solver.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace treesense {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kInf = std::numeric_limits<double>::infinity();

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double tol_for(double threshold) { return 1e-9 * (1.0 + std::abs(threshold)); }

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

class Search {
public:
    Search(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, const SolveOptions& opts)
        : e_(e), gi_(gi), q_(q), opts_(opts), prob_mode_(uses_marginals(q.mode)) {
        const int nf = e.num_features();
        a_[0].assign(nf, kUnassigned);
        a_[1].assign(nf, kUnassigned);
        in_f_.assign(nf, 0);
        for (FeatureId f : q.features) in_f_[f] = 1;
        C_ = e.num_classes();
        if (e.is_binary()) {
            delta_ = binary_delta(q);
        } else {
            need_ = multiclass_eta(q) + kStrictEps;
            c1_ = q.classes->first;
            c2_ = q.classes->second;
        }

        // Branching order: descending count of leaves whose ancestry mentions f, then feature id.
        std::vector<int> affected(nf, 0);
        tree_affected_.assign(e.trees().size(), 0);
        for (int t = 0; t < static_cast<int>(e.trees().size()); ++t) {
            const auto& nodes = e.trees()[t].nodes;
            for (const Node& n : nodes)
                if (!n.is_leaf() && in_f_[n.feature]) tree_affected_[t] = 1;
            std::vector<std::pair<int, std::vector<char>>> stack;
            stack.push_back({0, std::vector<char>(nf, 0)});
            while (!stack.empty()) {
                auto [n, seen] = std::move(stack.back());
                stack.pop_back();
                if (nodes[n].is_leaf()) {
                    for (int f = 0; f < nf; ++f) affected[f] += seen[f];
                    continue;
                }
                seen[nodes[n].feature] = 1;
                stack.push_back({nodes[n].no, seen});
                stack.push_back({nodes[n].yes, std::move(seen)});
            }
        }
        std::vector<FeatureId> order;
        for (int f = 0; f < nf; ++f)
            if (gi.guarded(f)) order.push_back(f);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return affected[a] > affected[b]; });
        for (FeatureId f : order) {
            if (in_f_[f]) {
                vars_.push_back({f, 1});
                vars_.push_back({f, 2});
            } else {
                vars_.push_back({f, 0});
            }
        }

        if (prob_mode_) {
            const auto& m = *q.marginals;
            suffix_max_.assign(vars_.size() + 1, 0.0);
            for (size_t d = vars_.size(); d-- > 0;) {
                const auto& logs = m.logs[vars_[d].feature];
                const double mx = *std::max_element(logs.begin(), logs.end());
                suffix_max_[d] = suffix_max_[d + 1] + (vars_[d].copy == 0 ? 2.0 * mx : mx);
            }
        }
        if (uses_clauses(q.mode)) {
            clauses_by_feature_.resize(nf);
            for (size_t c = 0; c < q.clauses.size(); ++c)
                for (const auto& l : q.clauses[c].literals) clauses_by_feature_[l.feature].push_back(c);
        }
    }

    Outcome run() {
        start_ = Clock::now();
        dfs(0);
        Outcome out;
        out.stats = stats_;
        out.stats.wall_ms = elapsed_ms(start_);
        out.pair = std::move(best_);
        if (timed_out_)
            out.verdict = Verdict::timeout;
        else
            out.verdict = out.pair ? Verdict::sensitive : Verdict::not_sensitive;
        return out;
    }

private:
    struct Var {
        FeatureId feature;
        int copy;  // 0 = shared by both copies
    };

    int child(int t, int n, int ci) const {
        const Node& nd = e_.trees()[t].nodes[n];
        return a_[ci][nd.feature] < gi_.guard_position(t, n) ? nd.yes : nd.no;
    }

    Range range(int t, int n, int ci) const {
        const Node& nd = e_.trees()[t].nodes[n];
        if (nd.is_leaf()) return {nd.value, nd.value};
        if (a_[ci][nd.feature] != kUnassigned) return range(t, child(t, n, ci), ci);
        const Range y = range(t, nd.yes, ci);
        const Range o = range(t, nd.no, ci);
        return {std::min(y.lo, o.lo), std::max(y.hi, o.hi)};
    }

    // Range of T(x1) - T(x2), coupling the copies while they share a path.
    Range joint(int t, int n1, int n2) const {
        if (n1 != n2) {
            const Range r1 = range(t, n1, 0);
            const Range r2 = range(t, n2, 1);
            return {r1.lo - r2.hi, r1.hi - r2.lo};
        }
        const Node& nd = e_.trees()[t].nodes[n1];
        if (nd.is_leaf()) return {0.0, 0.0};
        const FeatureId f = nd.feature;
        Range r{kInf, -kInf};
        auto take = [&](int c1, int c2) {
            const Range s = joint(t, c1, c2);
            r.lo = std::min(r.lo, s.lo);
            r.hi = std::max(r.hi, s.hi);
        };
        const bool k1 = a_[0][f] != kUnassigned;
        const bool k2 = a_[1][f] != kUnassigned;
        if (!in_f_[f] && !k1) {
            take(nd.yes, nd.yes);
            take(nd.no, nd.no);
            return r;
        }
        std::array<int, 2> d1{nd.yes, nd.no}, d2{nd.yes, nd.no};
        const int n_d1 = k1 ? 1 : 2;
        const int n_d2 = k2 ? 1 : 2;
        if (k1) d1[0] = child(t, n1, 0);
        if (k2) d2[0] = child(t, n1, 1);
        for (int i = 0; i < n_d1; ++i)
            for (int j = 0; j < n_d2; ++j) take(d1[i], d2[j]);
        return r;
    }

    int tree_class(int t) const { return e_.is_binary() ? 1 : e_.trees()[t].class_id; }

    struct Bounds {
        std::vector<Range> cls1, cls2, diff;
    };

    Bounds bounds() const {
        Bounds b;
        b.cls1.assign(C_, {e_.base_score(), e_.base_score()});
        b.cls2 = b.cls1;
        b.diff.assign(C_, {0.0, 0.0});
        for (int t = 0; t < static_cast<int>(e_.trees().size()); ++t) {
            const int c = tree_class(t);
            const Range r1 = range(t, 0, 0);
            const Range r2 = range(t, 0, 1);
            b.cls1[c].lo += r1.lo;
            b.cls1[c].hi += r1.hi;
            b.cls2[c].lo += r2.lo;
            b.cls2[c].hi += r2.hi;
            Range d{0.0, 0.0};
            if (opts_.level >= OptLevel::aff)
                d = joint(t, 0, 0);
            else if (tree_affected_[t])
                d = {r1.lo - r2.hi, r1.hi - r2.lo};
            b.diff[c].lo += d.lo;
            b.diff[c].hi += d.hi;
        }
        return b;
    }

    bool gap_prunes(const Bounds& b) const {
        if (e_.is_binary()) {
            if (b.cls1[1].hi < delta_ - tol_for(delta_)) return true;
            if (b.cls2[1].lo > -delta_ + tol_for(delta_)) return true;
            if (opts_.level >= OptLevel::unaff && b.diff[1].hi < 2 * delta_ - tol_for(2 * delta_)) return true;
            return false;
        }
        const double tol = tol_for(need_);
        for (int c = 0; c < C_; ++c) {
            if (c != c1_ && b.cls1[c1_].hi - b.cls1[c].lo < need_ - tol) return true;
            if (c != c2_ && b.cls2[c2_].hi - b.cls2[c].lo < need_ - tol) return true;
        }
        if (opts_.level >= OptLevel::unaff && b.diff[c1_].hi - b.diff[c2_].lo < 2 * need_ - tol_for(2 * need_))
            return true;
        return false;
    }

    double objective_bound(const Bounds& b) const {
        if (e_.is_binary()) return b.diff[1].hi;
        return b.diff[c1_].hi - b.diff[c2_].lo;
    }

    void assign(const Var& v, int k) {
        if (v.copy != 2) a_[0][v.feature] = k;
        if (v.copy != 1) a_[1][v.feature] = k;
    }

    bool clause_blocks(const Var& v) const {
        if (clauses_by_feature_.empty()) return false;
        for (size_t c : clauses_by_feature_[v.feature]) {
            if (v.copy != 2 && box_contains(q_.clauses[c], a_[0])) return true;
            if (v.copy != 1 && box_contains(q_.clauses[c], a_[1])) return true;
        }
        return false;
    }

    std::vector<double> raw_for(int ci) const {
        std::vector<double> raw(C_, e_.base_score());
        if (e_.is_binary()) {
            double s = e_.base_score();
            for (int t = 0; t < static_cast<int>(e_.trees().size()); ++t)
                s += e_.trees()[t].nodes[leaf_for_assignment(e_.trees()[t], t, gi_, a_[ci])].value;
            raw[0] = -s;
            raw[1] = s;
            return raw;
        }
        for (int t = 0; t < static_cast<int>(e_.trees().size()); ++t)
            raw[e_.trees()[t].class_id] += e_.trees()[t].nodes[leaf_for_assignment(e_.trees()[t], t, gi_, a_[ci])].value;
        return raw;
    }

    double assignment_utility() const {
        const auto& m = *q_.marginals;
        double u = 0.0;
        for (int f = 0; f < gi_.num_features(); ++f)
            if (gi_.guarded(f)) u += m.log_prob(f, a_[0][f]) + m.log_prob(f, a_[1][f]);
        return u;
    }

    double partial_utility(size_t depth) const {
        const auto& m = *q_.marginals;
        double u = 0.0;
        for (size_t d = 0; d < depth; ++d) {
            const Var& v = vars_[d];
            const int ci = v.copy == 2 ? 1 : 0;
            const double lp = m.log_prob(v.feature, a_[ci][v.feature]);
            u += v.copy == 0 ? 2.0 * lp : lp;
        }
        return u;
    }

    void record() {
        Input x1 = representative_input(gi_, a_[0], opts_.data_hint);
        Input x2 = representative_input(gi_, a_[1], opts_.data_hint);
        best_ = make_pair(e_, gi_, q_, std::move(x1), std::move(x2));
    }

    bool budget_exhausted() {
        if (opts_.budget.node_limit && stats_.nodes > opts_.budget.node_limit) return true;
        if ((stats_.nodes & 255) == 0 && elapsed_ms(start_) > opts_.budget.time_limit_s * 1000.0) return true;
        return false;
    }

    // Returns true when the search must stop.
    bool dfs(size_t depth) {
        ++stats_.nodes;
        if (budget_exhausted()) {
            timed_out_ = true;
            return true;
        }
        if (depth == vars_.size()) {
            const auto raw1 = raw_for(0);
            const auto raw2 = raw_for(1);
            if (!gap_holds(e_, q_, raw1, raw2)) return false;
            if (!prob_mode_) {
                record();
                return true;
            }
            const double u = assignment_utility();
            if (!best_utility_ || u > *best_utility_) {
                best_utility_ = u;
                record();
            }
            return false;
        }

        const Var v = vars_[depth];
        const int K = gi_.interval_count(v.feature);
        std::vector<int> order(K);
        std::iota(order.begin(), order.end(), 0);
        if (opts_.level == OptLevel::full) {
            std::vector<double> key(K);
            if (prob_mode_) {
                for (int k = 0; k < K; ++k) key[k] = q_.marginals->log_prob(v.feature, k);
            } else {
                for (int k = 0; k < K; ++k) {
                    assign(v, k);
                    key[k] = objective_bound(bounds());
                }
                assign(v, kUnassigned);
            }
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key[a] > key[b]; });
        }

        for (int k : order) {
            assign(v, k);
            bool stop = false;
            if (clause_blocks(v)) {
                ++stats_.pruned_clause;
            } else if (opts_.bounding && gap_prunes(bounds())) {
                ++stats_.pruned_bound;
            } else if (opts_.bounding && prob_mode_ && best_utility_ &&
                       partial_utility(depth + 1) + suffix_max_[depth + 1] <= *best_utility_ + 1e-12) {
                ++stats_.pruned_bound;
            } else {
                stop = dfs(depth + 1);
            }
            assign(v, kUnassigned);
            if (stop) return true;
        }
        return false;
    }

    const Ensemble& e_;
    const GuardIndex& gi_;
    const SensitivityQuery& q_;
    const SolveOptions& opts_;
    const bool prob_mode_;
    int C_ = 2;
    double delta_ = 0.0;
    double need_ = 0.0;
    int c1_ = 0;
    int c2_ = 0;

    std::array<IntervalAssignment, 2> a_;
    std::vector<char> in_f_;
    std::vector<char> tree_affected_;
    std::vector<Var> vars_;
    std::vector<double> suffix_max_;
    std::vector<std::vector<size_t>> clauses_by_feature_;

    Clock::time_point start_;
    SolveStats stats_;
    bool timed_out_ = false;
    std::optional<CounterexamplePair> best_;
    std::optional<double> best_utility_;
};

}  // namespace

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::sensitive: return "sensitive";
        case Verdict::not_sensitive: return "not_sensitive";
        case Verdict::timeout: return "timeout";
    }
    return "timeout";
}

Verdict parse_verdict(const std::string& s) {
    if (s == "sensitive") return Verdict::sensitive;
    if (s == "not_sensitive") return Verdict::not_sensitive;
    if (s == "timeout") return Verdict::timeout;
    throw Error("unknown verdict '" + s + "'");
}

std::string to_string(CheckReason r) {
    switch (r) {
        case CheckReason::ok: return "ok";
        case CheckReason::dimension: return "dimension";
        case CheckReason::non_finite: return "non_finite";
        case CheckReason::agreement: return "agreement";
        case CheckReason::gap: return "gap";
        case CheckReason::clause: return "clause";
    }
    return "ok";
}

CounterexamplePair make_pair(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, Input x1, Input x2) {
    CounterexamplePair p;
    p.region1 = assignment_of(gi, x1);
    p.region2 = assignment_of(gi, x2);
    p.raw1 = raw_scores(e, x1);
    p.raw2 = raw_scores(e, x2);
    p.prob1 = probs_from_raw(e, p.raw1);
    p.prob2 = probs_from_raw(e, p.raw2);
    if (q.marginals) p.utility_log = utility_log(*q.marginals, gi, x1, x2);
    if (uses_marginals(q.mode) && p.utility_log) {
        p.objective = *p.utility_log;
    } else if (e.is_binary()) {
        p.objective = p.raw1[1] - p.raw2[1];
    } else {
        const auto [c1, c2] = *q.classes;
        p.objective = (p.raw1[c1] - p.raw2[c1]) + (p.raw2[c2] - p.raw1[c2]);
    }
    p.x1 = std::move(x1);
    p.x2 = std::move(x2);
    return p;
}

Outcome solve(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, const SolveOptions& opts) {
    SensitivityQuery vq = q;
    validate_query(e, vq);
    if (gi.num_features() != e.num_features()) throw Error("guard index does not match the model");
    return Search(e, gi, vq, opts).run();
}

Outcome brute_force_oracle(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& query,
                           const OracleOptions& opts) {
    SensitivityQuery q = query;
    validate_query(e, q);
    const auto start = Clock::now();

    // Digits of a mixed-radix counter: (feature, copy mask) with copy 0 = both.
    struct Digit {
        FeatureId f;
        int copy;
    };
    std::vector<Digit> digits;
    double states = 1.0;
    for (int f = 0; f < e.num_features(); ++f) {
        if (!gi.guarded(f)) continue;
        if (q.in_f(f)) {
            digits.push_back({f, 1});
            digits.push_back({f, 2});
            states *= static_cast<double>(gi.interval_count(f)) * gi.interval_count(f);
        } else {
            digits.push_back({f, 0});
            states *= gi.interval_count(f);
        }
    }
    if (states > opts.max_states)
        throw Error("brute-force state space too large (" + std::to_string(states) + " pair-states)");

    const bool prob = uses_marginals(q.mode);
    const bool clauses = uses_clauses(q.mode);
    std::vector<int> counter(digits.size(), 0);
    IntervalAssignment a1(e.num_features(), kUnassigned), a2(e.num_features(), kUnassigned);
    Outcome out;
    std::optional<double> best_u;
    while (true) {
        ++out.stats.nodes;
        for (size_t i = 0; i < digits.size(); ++i) {
            if (digits[i].copy != 2) a1[digits[i].f] = counter[i];
            if (digits[i].copy != 1) a2[digits[i].f] = counter[i];
        }
        Input x1 = representative_input(gi, a1, opts.data_hint);
        Input x2 = representative_input(gi, a2, opts.data_hint);
        bool ok = gap_holds(e, q, raw_scores(e, x1), raw_scores(e, x2));
        if (ok && clauses)
            for (const auto& c : q.clauses)
                if (!clause_satisfied(c, gi, x1) || !clause_satisfied(c, gi, x2)) {
                    ok = false;
                    break;
                }
        if (ok) {
            if (!prob) {
                out.pair = make_pair(e, gi, q, std::move(x1), std::move(x2));
                break;
            }
            const double u = utility_log(*q.marginals, gi, x1, x2);
            if (!best_u || u > *best_u) {
                best_u = u;
                out.pair = make_pair(e, gi, q, std::move(x1), std::move(x2));
            }
        }
        size_t i = 0;
        for (; i < digits.size(); ++i) {
            if (++counter[i] < gi.interval_count(digits[i].f)) break;
            counter[i] = 0;
        }
        if (i == digits.size()) break;
    }
    out.verdict = out.pair ? Verdict::sensitive : Verdict::not_sensitive;
    out.stats.wall_ms = elapsed_ms(start);
    return out;
}

CheckResult check_pair(const Ensemble& e, const GuardIndex& gi, const SensitivityQuery& q, const CounterexamplePair& p) {
    constexpr double tol = 1e-9;
    const auto nf = static_cast<size_t>(e.num_features());
    if (p.x1.size() != nf || p.x2.size() != nf) return {false, CheckReason::dimension};
    for (size_t f = 0; f < nf; ++f)
        if (!std::isfinite(p.x1[f]) || !std::isfinite(p.x2[f])) return {false, CheckReason::non_finite};
    for (size_t f = 0; f < nf; ++f)
        if (std::find(q.features.begin(), q.features.end(), static_cast<FeatureId>(f)) == q.features.end() &&
            p.x1[f] != p.x2[f])
            return {false, CheckReason::agreement};

    const auto raw1 = raw_scores(e, p.x1);
    const auto raw2 = raw_scores(e, p.x2);
    bool gap_ok = true;
    if (e.is_binary()) {
        if (const auto* pg = std::get_if<ProbGap>(&q.gap)) {
            gap_ok = sigmoid(raw1[1]) >= 0.5 + pg->g - tol && sigmoid(raw2[1]) <= 0.5 - pg->g + tol;
        } else if (const auto* rg = std::get_if<RawGap>(&q.gap)) {
            gap_ok = raw1[1] >= rg->delta - tol && raw2[1] <= -rg->delta + tol;
        } else {
            gap_ok = false;
        }
    } else {
        if (!q.classes || !std::holds_alternative<RatioGap>(q.gap)) return {false, CheckReason::gap};
        const double g = std::get<RatioGap>(q.gap).g;
        const auto [c1, c2] = *q.classes;
        const auto p1 = probs_from_raw(e, raw1);
        const auto p2 = probs_from_raw(e, raw2);
        for (int c = 0; c < e.num_classes(); ++c) {
            if (c != c1 && !(p1[c1] >= g * p1[c] - tol)) gap_ok = false;
            if (c != c2 && !(p2[c2] >= g * p2[c] - tol)) gap_ok = false;
        }
    }
    if (!gap_ok) return {false, CheckReason::gap};

    if (uses_clauses(q.mode))
        for (const auto& c : q.clauses)
            if (!clause_satisfied(c, gi, p.x1) || !clause_satisfied(c, gi, p.x2)) return {false, CheckReason::clause};
    return {true, CheckReason::ok};
}

bool depth1_poly_check(const Ensemble& e, std::span<const FeatureId> F, const Depth1Options& opts) {
    if (!e.is_binary()) throw Error("depth-1 check supports binary ensembles only");
    std::vector<char> in_f(e.num_features(), 0);
    for (FeatureId f : F) {
        if (f < 0 || f >= e.num_features()) throw Error("feature id out of range in F");
        in_f[f] = 1;
    }
    // S(f): stumps grouped by split feature.
    std::map<FeatureId, std::vector<const Tree*>> by_feature;
    double constant = e.base_score();
    for (const Tree& t : e.trees()) {
        if (t.depth() > 1) throw Error("depth-1 check requires every tree to have depth <= 1");
        if (t.nodes[0].is_leaf())
            constant += t.nodes[0].value;
        else
            by_feature[t.nodes[0].feature].push_back(&t);
    }
    // The |S(f)|+1 distinct sums of a feature's stumps, one per threshold interval.
    auto sums_of = [](const std::vector<const Tree*>& stumps) {
        std::vector<double> th;
        for (const Tree* t : stumps) th.push_back(t->nodes[0].threshold);
        std::sort(th.begin(), th.end());
        th.erase(std::unique(th.begin(), th.end()), th.end());
        std::vector<double> points{std::nextafter(th.front(), -kInf)};
        points.insert(points.end(), th.begin(), th.end());
        std::vector<double> out;
        for (double x : points) {
            double s = 0.0;
            for (const Tree* t : stumps) {
                const Node& r = t->nodes[0];
                s += t->nodes[x < r.threshold ? r.yes : r.no].value;
            }
            out.push_back(s);
        }
        return out;
    };

    double lo = 0.0, hi = 0.0;
    std::vector<std::vector<double>> free_sums;
    double combos = 1.0;
    for (const auto& [f, stumps] : by_feature) {
        auto sums = sums_of(stumps);
        if (in_f[f]) {
            lo += *std::min_element(sums.begin(), sums.end());
            hi += *std::max_element(sums.begin(), sums.end());
        } else {
            combos *= static_cast<double>(sums.size());
            free_sums.push_back(std::move(sums));
        }
    }
    if (static_cast<int>(free_sums.size()) > opts.max_free_features)
        throw Error("too many features outside F for the depth-1 check");
    if (combos > opts.max_combinations) throw Error("depth-1 check combination bound exceeded");

    std::vector<size_t> idx(free_sums.size(), 0);
    while (true) {
        double c = constant;
        for (size_t i = 0; i < free_sums.size(); ++i) c += free_sums[i][idx[i]];
        if (c + hi > 0.0 && c + lo < 0.0) return true;
        size_t i = 0;
        for (; i < idx.size(); ++i) {
            if (++idx[i] < free_sums[i].size()) break;
            idx[i] = 0;
        }
        if (i == idx.size()) return false;
    }
}

}  // namespace treesense
