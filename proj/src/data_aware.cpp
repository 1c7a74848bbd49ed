#include "treesense/data_aware.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace treesense {

using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_cell(const std::string& cell, size_t line_no) {
    double v = 0.0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    if (b != e && *b == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || !std::isfinite(v))
        throw Error("non-numeric or non-finite cell '" + cell + "' on line " + std::to_string(line_no));
    return v;
}

json bound_to_json(double v) { return std::isinf(v) ? json(nullptr) : json(v); }

int resolve_bound(const GuardIndex& gi, FeatureId f, const json& v, bool upper) {
    const int last = static_cast<int>(gi.thresholds(f).size()) - 1;
    if (v.is_null()) return upper ? last : 0;
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "-inf") return 0;
        if (s == "inf" || s == "+inf") return last;
        throw Error("bad clause bound '" + s + "'");
    }
    if (!v.is_number()) throw Error("clause bound must be a number or null");
    const int pos = gi.position_of(f, v.get<double>());
    if (pos < 0) throw Error("clause threshold for feature " + std::to_string(f) + " not found among model guards");
    return pos;
}

// Count grid over a small set of features with inclusive prefix sums along each axis.
class BoxCounter {
public:
    BoxCounter(const std::vector<int>& dims, const std::vector<std::vector<int>>& row_cells) : dims_(dims) {
        strides_.resize(dims_.size());
        size_t total = 1;
        for (size_t i = dims_.size(); i-- > 0;) {
            strides_[i] = total;
            total *= static_cast<size_t>(dims_[i]);
        }
        sums_.assign(total, 0);
        for (const auto& cell : row_cells) {
            size_t off = 0;
            for (size_t i = 0; i < dims_.size(); ++i) off += strides_[i] * static_cast<size_t>(cell[i]);
            ++sums_[off];
        }
        for (size_t axis = 0; axis < dims_.size(); ++axis)
            for (size_t off = 0; off < total; ++off)
                if ((off / strides_[axis]) % dims_[axis] != 0) sums_[off] += sums_[off - strides_[axis]];
    }

    /** Rows with cell index in [lo_i, hi_i) on every axis. */
    long count(const std::vector<int>& lo, const std::vector<int>& hi) const {
        const size_t w = dims_.size();
        long total = 0;
        for (unsigned mask = 0; mask < (1u << w); ++mask) {
            long sign = 1;
            size_t off = 0;
            bool skip = false;
            for (size_t i = 0; i < w; ++i) {
                int idx;
                if (mask & (1u << i)) {
                    idx = lo[i] - 1;
                    sign = -sign;
                } else {
                    idx = hi[i] - 1;
                }
                if (idx < 0) {
                    skip = true;
                    break;
                }
                off += strides_[i] * static_cast<size_t>(idx);
            }
            if (!skip) total += sign * sums_[off];
        }
        return total;
    }

private:
    std::vector<int> dims_;
    std::vector<size_t> strides_;
    std::vector<long> sums_;
};

bool box_empty_by_scan(const Clause& c, const std::vector<std::vector<int>>& cells_by_feature, size_t nrows) {
    for (size_t r = 0; r < nrows; ++r) {
        bool inside = true;
        for (const auto& lit : c.literals) {
            const int k = cells_by_feature[lit.feature][r];
            if (k < lit.lo || k >= lit.hi) {
                inside = false;
                break;
            }
        }
        if (inside) return false;
    }
    return true;
}

}  // namespace

Dataset parse_csv(const std::string& text) {
    Dataset d;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto cells = split_commas(line);
        if (!have_header) {
            d.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != d.header.size())
            throw Error("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(d.header.size()));
        Input row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_cell(c, line_no));
        d.rows.push_back(std::move(row));
    }
    if (!have_header) throw Error("CSV is empty");
    return d;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

void validate_dataset(const Dataset& d, int num_features) {
    if (d.rows.empty()) throw Error("dataset has no rows");
    for (const auto& r : d.rows) {
        if (static_cast<int>(r.size()) != num_features)
            throw Error("dataset has " + std::to_string(r.size()) + " columns, model has " +
                        std::to_string(num_features) + " features");
        for (double v : r)
            if (!std::isfinite(v)) throw Error("dataset contains NaN or infinity");
    }
}

DataHint make_data_hint(const Dataset& d) {
    if (d.rows.empty()) throw Error("dataset has no rows");
    const size_t nf = d.rows[0].size();
    DataHint h;
    h.min.assign(nf, kInf);
    h.max.assign(nf, -kInf);
    h.median.assign(nf, 0.0);
    std::vector<double> col(d.rows.size());
    for (size_t f = 0; f < nf; ++f) {
        for (size_t r = 0; r < d.rows.size(); ++r) {
            col[r] = d.rows[r][f];
            h.min[f] = std::min(h.min[f], col[r]);
            h.max[f] = std::max(h.max[f], col[r]);
        }
        std::sort(col.begin(), col.end());
        const size_t n = col.size();
        h.median[f] = n % 2 ? col[n / 2] : (col[n / 2 - 1] + col[n / 2]) / 2.0;
    }
    return h;
}

MarginalTable estimate_marginals(const GuardIndex& gi, const Dataset& d, double alpha) {
    validate_dataset(d, gi.num_features());
    if (alpha < 0) throw Error("smoothing alpha must be >= 0");
    MarginalTable m;
    m.probs.resize(gi.num_features());
    m.logs.resize(gi.num_features());
    for (int f = 0; f < gi.num_features(); ++f) {
        if (!gi.guarded(f)) {
            m.probs[f] = {1.0};
            m.logs[f] = {0.0};
            continue;
        }
        const int K = gi.interval_count(f);
        std::vector<double> counts(K, alpha);
        for (const auto& r : d.rows) counts[gi.interval_of(f, r[f])] += 1.0;
        const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
        m.probs[f].resize(K);
        m.logs[f].resize(K);
        for (int k = 0; k < K; ++k) {
            m.probs[f][k] = counts[k] / total;
            m.logs[f][k] = std::log(m.probs[f][k]);
        }
    }
    return m;
}

double utility_log(const MarginalTable& m, const GuardIndex& gi, const Input& x1, const Input& x2) {
    double u = 0.0;
    for (int f = 0; f < gi.num_features(); ++f) {
        if (!gi.guarded(f)) continue;
        u += m.log_prob(f, gi.interval_of(f, x1[f])) + m.log_prob(f, gi.interval_of(f, x2[f]));
    }
    return u;
}

ObjectiveCoeffs objective_coeffs(const MarginalTable& m, const GuardIndex& gi) {
    if (static_cast<int>(m.logs.size()) != gi.num_features()) throw Error("marginal table does not cover the model");
    ObjectiveCoeffs oc;
    oc.coef.resize(gi.num_features());
    for (int f = 0; f < gi.num_features(); ++f) {
        if (!gi.guarded(f)) continue;
        const int K = gi.interval_count(f);
        if (static_cast<int>(m.logs[f].size()) != K) throw Error("missing marginal for feature " + std::to_string(f));
        for (int j = 1; j < K; ++j) oc.coef[f].push_back(m.logs[f][j - 1] - m.logs[f][j]);
        // Pinned top predicate (X < +inf) is 1 in both copies.
        oc.constant -= 2.0 * m.logs[f][K - 1];
    }
    return oc;
}

std::string dump_marginals(const MarginalTable& m) {
    json doc = json::array();
    for (size_t f = 0; f < m.probs.size(); ++f) doc.push_back(json{{"feature", f}, {"probs", m.probs[f]}});
    return doc.dump(1);
}

MarginalTable load_marginals(const std::string& text, const GuardIndex& gi) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& ex) {
        throw Error(std::string("malformed marginals JSON: ") + ex.what());
    }
    MarginalTable m;
    m.probs.resize(gi.num_features());
    m.logs.resize(gi.num_features());
    for (int f = 0; f < gi.num_features(); ++f)
        if (!gi.guarded(f)) m.probs[f] = {1.0};
    for (const auto& entry : doc) {
        const int f = entry.at("feature").get<int>();
        if (f < 0 || f >= gi.num_features()) throw Error("marginal feature out of range");
        m.probs[f] = entry.at("probs").get<std::vector<double>>();
    }
    for (int f = 0; f < gi.num_features(); ++f) {
        const size_t K = gi.guarded(f) ? gi.interval_count(f) : 1;
        if (m.probs[f].size() != K) throw Error("marginal for feature " + std::to_string(f) + " has wrong length");
        double s = 0.0;
        for (double p : m.probs[f]) {
            if (!(p > 0.0)) throw Error("marginal probabilities must be positive");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9) throw Error("marginals for feature " + std::to_string(f) + " do not sum to 1");
        for (double p : m.probs[f]) m.logs[f].push_back(std::log(p));
    }
    return m;
}

bool box_contains(const Clause& c, const IntervalAssignment& a) {
    for (const auto& lit : c.literals) {
        const int k = a[lit.feature];
        if (k < lit.lo || k >= lit.hi) return false;
    }
    return true;
}

bool point_in_box(const Clause& c, const GuardIndex& gi, const Input& x) {
    for (const auto& lit : c.literals) {
        const double v = x[lit.feature];
        if (!(v >= gi.thresholds(lit.feature)[lit.lo] && v < gi.thresholds(lit.feature)[lit.hi])) return false;
    }
    return true;
}

bool clause_satisfied(const Clause& c, const GuardIndex& gi, const Input& x) { return !point_in_box(c, gi, x); }

bool box_subsumed(const Clause& inner, const Clause& outer) {
    for (const auto& o : outer.literals) {
        auto it = std::find_if(inner.literals.begin(), inner.literals.end(),
                               [&](const ClauseLiteral& l) { return l.feature == o.feature; });
        if (it == inner.literals.end()) return false;
        if (it->lo < o.lo || it->hi > o.hi) return false;
    }
    return true;
}

std::vector<Clause> mine_clauses(const Ensemble& e, const GuardIndex& gi, const Dataset& d, const MineOptions& opts) {
    validate_dataset(d, gi.num_features());
    if (opts.max_width < 1) throw Error("max_width must be >= 1");
    std::vector<Clause> result;
    if (opts.max_clauses <= 0) return result;

    std::vector<int> guard_count(gi.num_features(), 0);
    for (const Tree& t : e.trees())
        for (const Node& n : t.nodes)
            if (!n.is_leaf()) ++guard_count[n.feature];
    std::vector<FeatureId> feats;
    for (int f = 0; f < gi.num_features(); ++f)
        if (gi.guarded(f)) feats.push_back(f);
    std::stable_sort(feats.begin(), feats.end(), [&](int a, int b) { return guard_count[a] > guard_count[b]; });
    if (opts.feature_budget && static_cast<int>(feats.size()) > *opts.feature_budget) feats.resize(*opts.feature_budget);
    std::sort(feats.begin(), feats.end());

    const size_t nrows = d.rows.size();
    std::vector<std::vector<int>> cells(gi.num_features());
    for (FeatureId f : feats) {
        cells[f].resize(nrows);
        for (size_t r = 0; r < nrows; ++r) cells[f][r] = gi.interval_of(f, d.rows[r][f]);
    }

    // Candidate literals per feature, excluding the trivially-true full range.
    std::vector<std::vector<ClauseLiteral>> lits(gi.num_features());
    for (FeatureId f : feats) {
        const int K = gi.interval_count(f);
        for (int lo = 0; lo < K; ++lo)
            for (int hi = lo + 1; hi <= K; ++hi)
                if (!(lo == 0 && hi == K)) lits[f].push_back({f, lo, hi});
    }

    std::map<std::vector<int>, std::vector<Clause>> emitted_by_set;
    auto subsumed_by_emitted = [&](const Clause& c) {
        const int w = c.width();
        for (unsigned mask = 1; mask < (1u << w); ++mask) {
            std::vector<int> key;
            for (int i = 0; i < w; ++i)
                if (mask & (1u << i)) key.push_back(c.literals[i].feature);
            auto it = emitted_by_set.find(key);
            if (it == emitted_by_set.end()) continue;
            for (const auto& o : it->second)
                if (box_subsumed(c, o)) return true;
        }
        return false;
    };
    auto feature_set = [](const Clause& c) {
        std::vector<int> key;
        for (const auto& l : c.literals) key.push_back(l.feature);
        return key;
    };

    const int nf = static_cast<int>(feats.size());
    for (int w = 1; w <= std::min(opts.max_width, nf); ++w) {
        struct Found {
            int score;
            size_t combo;
            size_t order;
            Clause clause;
        };
        std::vector<Found> stage;
        std::vector<int> idx(w);
        std::iota(idx.begin(), idx.end(), 0);
        size_t combo_no = 0;
        while (true) {
            std::vector<FeatureId> combo(w);
            std::vector<int> dims(w);
            for (int i = 0; i < w; ++i) {
                combo[i] = feats[idx[i]];
                dims[i] = gi.interval_count(combo[i]);
            }
            std::vector<std::vector<int>> row_cells(nrows, std::vector<int>(w));
            for (size_t r = 0; r < nrows; ++r)
                for (int i = 0; i < w; ++i) row_cells[r][i] = cells[combo[i]][r];
            BoxCounter counter(dims, row_cells);

            // All literal tuples for this combo, widest boxes first.
            struct Cand {
                int score;
                std::vector<int> pick;
            };
            std::vector<Cand> cands;
            std::vector<int> pick(w, 0);
            while (true) {
                int score = 0;
                for (int i = 0; i < w; ++i) {
                    const auto& l = lits[combo[i]][pick[i]];
                    score += l.lo - l.hi;
                }
                cands.push_back({score, pick});
                int i = w - 1;
                while (i >= 0 && ++pick[i] == static_cast<int>(lits[combo[i]].size())) pick[i--] = 0;
                if (i < 0) break;
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score < b.score; });

            std::vector<int> lo(w), hi(w);
            size_t order = 0;
            for (const auto& cand : cands) {
                Clause c;
                for (int i = 0; i < w; ++i) {
                    const auto& l = lits[combo[i]][cand.pick[i]];
                    c.literals.push_back(l);
                    lo[i] = l.lo;
                    hi[i] = l.hi;
                }
                if (counter.count(lo, hi) != 0) continue;
                if (subsumed_by_emitted(c)) continue;
                // Greedy literal pruning: drop while the box stays empty.
                for (size_t i = 0; i < c.literals.size() && c.literals.size() > 1;) {
                    Clause trial = c;
                    trial.literals.erase(trial.literals.begin() + static_cast<long>(i));
                    if (box_empty_by_scan(trial, cells, nrows))
                        c = std::move(trial);
                    else
                        ++i;
                }
                if (c.width() < w && subsumed_by_emitted(c)) continue;
                emitted_by_set[feature_set(c)].push_back(c);
                stage.push_back({cand.score, combo_no, order++, std::move(c)});
            }

            ++combo_no;
            int i = w - 1;
            while (i >= 0 && idx[i] == nf - w + i) --i;
            if (i < 0) break;
            ++idx[i];
            for (int j = i + 1; j < w; ++j) idx[j] = idx[j - 1] + 1;
        }
        std::stable_sort(stage.begin(), stage.end(), [](const Found& a, const Found& b) {
            if (a.score != b.score) return a.score < b.score;
            if (a.combo != b.combo) return a.combo < b.combo;
            return a.order < b.order;
        });
        for (auto& f : stage) {
            result.push_back(std::move(f.clause));
            if (static_cast<int>(result.size()) >= opts.max_clauses) return result;
        }
    }
    return result;
}

std::string dump_clauses(const std::vector<Clause>& clauses, const GuardIndex& gi) {
    json doc = json::array();
    for (const auto& c : clauses) {
        json lits = json::array();
        for (const auto& l : c.literals)
            lits.push_back(json{{"feature", l.feature},
                                {"lb", bound_to_json(gi.thresholds(l.feature)[l.lo])},
                                {"ub", bound_to_json(gi.thresholds(l.feature)[l.hi])}});
        doc.push_back(json{{"literals", std::move(lits)}});
    }
    return doc.dump(1);
}

std::vector<Clause> load_clauses(const std::string& text, const GuardIndex& gi) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& ex) {
        throw Error(std::string("malformed clause JSON: ") + ex.what());
    }
    if (!doc.is_array()) throw Error("clause file must be a JSON list");
    std::vector<Clause> out;
    for (const auto& jc : doc) {
        if (!jc.is_object() || !jc.contains("literals") || !jc["literals"].is_array())
            throw Error("clause entry missing 'literals'");
        Clause c;
        for (const auto& jl : jc["literals"]) {
            if (!jl.contains("feature") || !jl["feature"].is_number_integer()) throw Error("literal missing 'feature'");
            const int f = jl["feature"].get<int>();
            if (f < 0 || f >= gi.num_features()) throw Error("clause feature out of range");
            if (!gi.guarded(f)) throw Error("clause references unguarded feature " + std::to_string(f));
            ClauseLiteral l;
            l.feature = f;
            l.lo = resolve_bound(gi, f, jl.contains("lb") ? jl["lb"] : json(nullptr), false);
            l.hi = resolve_bound(gi, f, jl.contains("ub") ? jl["ub"] : json(nullptr), true);
            if (l.lo >= l.hi) throw Error("clause literal has empty range");
            c.literals.push_back(l);
        }
        if (c.literals.empty()) throw Error("clause with no literals");
        std::sort(c.literals.begin(), c.literals.end(),
                  [](const ClauseLiteral& a, const ClauseLiteral& b) { return a.feature < b.feature; });
        for (size_t i = 1; i < c.literals.size(); ++i)
            if (c.literals[i].feature == c.literals[i - 1].feature) throw Error("clause repeats a feature");
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace treesense
