#include "treesense/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

namespace treesense {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double normalized(const Scaler& s, FeatureId f, double v) {
    if (std::isinf(v)) return v;
    return s.apply(f, v);
}

}  // namespace

Scaler fit_scaler(const Dataset& d) {
    if (d.rows.empty()) throw Error("cannot fit a scaler on an empty dataset");
    const size_t nf = d.rows[0].size();
    Scaler s{std::vector<double>(nf, kInf), std::vector<double>(nf, -kInf)};
    for (const auto& r : d.rows)
        for (size_t f = 0; f < nf; ++f) {
            s.min[f] = std::min(s.min[f], r[f]);
            s.max[f] = std::max(s.max[f], r[f]);
        }
    return s;
}

bool RegionBox::contains(std::span<const double> x) const {
    for (size_t f = 0; f < lo.size(); ++f)
        if (!(x[f] >= lo[f] && x[f] < hi[f])) return false;
    return true;
}

RegionBox interval_box(const GuardIndex& gi, const IntervalAssignment& a) {
    const int nf = gi.num_features();
    RegionBox b{std::vector<double>(nf, -kInf), std::vector<double>(nf, kInf)};
    for (int f = 0; f < nf; ++f)
        if (gi.guarded(f) && a[f] != kUnassigned) {
            b.lo[f] = gi.lower(f, a[f]);
            b.hi[f] = gi.upper(f, a[f]);
        }
    return b;
}

RegionBox leaf_pattern_box(const Ensemble& e, std::span<const double> x) {
    const int nf = e.num_features();
    RegionBox b{std::vector<double>(nf, -kInf), std::vector<double>(nf, kInf)};
    for (const Tree& t : e.trees()) {
        int n = 0;
        while (!t.nodes[n].is_leaf()) {
            const Node& nd = t.nodes[n];
            if (x[nd.feature] < nd.threshold) {
                b.hi[nd.feature] = std::min(b.hi[nd.feature], nd.threshold);
                n = nd.yes;
            } else {
                b.lo[nd.feature] = std::max(b.lo[nd.feature], nd.threshold);
                n = nd.no;
            }
        }
    }
    return b;
}

RegionBox pair_region_box(const Ensemble& e, const CounterexamplePair& p, std::span<const FeatureId> F) {
    RegionBox b = leaf_pattern_box(e, p.x1);
    const RegionBox b2 = leaf_pattern_box(e, p.x2);
    for (size_t f = 0; f < b.lo.size(); ++f) {
        b.lo[f] = std::max(b.lo[f], b2.lo[f]);
        b.hi[f] = std::min(b.hi[f], b2.hi[f]);
    }
    for (FeatureId f : F) {
        b.lo[f] = -kInf;
        b.hi[f] = kInf;
    }
    return b;
}

RegionDistanceReport region_distance(const Dataset& d, const RegionBox& box, std::span<const FeatureId> F,
                                     const Scaler& scaler) {
    if (d.rows.empty()) throw Error("region distance needs a non-empty dataset");
    const size_t nf = box.lo.size();
    if (scaler.min.size() != nf || d.rows[0].size() != nf) throw Error("dataset, scaler and region disagree on width");
    std::vector<char> skip(nf, 0);
    for (FeatureId f : F) skip[f] = 1;
    for (size_t f = 0; f < nf; ++f)
        if (scaler.degenerate(static_cast<FeatureId>(f))) skip[f] = 1;

    RegionDistanceReport best;
    best.distance = kInf;
    std::vector<double> gaps(nf);
    for (size_t r = 0; r < d.rows.size(); ++r) {
        double sq = 0.0;
        for (size_t f = 0; f < nf; ++f) {
            gaps[f] = 0.0;
            if (skip[f]) continue;
            const auto fi = static_cast<FeatureId>(f);
            const double v = scaler.apply(fi, d.rows[r][f]);
            const double lo = normalized(scaler, fi, box.lo[f]);
            const double hi = normalized(scaler, fi, box.hi[f]);
            if (v < lo)
                gaps[f] = lo - v;
            else if (v > hi)
                gaps[f] = v - hi;
            sq += gaps[f] * gaps[f];
        }
        const double dist = std::sqrt(sq);
        if (dist < best.distance) {
            best.distance = dist;
            best.nearest_row_index = static_cast<int>(r);
            best.contributions = gaps;
        }
    }
    return best;
}

RegionDistanceReport region_distance(const Ensemble& e, const Dataset& d, const CounterexamplePair& p,
                                     std::span<const FeatureId> F, const Scaler& scaler) {
    return region_distance(d, pair_region_box(e, p, F), F, scaler);
}

ComparisonReport compare_modes(const std::vector<InstanceResult>& results, double tie_eps) {
    std::vector<std::string> modes;
    std::map<std::string, std::map<std::string, const InstanceResult*>> by_mode;
    for (const auto& r : results) {
        if (!by_mode.count(r.mode)) modes.push_back(r.mode);
        auto& slot = by_mode[r.mode][r.instance];
        if (slot) throw Error("duplicate result for instance '" + r.instance + "' in mode '" + r.mode + "'");
        if (r.verdict == Verdict::sensitive && !r.distance)
            throw Error("sensitive result without a distance for instance '" + r.instance + "'");
        slot = &r;
    }
    for (const auto& m : modes) {
        const auto& a = by_mode[m];
        const auto& ref = by_mode[modes.front()];
        bool same = a.size() == ref.size();
        for (auto it = a.begin(), jt = ref.begin(); same && it != a.end(); ++it, ++jt) same = it->first == jt->first;
        if (!same) throw Error("mode '" + m + "' covers a different instance set than '" + modes.front() + "'");
    }

    ComparisonReport out;
    for (const auto& m : modes) {
        ModeSummary s{m, 0, std::nullopt};
        double sum = 0.0;
        for (const auto& [id, r] : by_mode[m])
            if (r->verdict == Verdict::sensitive) {
                ++s.sensitive;
                sum += *r->distance;
            }
        if (s.sensitive) s.mean_distance = sum / s.sensitive;
        out.modes.push_back(std::move(s));
    }
    for (size_t j = 0; j < modes.size(); ++j)
        for (size_t i = 0; i < j; ++i) {
            PairwiseRates p{modes[j], modes[i]};
            int win = 0, draw = 0, loss = 0;
            const auto& a = by_mode[modes[j]];
            const auto& b = by_mode[modes[i]];
            for (const auto& [id, ra] : a) {
                const InstanceResult* rb = b.at(id);
                if (ra->verdict != Verdict::sensitive || rb->verdict != Verdict::sensitive) continue;
                const double delta = *ra->distance - *rb->distance;
                if (std::abs(delta) <= tie_eps)
                    ++draw;
                else if (delta < 0)
                    ++win;
                else
                    ++loss;
            }
            p.instances = win + draw + loss;
            if (p.instances) {
                p.win = static_cast<double>(win) / p.instances;
                p.draw = static_cast<double>(draw) / p.instances;
                p.loss = static_cast<double>(loss) / p.instances;
            }
            out.pairs.push_back(std::move(p));
        }
    return out;
}

namespace {

nlohmann::json result_json(const InstanceResult& r) {
    nlohmann::json j{{"instance", r.instance}, {"mode", r.mode}, {"verdict", to_string(r.verdict)},
                     {"runtime_ms", r.runtime_ms}};
    j["distance"] = r.distance ? nlohmann::json(*r.distance) : nlohmann::json();
    j["utility_log"] = r.utility_log ? nlohmann::json(*r.utility_log) : nlohmann::json();
    return j;
}

InstanceResult result_from(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("result entries must be objects");
    InstanceResult r;
    try {
        r.instance = j.at("instance").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.verdict = parse_verdict(j.at("verdict").get<std::string>());
        if (j.contains("distance") && !j["distance"].is_null()) r.distance = j["distance"].get<double>();
        if (j.contains("utility_log") && !j["utility_log"].is_null()) r.utility_log = j["utility_log"].get<double>();
        if (j.contains("runtime_ms")) r.runtime_ms = j["runtime_ms"].get<double>();
    } catch (const nlohmann::json::exception& ex) {
        throw Error(std::string("malformed result entry: ") + ex.what());
    }
    return r;
}

}  // namespace

std::string dump_report(const ComparisonReport& r) {
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& m : r.modes)
        modes.push_back({{"mode", m.mode},
                         {"sensitive", m.sensitive},
                         {"mean_distance", m.mean_distance ? nlohmann::json(*m.mean_distance) : nlohmann::json()}});
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : r.pairs)
        pairs.push_back({{"a", p.a},
                         {"b", p.b},
                         {"instances", p.instances},
                         {"win_pct", 100.0 * p.win},
                         {"draw_pct", 100.0 * p.draw},
                         {"loss_pct", 100.0 * p.loss}});
    return nlohmann::json{{"modes", modes}, {"pairwise", pairs}}.dump(2) + "\n";
}

std::string dump_results(const std::vector<InstanceResult>& results) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : results) arr.push_back(result_json(r));
    return arr.dump(2) + "\n";
}

std::vector<InstanceResult> load_results(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& ex) {
        throw Error(std::string("result file is not valid JSON: ") + ex.what());
    }
    std::vector<InstanceResult> out;
    if (j.is_array())
        for (const auto& x : j) out.push_back(result_from(x));
    else
        out.push_back(result_from(j));
    return out;
}

}  // namespace treesense
