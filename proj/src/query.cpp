#include "treesense/query.hpp"

#include <algorithm>
#include <cmath>

namespace treesense {

std::string to_string(DataMode m) {
    switch (m) {
        case DataMode::none: return "none";
        case DataMode::prob: return "prob";
        case DataMode::clause: return "clause";
        case DataMode::probclause: return "probclause";
    }
    return "none";
}

DataMode parse_data_mode(const std::string& s) {
    if (s == "none") return DataMode::none;
    if (s == "prob") return DataMode::prob;
    if (s == "clause") return DataMode::clause;
    if (s == "probclause") return DataMode::probclause;
    throw Error("unknown mode '" + s + "' (expected none, prob, clause or probclause)");
}

bool SensitivityQuery::in_f(FeatureId f) const { return std::binary_search(features.begin(), features.end(), f); }

double delta_from_gap(double g) {
    if (!(g >= 0.0)) throw Error("probability gap must be >= 0");
    if (!(g < 0.5)) throw Error("probability gap must be < 0.5");
    return std::log((0.5 + g) / (0.5 - g));
}

double eta_from_gap(double g) {
    if (!(g > 0.0)) throw Error("ratio gap must be > 0");
    if (g < 1.0) throw Error("ratio gap must be >= 1");
    return std::log(g);
}

void validate_query(const Ensemble& e, SensitivityQuery& q) {
    std::sort(q.features.begin(), q.features.end());
    q.features.erase(std::unique(q.features.begin(), q.features.end()), q.features.end());
    for (FeatureId f : q.features)
        if (f < 0 || f >= e.num_features()) throw Error("sensitive feature id out of range");

    if (e.is_binary()) {
        if (q.classes) throw Error("class pair given for a binary model");
        if (std::holds_alternative<RatioGap>(q.gap)) throw Error("ratio gap requires a multiclass model");
        if (auto* pg = std::get_if<ProbGap>(&q.gap)) delta_from_gap(pg->g);
        if (auto* rg = std::get_if<RawGap>(&q.gap))
            if (!(rg->delta >= 0.0) || !std::isfinite(rg->delta)) throw Error("raw gap must be finite and >= 0");
    } else {
        if (!q.classes) throw Error("multiclass query requires a class pair");
        auto [c1, c2] = *q.classes;
        if (c1 < 0 || c1 >= e.num_classes() || c2 < 0 || c2 >= e.num_classes()) throw Error("class id out of range");
        if (c1 == c2) throw Error("class pair must name two different classes");
        if (!std::holds_alternative<RatioGap>(q.gap)) throw Error("multiclass models take a ratio gap");
        eta_from_gap(std::get<RatioGap>(q.gap).g);
    }
    if (uses_marginals(q.mode) && !q.marginals) throw Error("mode " + to_string(q.mode) + " requires marginals");
    if (q.marginals && static_cast<int>(q.marginals->logs.size()) != e.num_features())
        throw Error("marginal table does not match the model");
    if (uses_clauses(q.mode)) {
        for (const auto& c : q.clauses)
            for (const auto& l : c.literals)
                if (l.feature < 0 || l.feature >= e.num_features()) throw Error("clause feature out of range");
    }
}

double binary_delta(const SensitivityQuery& q) {
    double d = 0.0;
    if (auto* pg = std::get_if<ProbGap>(&q.gap)) d = delta_from_gap(pg->g);
    if (auto* rg = std::get_if<RawGap>(&q.gap)) d = rg->delta;
    return q.strict_zero ? d + kStrictEps : d;
}

double multiclass_eta(const SensitivityQuery& q) { return eta_from_gap(std::get<RatioGap>(q.gap).g); }

bool gap_holds(const Ensemble& e, const SensitivityQuery& q, const std::vector<double>& raw1,
               const std::vector<double>& raw2) {
    if (e.is_binary()) {
        const double d = binary_delta(q);
        return raw1[1] >= d && raw2[1] <= -d;
    }
    const double need = multiclass_eta(q) + kStrictEps;
    auto [c1, c2] = *q.classes;
    for (int c = 0; c < e.num_classes(); ++c) {
        if (c != c1 && !(raw1[c1] - raw1[c] >= need)) return false;
        if (c != c2 && !(raw2[c2] - raw2[c] >= need)) return false;
    }
    return true;
}

}  // namespace treesense
