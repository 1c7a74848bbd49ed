#include "treesense/reductions.hpp"

#include <string>

namespace treesense {

namespace {

void validate(const SubsetSumInstance& inst) {
    if (inst.U.empty()) throw Error("subset-sum instance needs at least one integer");
    for (auto u : inst.U)
        if (u <= 0) throw Error("subset-sum integers must be positive");
}

Tree stump(FeatureId f, double yes_value, double no_value) {
    Tree t;
    t.nodes = {Node{f, 1.0, 1, 2, 0.0}, Node{-1, 0.0, -1, -1, yes_value}, Node{-1, 0.0, -1, -1, no_value}};
    return t;
}

}  // namespace

std::pair<Ensemble, SensitivityQuery> gen_subsetsum_ensemble(const SubsetSumInstance& inst) {
    validate(inst);
    const int n = static_cast<int>(inst.U.size());
    std::vector<Tree> trees;
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i) {
        trees.push_back(stump(i, 0.0, static_cast<double>(inst.U[i])));
        names.push_back("f" + std::to_string(i));
    }
    const double k = static_cast<double>(inst.k);
    trees.push_back(stump(n, -k - 0.5, -k + 0.5));
    names.push_back("f_prime");

    SensitivityQuery q;
    q.features = {n};
    q.gap = RawGap{0.0};
    return {Ensemble(std::move(trees), n + 1, 2, 0.0, std::move(names)), std::move(q)};
}

bool subsetsum_dp(const SubsetSumInstance& inst, std::int64_t max_cells) {
    validate(inst);
    if (inst.k < 0) return false;
    if (inst.k + 1 > max_cells) throw Error("subset-sum table budget exceeded");
    std::vector<char> reach(static_cast<size_t>(inst.k) + 1, 0);
    reach[0] = 1;
    for (auto u : inst.U) {
        if (u > inst.k) continue;
        for (std::int64_t s = inst.k; s >= u; --s)
            if (reach[s - u]) reach[s] = 1;
    }
    return reach[inst.k] != 0;
}

}  // namespace treesense
