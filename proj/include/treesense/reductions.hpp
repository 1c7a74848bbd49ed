#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "treesense/ensemble.hpp"
#include "treesense/query.hpp"

namespace treesense {

struct SubsetSumInstance {
    std::vector<std::int64_t> U;
    std::int64_t k = 0;
};

/**
 * Depth-1 ensemble that is {f_prime}-sensitive at raw gap 0 iff some subset of U sums to k.
 *
 * Features f0..f{n-1} select the integers, the last feature is f_prime. Booleans are encoded
 * as reals with the guard X < 1 (0 = false, 1 = true).
 */
std::pair<Ensemble, SensitivityQuery> gen_subsetsum_ensemble(const SubsetSumInstance& inst);

/** Reachable-sums table; throws when the table would exceed max_cells entries. */
bool subsetsum_dp(const SubsetSumInstance& inst, std::int64_t max_cells = 100'000'000);

}  // namespace treesense
