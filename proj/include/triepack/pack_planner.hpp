#pragma once

// Partitioning a trie's trajectories into packs under a token budget.
//
// The cost of a pack is the number of tokens it materializes: the total run
// length of the union of its members' root-to-terminal paths. Plans minimize
// total cost, then pack count.

#include "triepack/trie.hpp"

#include <string>
#include <vector>

namespace triepack {

struct PackPlan {
    std::vector<std::vector<TrajIndex>> packs;  // each ascending; packs ordered by first member
    std::size_t budget = 0;
    std::vector<std::size_t> cost_per_pack;
    std::size_t total_cost = 0;
};

inline constexpr std::size_t kDefaultDpWidth = 12;

// Bottom-up bundle merging: exact subset-partition DP at nodes with at most
// `dp_width` open bundles, first-fit-decreasing above that.
// Throws InfeasibleError if a trajectory is longer than `budget`,
// std::invalid_argument if dp_width is 0 or above 20.
PackPlan plan_packs(const Trie& trie, std::size_t budget, std::size_t dp_width = kDefaultDpWidth);

inline constexpr std::size_t kBruteForceMaxTrajectories = 8;

// Exhaustive search over set partitions; ties broken by pack count and then by
// the lexicographically smallest restricted-growth encoding.
// Throws SizeError above kBruteForceMaxTrajectories, InfeasibleError as above.
PackPlan brute_force_plan(const Trie& trie, std::size_t budget);

struct PlanReport {
    bool ok = true;
    std::string message;  // first violation, empty when ok
};

PlanReport validate_plan(const PackPlan& plan, const Trie& trie);

}  // namespace triepack
