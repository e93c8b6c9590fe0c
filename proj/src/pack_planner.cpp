#include "triepack/pack_planner.hpp"

#include "triepack/errors.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <utility>

namespace triepack {

namespace {

struct Bundle {
    std::vector<TrajIndex> members;
    std::vector<NodeId> nodes;  // sorted
    std::size_t cost = 0;       // Σ run length over `nodes`
};

std::vector<NodeId> union_nodes(const std::vector<NodeId>& a, const std::vector<NodeId>& b) {
    std::vector<NodeId> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

class Planner {
public:
    Planner(const Trie& trie, std::size_t budget, std::size_t dp_width)
        : trie_(trie), budget_(budget), dp_width_(dp_width) {}

    std::vector<Bundle> run() {
        std::vector<Bundle> open;
        for (NodeId r : trie_.roots()) {
            auto b = visit(r);
            std::move(b.begin(), b.end(), std::back_inserter(open));
        }
        // Bundles from different roots share nothing; combining them only saves packs.
        return merge(std::move(open), budget_);
    }

private:
    std::size_t cost_of(const std::vector<NodeId>& nodes) const {
        std::size_t c = 0;
        for (NodeId id : nodes) c += trie_.node(id).length();
        return c;
    }

    Bundle join(const Bundle& a, const Bundle& b) const {
        Bundle out;
        out.members = a.members;
        out.members.insert(out.members.end(), b.members.begin(), b.members.end());
        std::sort(out.members.begin(), out.members.end());
        out.nodes = union_nodes(a.nodes, b.nodes);
        out.cost = cost_of(out.nodes);
        return out;
    }

    std::vector<Bundle> visit(NodeId id) {
        const TrieNode& n = trie_.node(id);
        std::vector<Bundle> bundles;
        for (TrajIndex t : n.leaf_ids) bundles.push_back(Bundle{{t}, {}, 0});
        for (NodeId c : n.children) {
            auto sub = visit(c);
            std::move(sub.begin(), sub.end(), std::back_inserter(bundles));
        }
        // Preorder ids: this node sorts before all of its descendants.
        for (Bundle& b : bundles) {
            b.nodes.insert(b.nodes.begin(), id);
            b.cost += n.length();
        }
        return merge(std::move(bundles), budget_ - n.start_depth);
    }

    std::vector<Bundle> merge(std::vector<Bundle> bundles, std::size_t limit) const {
        if (bundles.size() <= 1) return bundles;
        return bundles.size() <= dp_width_ ? merge_exact(bundles, limit) : merge_greedy(std::move(bundles), limit);
    }

    // Minimum-cost set partition of the bundles, fewest groups on ties.
    std::vector<Bundle> merge_exact(const std::vector<Bundle>& bundles, std::size_t limit) const {
        const std::size_t k = bundles.size();
        const std::size_t full = (std::size_t{1} << k) - 1;
        constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();

        // Union of each subset, built from the subset minus its lowest bit.
        std::vector<Bundle> group(full + 1);
        std::vector<char> feasible(full + 1, 0);
        for (std::size_t s = 1; s <= full; ++s) {
            const std::size_t low = s & (~s + 1);
            const std::size_t rest = s ^ low;
            const std::size_t bit = static_cast<std::size_t>(__builtin_ctzll(low));
            if (rest == 0) {
                group[s] = bundles[bit];
            } else {
                if (!feasible[rest]) continue;
                group[s] = join(group[rest], bundles[bit]);
            }
            feasible[s] = group[s].cost <= limit;
        }

        std::vector<std::pair<std::size_t, std::size_t>> best(full + 1, {kInf, kInf});
        std::vector<std::size_t> choice(full + 1, 0);
        best[0] = {0, 0};
        for (std::size_t mask = 1; mask <= full; ++mask) {
            const std::size_t low = mask & (~mask + 1);
            const std::size_t others = mask ^ low;
            // Enumerate subsets of `others`, each joined with the lowest bit.
            for (std::size_t sub = others;; sub = (sub - 1) & others) {
                const std::size_t s = sub | low;
                const auto& prev = best[mask ^ s];
                if (feasible[s] && prev.first != kInf) {
                    const std::pair<std::size_t, std::size_t> cand{prev.first + group[s].cost, prev.second + 1};
                    if (cand < best[mask]) {
                        best[mask] = cand;
                        choice[mask] = s;
                    }
                }
                if (sub == 0) break;
            }
        }

        std::vector<Bundle> out;
        for (std::size_t mask = full; mask; mask ^= choice[mask]) out.push_back(std::move(group[choice[mask]]));
        return out;
    }

    std::vector<Bundle> merge_greedy(std::vector<Bundle> bundles, std::size_t limit) const {
        std::stable_sort(bundles.begin(), bundles.end(), [](const Bundle& a, const Bundle& b) {
            if (a.cost != b.cost) return a.cost > b.cost;
            return a.members.front() < b.members.front();
        });
        std::vector<Bundle> groups;
        for (Bundle& b : bundles) {
            bool placed = false;
            for (Bundle& g : groups) {
                auto nodes = union_nodes(g.nodes, b.nodes);
                if (cost_of(nodes) <= limit) {
                    g = join(g, b);
                    placed = true;
                    break;
                }
            }
            if (!placed) groups.push_back(std::move(b));
        }
        return groups;
    }

    const Trie& trie_;
    std::size_t budget_;
    std::size_t dp_width_;
};

void check_feasible(const Trie& trie, std::size_t budget) {
    for (TrajIndex t = 0; t < trie.n_trajectories(); ++t) {
        if (trie.traj_length(t) > budget)
            throw InfeasibleError("trajectory '" + trie.traj_id(t) + "' has " + std::to_string(trie.traj_length(t)) +
                                  " tokens, over the budget of " + std::to_string(budget));
    }
}

PackPlan finish(const Trie& trie, std::size_t budget, std::vector<std::vector<TrajIndex>> packs) {
    for (auto& p : packs) std::sort(p.begin(), p.end());
    std::sort(packs.begin(), packs.end());
    PackPlan plan;
    plan.budget = budget;
    for (const auto& p : packs) {
        plan.cost_per_pack.push_back(trie.induced_cost(p));
        plan.total_cost += plan.cost_per_pack.back();
    }
    plan.packs = std::move(packs);
    return plan;
}

}  // namespace

PackPlan plan_packs(const Trie& trie, std::size_t budget, std::size_t dp_width) {
    if (dp_width == 0 || dp_width > 20) throw std::invalid_argument("dp_width must be in [1, 20]");
    check_feasible(trie, budget);

    std::vector<std::vector<TrajIndex>> packs;
    for (Bundle& b : Planner(trie, budget, dp_width).run()) packs.push_back(std::move(b.members));
    return finish(trie, budget, std::move(packs));
}

PackPlan brute_force_plan(const Trie& trie, std::size_t budget) {
    const std::size_t n = trie.n_trajectories();
    if (n > kBruteForceMaxTrajectories)
        throw SizeError("brute_force_plan: " + std::to_string(n) + " trajectories exceeds the limit of " +
                        std::to_string(kBruteForceMaxTrajectories));
    check_feasible(trie, budget);

    // Restricted-growth strings enumerate every set partition exactly once, in
    // lexicographic order; keeping only strict improvements yields the
    // lexicographically smallest optimum.
    std::vector<std::size_t> rgs(n, 0), best_rgs;
    std::pair<std::size_t, std::size_t> best{std::numeric_limits<std::size_t>::max(), 0};

    auto evaluate = [&] {
        const std::size_t blocks = *std::max_element(rgs.begin(), rgs.end()) + 1;
        std::vector<std::vector<TrajIndex>> groups(blocks);
        for (TrajIndex t = 0; t < n; ++t) groups[rgs[t]].push_back(t);
        std::size_t total = 0;
        for (const auto& g : groups) {
            const std::size_t c = trie.induced_cost(g);
            if (c > budget) return;
            total += c;
        }
        if (std::pair{total, blocks} < best) {
            best = {total, blocks};
            best_rgs = rgs;
        }
    };

    auto recurse = [&](auto&& self, std::size_t i, std::size_t max_block) -> void {
        if (i == n) {
            evaluate();
            return;
        }
        for (std::size_t b = 0; b <= max_block + 1; ++b) {
            rgs[i] = b;
            self(self, i + 1, std::max(max_block, b));
        }
    };
    rgs[0] = 0;
    recurse(recurse, 1, 0);

    std::vector<std::vector<TrajIndex>> packs(*std::max_element(best_rgs.begin(), best_rgs.end()) + 1);
    for (TrajIndex t = 0; t < n; ++t) packs[best_rgs[t]].push_back(t);
    return finish(trie, budget, std::move(packs));
}

PlanReport validate_plan(const PackPlan& plan, const Trie& trie) {
    auto fail = [](std::string msg) { return PlanReport{false, std::move(msg)}; };

    if (plan.cost_per_pack.size() != plan.packs.size())
        return fail("cost: cost_per_pack has " + std::to_string(plan.cost_per_pack.size()) + " entries for " +
                    std::to_string(plan.packs.size()) + " packs");

    std::vector<std::size_t> seen(trie.n_trajectories(), 0);
    for (std::size_t i = 0; i < plan.packs.size(); ++i) {
        if (plan.packs[i].empty()) return fail("partition: pack " + std::to_string(i) + " is empty");
        for (TrajIndex t : plan.packs[i]) {
            if (t >= trie.n_trajectories())
                return fail("partition: pack " + std::to_string(i) + " names unknown trajectory " + std::to_string(t));
            if (seen[t]++)
                return fail("partition: trajectory '" + trie.traj_id(t) + "' appears in more than one pack");
        }
    }
    for (TrajIndex t = 0; t < trie.n_trajectories(); ++t)
        if (!seen[t]) return fail("partition: trajectory '" + trie.traj_id(t) + "' is in no pack");

    std::size_t total = 0;
    for (std::size_t i = 0; i < plan.packs.size(); ++i) {
        const std::size_t actual = trie.induced_cost(plan.packs[i]);
        if (plan.cost_per_pack[i] != actual)
            return fail("cost: pack " + std::to_string(i) + " states " + std::to_string(plan.cost_per_pack[i]) +
                        " tokens but materializes " + std::to_string(actual));
        if (actual > plan.budget)
            return fail("budget: pack " + std::to_string(i) + " needs " + std::to_string(actual) +
                        " tokens, budget is " + std::to_string(plan.budget));
        total += actual;
    }
    if (total != plan.total_cost)
        return fail("cost: total_cost " + std::to_string(plan.total_cost) + " differs from the pack sum " +
                    std::to_string(total));
    return {};
}

}  // namespace triepack
