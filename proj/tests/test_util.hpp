#pragma once

// Shared fixtures and the randomized case generator used by the property
// tests and the acceptance suite.

#include "triepack/trajectory.hpp"
#include "triepack/trie.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace triepack::testing {

inline Trajectory traj(std::string id, std::vector<TokenId> tokens, std::vector<std::uint8_t> mask = {}) {
    if (mask.empty()) mask.assign(tokens.size(), 1);
    return Trajectory{std::move(id), std::move(tokens), std::move(mask)};
}

// T1=[5,7,9], T2=[5,7,8], T3=[5,2]
inline std::vector<Trajectory> three_trajectories() {
    return {traj("T1", {5, 7, 9}), traj("T2", {5, 7, 8}), traj("T3", {5, 2})};
}

inline Message msg(Role role, std::vector<TokenId> tokens, std::optional<MessageIndex> parent = std::nullopt,
                   Boundary boundary = Boundary::none, std::optional<ToolOutcome> tool = std::nullopt) {
    Message m;
    m.role = role;
    m.tokens = std::move(tokens);
    m.parent = parent;
    m.boundary = boundary;
    m.tool_call = std::move(tool);
    return m;
}

// Portable helpers; std distributions differ between standard libraries.
inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}
inline bool coin(std::mt19937_64& rng, double p) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53 < p;
}

struct RandomCase {
    std::vector<Trajectory> trajectories;
    std::size_t V = 0;
    std::size_t d = 0;
    std::size_t budget = 0;
    std::size_t dp_width = 0;
};

// 2..max_traj trajectories of length 2..16 over a vocabulary of 5..16 tokens.
// Most trajectories copy a random prefix of an earlier one, usually with its
// mask, so the trie branches at random depths.
inline RandomCase make_random_case(std::uint64_t seed, std::size_t max_traj = 8) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
    RandomCase c;
    c.V = uniform(rng, 5, 16);
    c.d = 2 * uniform(rng, 1, 4);
    const std::size_t n = uniform(rng, 2, max_traj);

    auto fresh_token = [&] { return static_cast<TokenId>(uniform(rng, 0, c.V - 1)); };
    auto fresh_bit = [&] { return static_cast<std::uint8_t>(coin(rng, 0.7) ? 1 : 0); };

    for (std::size_t i = 0; i < n; ++i) {
        Trajectory t;
        t.traj_id = "t" + std::to_string(i);
        if (i > 0 && coin(rng, 0.85)) {
            const Trajectory& src = c.trajectories[uniform(rng, 0, i - 1)];
            const std::size_t k = uniform(rng, 1, src.tokens.size());
            const bool keep_mask = coin(rng, 0.85);
            for (std::size_t p = 0; p < k; ++p) {
                t.tokens.push_back(src.tokens[p]);
                t.loss_mask.push_back(keep_mask ? src.loss_mask[p] : fresh_bit());
            }
        }
        const std::size_t len = uniform(rng, std::max<std::size_t>(2, t.tokens.size()), 16);
        while (t.tokens.size() < len) {
            t.tokens.push_back(fresh_token());
            t.loss_mask.push_back(fresh_bit());
        }
        c.trajectories.push_back(std::move(t));
    }

    const Trie trie = build_trie(c.trajectories);
    std::size_t longest = 0;
    for (const auto& t : c.trajectories) longest = std::max(longest, t.tokens.size());
    c.budget = uniform(rng, longest, trie_stats(trie).unique_tokens);
    c.dp_width = uniform(rng, 1, 12);
    return c;
}

}  // namespace triepack::testing
