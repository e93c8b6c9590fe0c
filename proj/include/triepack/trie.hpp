#pragma once

// Radix-compressed prefix tree over trajectories.
//
// Each node holds a maximal unbranched run of (token, mask) symbols. Two
// trajectories share a node exactly when they share that prefix symbol for
// symbol, so a shared run always carries one consistent loss mask. Node ids
// are canonical: depth-first, children ordered by first (token, mask).

#include "triepack/trajectory.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace triepack {

using NodeId = std::size_t;
// Index of a trajectory in the order it was handed to build_trie.
using TrajIndex = std::size_t;

struct TrieNode {
    NodeId id = 0;
    std::vector<TokenId> tokens;
    std::vector<std::uint8_t> mask_run;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    std::vector<TrajIndex> leaf_ids;  // trajectories terminating here, ascending
    std::size_t leaf_count = 0;       // trajectories passing through or ending here
    std::size_t start_depth = 0;

    std::size_t length() const noexcept { return tokens.size(); }
};

struct TrieStats {
    std::size_t unpacked_tokens = 0;
    std::size_t unique_tokens = 0;
    double sharing_ratio = 1.0;
};

class Trie {
public:
    const std::vector<TrieNode>& nodes() const noexcept { return nodes_; }
    const TrieNode& node(NodeId id) const { return nodes_.at(id); }
    const std::vector<NodeId>& roots() const noexcept { return roots_; }

    std::size_t n_trajectories() const noexcept { return ids_.size(); }
    const std::string& traj_id(TrajIndex t) const { return ids_.at(t); }
    const std::vector<std::string>& traj_ids() const noexcept { return ids_; }
    std::optional<TrajIndex> find(const std::string& traj_id) const;
    std::size_t traj_length(TrajIndex t) const { return node(terminal_.at(t)).start_depth + node(terminal_.at(t)).length(); }
    NodeId terminal(TrajIndex t) const { return terminal_.at(t); }

    // Root-to-terminal node ids for one trajectory.
    std::vector<NodeId> path(TrajIndex t) const;
    // Walks the path and concatenates runs.
    Trajectory reconstruct(TrajIndex t) const;

    // Total run length over the union of root-to-terminal paths of `members`.
    std::size_t induced_cost(std::span<const TrajIndex> members) const;

    // Depth-first text form with children by first symbol; equal for tries that
    // differ only in node numbering or insertion order.
    std::string canonical() const;

private:
    friend Trie build_trie(std::span<const Trajectory> trajectories);

    std::vector<TrieNode> nodes_;
    std::vector<NodeId> roots_;
    std::vector<std::string> ids_;
    std::vector<NodeId> terminal_;
};

// Throws StructureError for an empty input, a duplicate traj_id or an invalid
// trajectory. Identical trajectories with distinct ids share one terminal.
Trie build_trie(std::span<const Trajectory> trajectories);

TrieStats trie_stats(const Trie& trie);

}  // namespace triepack
