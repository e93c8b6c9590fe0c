#pragma once

// Tree-structured trajectory decomposition: a session is cut at every message
// that carries a compression or mode-switch boundary. Each piece is trained on
// its own, starting from the boundary message itself.

#include "triepack/sft_masking.hpp"
#include "triepack/trajectory.hpp"

#include <vector>

namespace triepack {

struct Subtree {
    MessageIndex root_message = 0;
    std::vector<MessageIndex> messages;  // ascending, root first
    std::string origin;                  // session id

    bool operator==(const Subtree&) const = default;
};

// Subtrees ordered by root index; count is 1 + number of boundary messages
// (message 0 is always a root, whether or not it is flagged).
std::vector<Subtree> decompose(const SessionTree& session);

// One masked trajectory per leaf of the subtree, linearized from its root.
std::vector<Trajectory> subtree_trajectories(const Subtree& subtree, const SessionTree& session,
                                             const MaskPolicy& policy = {});

// Re-index a subtree as a standalone session; the root's boundary flag is cleared.
SessionTree materialize(const Subtree& subtree, const SessionTree& session);

}  // namespace triepack
