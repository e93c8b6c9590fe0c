#pragma once

// Error-masked SFT: loss masks that drop erroneous tool calls from the loss
// while keeping their tokens in context.

#include "triepack/trajectory.hpp"

#include <span>

namespace triepack {

struct MaskPolicy {
    bool mask_non_assistant = true;  // system/user/tool tokens get mask 0
    bool preserve_recovery = true;   // assistant turns after an error keep mask 1
};

// Mask for the root-to-leaf path of `leaf`.
Trajectory build_loss_mask(const SessionTree& session, MessageIndex leaf, const MaskPolicy& policy = {});

// Same rules applied to an explicit downward path (e.g. starting at a subtree root).
// `path` must be a parent-linked chain; the trajectory id is left to the caller.
Trajectory mask_path(const SessionTree& session, std::span<const MessageIndex> path,
                     const MaskPolicy& policy = {});

}  // namespace triepack
