#include "triepack/sft_masking.hpp"

#include "triepack/errors.hpp"

namespace triepack {

Trajectory mask_path(const SessionTree& session, std::span<const MessageIndex> path,
                     const MaskPolicy& policy) {
    Trajectory t;
    bool seen_error = false;
    for (std::size_t k = 0; k < path.size(); ++k) {
        const Message& m = session.message(path[k]);
        if (k > 0 && session.parent_of(path[k]) != path[k - 1])
            throw StructureError("mask_path: message " + std::to_string(path[k]) +
                                 " is not a child of the previous path entry");
        std::uint8_t bit = 0;
        if (m.role == Role::assistant) {
            const bool failed = m.tool_call && m.tool_call->status == ToolStatus::error;
            bit = failed ? 0 : (seen_error && !policy.preserve_recovery ? 0 : 1);
            seen_error = seen_error || failed;
        } else {
            bit = policy.mask_non_assistant ? 0 : 1;
        }
        t.tokens.insert(t.tokens.end(), m.tokens.begin(), m.tokens.end());
        t.loss_mask.insert(t.loss_mask.end(), m.tokens.size(), bit);
    }
    return t;
}

Trajectory build_loss_mask(const SessionTree& session, MessageIndex leaf, const MaskPolicy& policy) {
    const auto path = session.path_to(leaf);
    Trajectory t = mask_path(session, path, policy);
    t.traj_id = trajectory_id(session, leaf);
    return t;
}

}  // namespace triepack
