#pragma once

// Data model for agent sessions and the flattened trajectories derived from them.
//
// A session is a tree of messages. Each message names its parent explicitly or
// implicitly (absent parent => previous message). A trajectory is the token
// concatenation along one root-to-leaf path together with a per-token loss mask.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace triepack {

using TokenId = std::uint32_t;
using MessageIndex = std::size_t;

enum class Role { system, user, assistant, tool };
enum class Boundary { none, compression, mode_switch };
enum class ToolStatus { ok, error };

std::string_view to_string(Role r);
std::string_view to_string(Boundary b);
std::string_view to_string(ToolStatus s);
std::optional<Role> parse_role(std::string_view s);
std::optional<Boundary> parse_boundary(std::string_view s);
std::optional<ToolStatus> parse_tool_status(std::string_view s);

struct ToolOutcome {
    std::string name;
    ToolStatus status = ToolStatus::ok;

    bool operator==(const ToolOutcome&) const = default;
};

struct Message {
    Role role = Role::user;
    std::vector<TokenId> tokens;
    std::optional<ToolOutcome> tool_call;
    Boundary boundary = Boundary::none;
    // As written in the input; use SessionTree::parent_of for the resolved link.
    std::optional<MessageIndex> parent;

    bool operator==(const Message&) const = default;
};

class SessionTree {
public:
    SessionTree() = default;
    // Validates every invariant; throws StructureError on violation.
    SessionTree(std::string session_id, std::vector<Message> messages,
                std::optional<std::size_t> vocab_size = std::nullopt);

    const std::string& session_id() const noexcept { return session_id_; }
    const std::vector<Message>& messages() const noexcept { return messages_; }
    std::size_t size() const noexcept { return messages_.size(); }
    const Message& message(MessageIndex i) const;

    // Resolved parent; nullopt only for message 0.
    std::optional<MessageIndex> parent_of(MessageIndex i) const;
    const std::vector<MessageIndex>& children(MessageIndex i) const;
    // Messages without children, ascending.
    std::vector<MessageIndex> leaves() const;
    // Message indices from the root down to `i`, inclusive.
    std::vector<MessageIndex> path_to(MessageIndex i) const;

    bool operator==(const SessionTree& o) const {
        return session_id_ == o.session_id_ && messages_ == o.messages_;
    }

private:
    std::string session_id_;
    std::vector<Message> messages_;
    std::vector<std::vector<MessageIndex>> children_;
};

struct Trajectory {
    std::string traj_id;
    std::vector<TokenId> tokens;
    std::vector<std::uint8_t> loss_mask;

    // Number of positions that are prediction targets: offset >= 1 with mask 1.
    std::size_t target_count() const;
    bool all_masked() const;
    // Throws StructureError when tokens is empty or lengths disagree.
    void validate() const;

    bool operator==(const Trajectory&) const = default;
};

// Root-to-leaf concatenation with an all-ones placeholder mask.
// Throws std::out_of_range for an invalid leaf.
Trajectory linearize(const SessionTree& session, MessageIndex leaf_message);

std::string trajectory_id(const SessionTree& session, MessageIndex leaf_message);

struct ParseOptions {
    bool lenient = false;  // ignore unknown fields instead of rejecting them
    std::optional<std::size_t> vocab_size;
};

// Line-delimited session records, one session per line; blank lines skipped.
// Throws InputError (with line number and field) or StructureError.
std::vector<SessionTree> parse_sessions(std::istream& in, const ParseOptions& opts = {});
void write_sessions(std::ostream& out, const std::vector<SessionTree>& sessions);

}  // namespace triepack
