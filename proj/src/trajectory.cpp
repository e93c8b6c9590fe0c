#include "triepack/trajectory.hpp"

#include "triepack/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <istream>
#include <ostream>

namespace triepack {

using nlohmann::json;

std::string_view to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
        case Role::tool: return "tool";
    }
    return "?";
}

std::string_view to_string(Boundary b) {
    switch (b) {
        case Boundary::none: return "none";
        case Boundary::compression: return "compression";
        case Boundary::mode_switch: return "mode_switch";
    }
    return "?";
}

std::string_view to_string(ToolStatus s) {
    return s == ToolStatus::ok ? "ok" : "error";
}

std::optional<Role> parse_role(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    if (s == "tool") return Role::tool;
    return std::nullopt;
}

std::optional<Boundary> parse_boundary(std::string_view s) {
    if (s == "none") return Boundary::none;
    if (s == "compression") return Boundary::compression;
    if (s == "mode_switch") return Boundary::mode_switch;
    return std::nullopt;
}

std::optional<ToolStatus> parse_tool_status(std::string_view s) {
    if (s == "ok") return ToolStatus::ok;
    if (s == "error") return ToolStatus::error;
    return std::nullopt;
}

SessionTree::SessionTree(std::string session_id, std::vector<Message> messages,
                         std::optional<std::size_t> vocab_size)
    : session_id_(std::move(session_id)), messages_(std::move(messages)) {
    if (session_id_.empty()) throw StructureError("session_id is empty");
    if (messages_.empty()) throw StructureError("session '" + session_id_ + "' has no messages");

    children_.assign(messages_.size(), {});
    for (MessageIndex i = 0; i < messages_.size(); ++i) {
        const Message& m = messages_[i];
        const std::string where = "session '" + session_id_ + "' message " + std::to_string(i);
        if (m.tokens.empty()) throw StructureError(where + ": tokens is empty");
        if (m.tool_call) {
            if (m.role != Role::assistant)
                throw StructureError(where + ": tool_call on a non-assistant message");
            if (m.tool_call->name.empty()) throw StructureError(where + ": tool_call name is empty");
        }
        if (vocab_size) {
            for (TokenId t : m.tokens)
                if (t >= *vocab_size)
                    throw StructureError(where + ": token " + std::to_string(t) +
                                         " outside vocabulary of size " + std::to_string(*vocab_size));
        }
        if (i == 0) {
            if (m.parent) throw StructureError(where + ": root message cannot have a parent");
            continue;
        }
        // Parents must point strictly backwards, which rules out cycles.
        const MessageIndex p = m.parent.value_or(i - 1);
        if (p >= i)
            throw StructureError(where + ": parent " + std::to_string(p) +
                                 " does not precede the message (cycle)");
        children_[p].push_back(i);
    }
}

const Message& SessionTree::message(MessageIndex i) const {
    if (i >= messages_.size())
        throw std::out_of_range("message index " + std::to_string(i) + " out of range for session '" +
                                session_id_ + "'");
    return messages_[i];
}

std::optional<MessageIndex> SessionTree::parent_of(MessageIndex i) const {
    const Message& m = message(i);
    if (i == 0) return std::nullopt;
    return m.parent.value_or(i - 1);
}

const std::vector<MessageIndex>& SessionTree::children(MessageIndex i) const {
    message(i);
    return children_[i];
}

std::vector<MessageIndex> SessionTree::leaves() const {
    std::vector<MessageIndex> out;
    for (MessageIndex i = 0; i < messages_.size(); ++i)
        if (children_[i].empty()) out.push_back(i);
    return out;
}

std::vector<MessageIndex> SessionTree::path_to(MessageIndex i) const {
    message(i);
    std::vector<MessageIndex> path{i};
    while (auto p = parent_of(path.back())) path.push_back(*p);
    std::reverse(path.begin(), path.end());
    return path;
}

std::size_t Trajectory::target_count() const {
    std::size_t n = 0;
    for (std::size_t p = 1; p < loss_mask.size(); ++p) n += loss_mask[p] != 0;
    return n;
}

bool Trajectory::all_masked() const {
    return std::none_of(loss_mask.begin(), loss_mask.end(), [](std::uint8_t m) { return m != 0; });
}

void Trajectory::validate() const {
    if (tokens.empty()) throw StructureError("trajectory '" + traj_id + "' is empty");
    if (tokens.size() != loss_mask.size())
        throw StructureError("trajectory '" + traj_id + "': loss_mask length differs from tokens");
    for (auto m : loss_mask)
        if (m > 1) throw StructureError("trajectory '" + traj_id + "': loss_mask entries must be 0 or 1");
}

std::string trajectory_id(const SessionTree& session, MessageIndex leaf_message) {
    return session.session_id() + "/" + std::to_string(leaf_message);
}

Trajectory linearize(const SessionTree& session, MessageIndex leaf_message) {
    Trajectory t;
    t.traj_id = trajectory_id(session, leaf_message);
    for (MessageIndex i : session.path_to(leaf_message)) {
        const auto& toks = session.messages()[i].tokens;
        t.tokens.insert(t.tokens.end(), toks.begin(), toks.end());
    }
    t.loss_mask.assign(t.tokens.size(), 1);
    return t;
}

// ---------------------------------------------------------------------------
// Session file format

namespace {

void check_fields(const json& obj, std::initializer_list<std::string_view> allowed, std::size_t line,
                  const std::string& where, bool lenient) {
    if (lenient) return;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw InputError(line, where + "unknown field '" + it.key() + "'");
    }
}

const json& require(const json& obj, const char* field, std::size_t line, const std::string& where) {
    auto it = obj.find(field);
    if (it == obj.end()) throw InputError(line, where + "missing field '" + field + "'");
    return *it;
}

std::vector<TokenId> parse_tokens(const json& j, std::size_t line, const std::string& where) {
    if (!j.is_array()) throw InputError(line, where + "field 'tokens' must be an array");
    std::vector<TokenId> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
            v.get<std::int64_t>() > static_cast<std::int64_t>(UINT32_MAX))
            throw InputError(line, where + "field 'tokens' must hold non-negative integers");
        out.push_back(static_cast<TokenId>(v.get<std::int64_t>()));
    }
    return out;
}

Message parse_message(const json& j, std::size_t line, std::size_t index, bool lenient) {
    const std::string where = "messages[" + std::to_string(index) + "]: ";
    if (!j.is_object()) throw InputError(line, where + "expected an object");
    check_fields(j, {"role", "tokens", "tool_call", "boundary", "parent"}, line, where, lenient);

    Message m;
    const json& role = require(j, "role", line, where);
    if (!role.is_string() || !parse_role(role.get<std::string>()))
        throw InputError(line, where + "field 'role' must be one of system/user/assistant/tool");
    m.role = *parse_role(role.get<std::string>());
    m.tokens = parse_tokens(require(j, "tokens", line, where), line, where);

    if (auto it = j.find("tool_call"); it != j.end() && !it->is_null()) {
        const std::string tw = where + "tool_call: ";
        if (!it->is_object()) throw InputError(line, tw + "expected an object");
        check_fields(*it, {"name", "status"}, line, tw, lenient);
        const json& name = require(*it, "name", line, tw);
        const json& status = require(*it, "status", line, tw);
        if (!name.is_string()) throw InputError(line, tw + "field 'name' must be a string");
        if (!status.is_string() || !parse_tool_status(status.get<std::string>()))
            throw InputError(line, tw + "field 'status' must be ok or error");
        m.tool_call = ToolOutcome{name.get<std::string>(), *parse_tool_status(status.get<std::string>())};
    }
    if (auto it = j.find("boundary"); it != j.end() && !it->is_null()) {
        if (!it->is_string() || !parse_boundary(it->get<std::string>()))
            throw InputError(line, where + "field 'boundary' must be none/compression/mode_switch");
        m.boundary = *parse_boundary(it->get<std::string>());
    }
    if (auto it = j.find("parent"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
            throw InputError(line, where + "field 'parent' must be a non-negative integer");
        m.parent = static_cast<MessageIndex>(it->get<std::int64_t>());
    }
    return m;
}

}  // namespace

std::vector<SessionTree> parse_sessions(std::istream& in, const ParseOptions& opts) {
    std::vector<SessionTree> out;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(text);
        } catch (const json::parse_error& e) {
            throw InputError(line, std::string("invalid JSON: ") + e.what());
        }
        if (!rec.is_object()) throw InputError(line, "expected a session object");
        check_fields(rec, {"session_id", "messages"}, line, "", opts.lenient);
        const json& sid = require(rec, "session_id", line, "");
        if (!sid.is_string()) throw InputError(line, "field 'session_id' must be a string");
        const json& msgs = require(rec, "messages", line, "");
        if (!msgs.is_array()) throw InputError(line, "field 'messages' must be an array");

        std::vector<Message> messages;
        messages.reserve(msgs.size());
        for (std::size_t i = 0; i < msgs.size(); ++i)
            messages.push_back(parse_message(msgs[i], line, i, opts.lenient));
        try {
            out.emplace_back(sid.get<std::string>(), std::move(messages), opts.vocab_size);
        } catch (const StructureError& e) {
            throw StructureError("line " + std::to_string(line) + ": " + e.what());
        }
    }
    return out;
}

void write_sessions(std::ostream& out, const std::vector<SessionTree>& sessions) {
    for (const auto& s : sessions) {
        json msgs = json::array();
        for (const auto& m : s.messages()) {
            json jm = json::object();
            jm["role"] = to_string(m.role);
            jm["tokens"] = m.tokens;
            if (m.tool_call)
                jm["tool_call"] = {{"name", m.tool_call->name}, {"status", to_string(m.tool_call->status)}};
            if (m.boundary != Boundary::none) jm["boundary"] = to_string(m.boundary);
            if (m.parent) jm["parent"] = *m.parent;
            msgs.push_back(std::move(jm));
        }
        json rec = {{"session_id", s.session_id()}, {"messages", std::move(msgs)}};
        out << rec.dump() << '\n';
    }
}

}  // namespace triepack
