#include "triepack/trie.hpp"

#include "triepack/errors.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace triepack {

namespace {

using Symbol = std::pair<TokenId, std::uint8_t>;

// One symbol per node; compressed into runs afterwards.
struct RawNode {
    Symbol symbol{};
    std::map<Symbol, std::size_t> kids;
    std::vector<TrajIndex> ends;
};

}  // namespace

Trie build_trie(std::span<const Trajectory> trajectories) {
    if (trajectories.empty()) throw StructureError("build_trie: no trajectories");

    Trie trie;
    std::unordered_set<std::string> seen;
    std::vector<RawNode> raw(1);  // raw[0] is a virtual root
    for (TrajIndex t = 0; t < trajectories.size(); ++t) {
        const Trajectory& tr = trajectories[t];
        tr.validate();
        if (!seen.insert(tr.traj_id).second)
            throw StructureError("build_trie: duplicate traj_id '" + tr.traj_id + "'");
        trie.ids_.push_back(tr.traj_id);

        std::size_t cur = 0;
        for (std::size_t p = 0; p < tr.tokens.size(); ++p) {
            const Symbol s{tr.tokens[p], tr.loss_mask[p]};
            auto it = raw[cur].kids.find(s);
            if (it == raw[cur].kids.end()) {
                raw.push_back(RawNode{s, {}, {}});
                it = raw[cur].kids.emplace(s, raw.size() - 1).first;
            }
            cur = it->second;
        }
        raw[cur].ends.push_back(t);
    }

    trie.terminal_.assign(trajectories.size(), 0);

    // Preorder over runs; a run extends while the raw chain is unbranched and
    // no trajectory ends inside it.
    struct Frame {
        std::size_t raw_start;
        std::optional<NodeId> parent;
        std::size_t depth;
    };
    std::vector<Frame> stack;
    for (auto it = raw[0].kids.rbegin(); it != raw[0].kids.rend(); ++it)
        stack.push_back({it->second, std::nullopt, 0});

    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();

        TrieNode node;
        node.id = trie.nodes_.size();
        node.parent = f.parent;
        node.start_depth = f.depth;
        std::size_t cur = f.raw_start;
        while (true) {
            node.tokens.push_back(raw[cur].symbol.first);
            node.mask_run.push_back(raw[cur].symbol.second);
            if (!raw[cur].ends.empty() || raw[cur].kids.size() != 1) break;
            cur = raw[cur].kids.begin()->second;
        }
        node.leaf_ids = raw[cur].ends;
        for (TrajIndex t : node.leaf_ids) trie.terminal_[t] = node.id;

        if (f.parent)
            trie.nodes_[*f.parent].children.push_back(node.id);
        else
            trie.roots_.push_back(node.id);

        const std::size_t child_depth = node.start_depth + node.length();
        for (auto it = raw[cur].kids.rbegin(); it != raw[cur].kids.rend(); ++it)
            stack.push_back({it->second, node.id, child_depth});
        trie.nodes_.push_back(std::move(node));
    }

    // Children always carry larger preorder ids than their parent.
    for (NodeId id = trie.nodes_.size(); id-- > 0;) {
        TrieNode& n = trie.nodes_[id];
        n.leaf_count = n.leaf_ids.size();
        for (NodeId c : n.children) n.leaf_count += trie.nodes_[c].leaf_count;
    }
    return trie;
}

std::optional<TrajIndex> Trie::find(const std::string& traj_id) const {
    auto it = std::find(ids_.begin(), ids_.end(), traj_id);
    if (it == ids_.end()) return std::nullopt;
    return static_cast<TrajIndex>(it - ids_.begin());
}

std::vector<NodeId> Trie::path(TrajIndex t) const {
    std::vector<NodeId> out{terminal_.at(t)};
    while (auto p = nodes_[out.back()].parent) out.push_back(*p);
    std::reverse(out.begin(), out.end());
    return out;
}

Trajectory Trie::reconstruct(TrajIndex t) const {
    Trajectory out;
    out.traj_id = ids_.at(t);
    for (NodeId id : path(t)) {
        const TrieNode& n = nodes_[id];
        out.tokens.insert(out.tokens.end(), n.tokens.begin(), n.tokens.end());
        out.loss_mask.insert(out.loss_mask.end(), n.mask_run.begin(), n.mask_run.end());
    }
    return out;
}

std::size_t Trie::induced_cost(std::span<const TrajIndex> members) const {
    std::vector<char> seen(nodes_.size(), 0);
    std::size_t cost = 0;
    for (TrajIndex t : members) {
        for (std::optional<NodeId> id = terminal_.at(t); id && !seen[*id]; id = nodes_[*id].parent) {
            seen[*id] = 1;
            cost += nodes_[*id].length();
        }
    }
    return cost;
}

std::string Trie::canonical() const {
    std::ostringstream os;
    std::vector<std::pair<NodeId, std::size_t>> stack;
    for (auto it = roots_.rbegin(); it != roots_.rend(); ++it) stack.emplace_back(*it, 0);
    while (!stack.empty()) {
        auto [id, level] = stack.back();
        stack.pop_back();
        const TrieNode& n = nodes_[id];
        os << std::string(2 * level, ' ') << "run[";
        for (std::size_t k = 0; k < n.length(); ++k)
            os << (k ? "," : "") << n.tokens[k] << (n.mask_run[k] ? "" : "~");
        os << "] depth=" << n.start_depth << " count=" << n.leaf_count << " leaves={";
        std::vector<std::string> names;
        for (TrajIndex t : n.leaf_ids) names.push_back(ids_[t]);
        std::sort(names.begin(), names.end());
        for (std::size_t k = 0; k < names.size(); ++k) os << (k ? "," : "") << names[k];
        os << "}\n";
        for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.emplace_back(*it, level + 1);
    }
    return os.str();
}

TrieStats trie_stats(const Trie& trie) {
    TrieStats s;
    for (TrajIndex t = 0; t < trie.n_trajectories(); ++t) s.unpacked_tokens += trie.traj_length(t);
    for (const auto& n : trie.nodes()) s.unique_tokens += n.length();
    s.sharing_ratio = static_cast<double>(s.unpacked_tokens) / static_cast<double>(s.unique_tokens);
    return s;
}

}  // namespace triepack
