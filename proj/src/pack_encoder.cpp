#include "triepack/pack_encoder.hpp"

#include "triepack/errors.hpp"

#include <algorithm>
#include <stdexcept>

namespace triepack {

std::string_view to_string(Normalization n) {
    return n == Normalization::trajectory_mean ? "trajectory_mean" : "token_mean";
}

std::optional<Normalization> parse_normalization(std::string_view s) {
    if (s == "trajectory_mean") return Normalization::trajectory_mean;
    if (s == "token_mean") return Normalization::token_mean;
    return std::nullopt;
}

Normalizer batch_normalizer(const Trie& trie, Normalization mode) {
    if (mode == Normalization::trajectory_mean) return {mode, static_cast<double>(trie.n_trajectories())};
    std::size_t targets = 0;
    for (TrajIndex t = 0; t < trie.n_trajectories(); ++t) targets += trie.reconstruct(t).target_count();
    return {mode, static_cast<double>(targets)};
}

Normalizer batch_normalizer(std::span<const Trajectory> batch, Normalization mode) {
    if (mode == Normalization::trajectory_mean) return {mode, static_cast<double>(batch.size())};
    std::size_t targets = 0;
    for (const auto& t : batch) targets += t.target_count();
    return {mode, static_cast<double>(targets)};
}

void EncodedPack::validate() const {
    const std::size_t n = tokens.size();
    if (parent.size() != n || depth.size() != n || segment.size() != n)
        throw StructureError("encoded pack: array lengths differ");
    for (std::size_t i = 0; i < n; ++i) {
        if (parent[i] >= static_cast<std::int64_t>(i) || parent[i] < -1)
            throw StructureError("encoded pack: parent of " + std::to_string(i) + " does not precede it");
        const std::size_t expect = parent[i] < 0 ? 0 : depth[static_cast<std::size_t>(parent[i])] + 1;
        if (depth[i] != expect) throw StructureError("encoded pack: depth of " + std::to_string(i) + " is inconsistent");
    }
    for (const auto& t : targets) {
        if (t.context_pos >= n) throw StructureError("encoded pack: target context out of range");
        if (!(t.weight >= 0.0)) throw StructureError("encoded pack: negative or NaN target weight");
    }
}

EncodedPack encode_pack(const Trie& trie, std::span<const TrajIndex> members, const Normalizer& norm) {
    EncodedPack out;
    out.members.assign(members.begin(), members.end());
    std::sort(out.members.begin(), out.members.end());
    if (std::adjacent_find(out.members.begin(), out.members.end()) != out.members.end())
        throw StructureError("encode_pack: pack lists a trajectory twice");

    // Pack-local multiplicity of every node.
    std::vector<std::size_t> count(trie.nodes().size(), 0);
    for (TrajIndex t : out.members) {
        if (t >= trie.n_trajectories())
            throw std::out_of_range("encode_pack: trajectory " + std::to_string(t) + " is not in the trie");
        for (NodeId id : trie.path(t)) ++count[id];
    }

    struct Frame {
        NodeId node;
        std::int64_t attach;  // flat index of the parent run's last token
    };
    std::vector<Frame> stack;
    for (auto it = trie.roots().rbegin(); it != trie.roots().rend(); ++it)
        if (count[*it]) stack.push_back({*it, -1});

    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        const TrieNode& n = trie.node(f.node);
        const double weight = static_cast<double>(count[f.node]) / norm.denominator;

        std::int64_t prev = f.attach;
        for (std::size_t k = 0; k < n.length(); ++k) {
            const auto idx = static_cast<std::int64_t>(out.tokens.size());
            out.tokens.push_back(n.tokens[k]);
            out.parent.push_back(prev);
            out.depth.push_back(n.start_depth + k);
            out.segment.push_back(f.node);
            if (prev >= 0 && n.mask_run[k])
                out.targets.push_back({static_cast<std::size_t>(prev), n.tokens[k], weight});
            prev = idx;
        }
        for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
            if (count[*it]) stack.push_back({*it, prev});
    }
    return out;
}

std::vector<std::size_t> attention_allowed(const EncodedPack& pack, std::size_t i) {
    if (i >= pack.size())
        throw std::out_of_range("attention_allowed: index " + std::to_string(i) + " outside pack of " +
                                std::to_string(pack.size()));
    std::vector<std::size_t> out;
    for (std::int64_t j = static_cast<std::int64_t>(i); j >= 0; j = pack.parent[static_cast<std::size_t>(j)])
        out.push_back(static_cast<std::size_t>(j));
    std::reverse(out.begin(), out.end());
    return out;
}

BoolMatrix dense_mask(const EncodedPack& pack) {
    BoolMatrix m{pack.size(), std::vector<std::uint8_t>(pack.size() * pack.size(), 0)};
    for (std::size_t i = 0; i < pack.size(); ++i)
        for (std::size_t j : attention_allowed(pack, i)) m.cells[i * m.n + j] = 1;
    return m;
}

}  // namespace triepack
