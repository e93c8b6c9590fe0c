#pragma once

// Flattening a pack into training arrays.
//
// Tokens are laid out depth-first over the pack's induced subtree. Each token
// records the flat index of its predecessor in its trajectory (`parent`) and
// its offset within the trajectory (`depth`), which is the position id a model
// must use. Attention for token i is restricted to its parent chain.
//
// Loss targets carry the gradient-scaler weights: a target predicting the
// token at flat index i from its parent has weight m / Z, where m counts the
// pack members whose path runs through i and Z is the batch normalizer (the
// trajectory count or the unmasked-target count of the whole batch). Summed
// over the packs of any plan, the weighted loss equals the per-trajectory loss
// combined under the same normalization.

#include "triepack/trie.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace triepack {

enum class Normalization { trajectory_mean, token_mean };

std::string_view to_string(Normalization n);
std::optional<Normalization> parse_normalization(std::string_view s);

struct Normalizer {
    Normalization mode = Normalization::trajectory_mean;
    double denominator = 1.0;
};

// Z for the whole batch held by `trie`.
Normalizer batch_normalizer(const Trie& trie, Normalization mode);
Normalizer batch_normalizer(std::span<const Trajectory> batch, Normalization mode);

struct LossTarget {
    std::size_t context_pos = 0;
    TokenId target_token = 0;
    double weight = 0.0;

    bool operator==(const LossTarget&) const = default;
};

struct EncodedPack {
    std::vector<TrajIndex> members;
    std::vector<TokenId> tokens;
    std::vector<std::int64_t> parent;  // -1 at depth 0
    std::vector<std::size_t> depth;
    std::vector<NodeId> segment;
    std::vector<LossTarget> targets;

    std::size_t size() const noexcept { return tokens.size(); }
    // Throws StructureError when the arrays break the flattening invariants.
    void validate() const;
};

// Throws std::out_of_range when a member is not in the trie.
EncodedPack encode_pack(const Trie& trie, std::span<const TrajIndex> members, const Normalizer& norm);

// Parent chain of i plus i itself, ascending. Throws std::out_of_range.
std::vector<std::size_t> attention_allowed(const EncodedPack& pack, std::size_t i);

// Row-major n×n; cell (i, j) is set iff j is in attention_allowed(i).
struct BoolMatrix {
    std::size_t n = 0;
    std::vector<std::uint8_t> cells;

    bool operator()(std::size_t i, std::size_t j) const { return cells[i * n + j] != 0; }
};

BoolMatrix dense_mask(const EncodedPack& pack);

}  // namespace triepack
