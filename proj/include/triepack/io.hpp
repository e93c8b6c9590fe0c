#pragma once

// On-disk record formats other than the session format: trajectory lines and
// pack files. All writers are deterministic; doubles are printed with 17
// significant digits so they read back bit-exactly.

#include "triepack/pack_encoder.hpp"
#include "triepack/pack_planner.hpp"
#include "triepack/sft_masking.hpp"
#include "triepack/trajectory.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace triepack {

std::string format_double(double x);

// {"traj_id": str, "tokens": [int], "loss_mask": [0|1]} per line.
std::vector<Trajectory> parse_trajectories(std::istream& in, bool lenient = false);
void write_trajectory(std::ostream& out, const Trajectory& t);

// Either session records or trajectory records, detected from the first
// non-blank line. Sessions are expanded to one masked trajectory per leaf, or
// per subtree leaf when `tree_split` is set.
struct Corpus {
    std::vector<SessionTree> sessions;  // empty for trajectory input
    std::vector<Trajectory> trajectories;
};

struct CorpusOptions {
    ParseOptions parse;
    MaskPolicy mask;
    bool tree_split = false;
};

Corpus read_corpus(std::istream& in, const CorpusOptions& opts = {});

struct PackFileHeader {
    std::size_t budget = 0;
    std::size_t dp_width = 0;
    Normalization normalization = Normalization::trajectory_mean;
    double denominator = 1.0;
    std::size_t n_trajectories = 0;
    std::size_t n_packs = 0;
    std::size_t total_cost = 0;
    std::size_t unique_tokens = 0;
    std::size_t unpacked_tokens = 0;

    bool operator==(const PackFileHeader&) const = default;
};

struct PackRecord {
    std::size_t pack_id = 0;
    std::vector<std::string> traj_ids;
    std::size_t cost = 0;
    EncodedPack pack;  // members are indices into the writer's trie order
};

struct PackFile {
    PackFileHeader header;
    std::vector<PackRecord> packs;
};

// First line {"kind":"plan",...}, then one {"kind":"pack",...} line per pack.
void write_pack_file(std::ostream& out, const PackFile& file);
PackFile parse_pack_file(std::istream& in);

// Plan + encoding in one step, producing the records write_pack_file expects.
PackFile make_pack_file(const Trie& trie, const PackPlan& plan, Normalization norm, std::size_t dp_width);

}  // namespace triepack
