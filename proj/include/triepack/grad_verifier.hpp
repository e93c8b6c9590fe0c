#pragma once

// A micro differentiable sequence model used to check that packed training
// computes the same loss and parameter gradients as per-trajectory training.
//
// Model, per position p with token x_p and position id pos_p:
//   h_p  = E[x_p] + pe(pos_p)
//   q, k, v = Wq h, Wk h, Wv h
//   a_pj = softmax_j (q_p . k_j / sqrt(d))   over the positions p may attend to
//   o_p  = h_p + Wo (sum_j a_pj v_j)
//   logits_p = U^T o_p,  loss term = CE(logits_p, next token)
// Everything is double precision.

#include "triepack/pack_encoder.hpp"
#include "triepack/pack_planner.hpp"
#include "triepack/trajectory.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace triepack {

inline constexpr std::size_t kParamBlocks = 6;
inline constexpr std::array<std::string_view, kParamBlocks> kParamBlockNames{"E", "Wq", "Wk", "Wv", "Wo", "U"};

// Parameters stored row-major: E is V×d, the four attention maps d×d, U d×V.
struct MicroParams {
    std::size_t V = 0;
    std::size_t d = 0;
    std::array<std::vector<double>, kParamBlocks> blocks;

    std::vector<double>& E() { return blocks[0]; }
    const std::vector<double>& E() const { return blocks[0]; }
    std::size_t total_size() const;

    bool operator==(const MicroParams&) const = default;
};

using MicroModel = MicroParams;
using Gradients = MicroParams;

// Deterministic init: std::mt19937_64 seeded with `seed`, each draw mapped to
// [-0.1, 0.1] through its top 53 bits, blocks filled in kParamBlockNames order.
// Throws std::invalid_argument unless V >= 2 and d is even and positive.
MicroModel init_model(std::uint64_t seed, std::size_t V, std::size_t d);

// Sinusoidal position encoding of length d.
std::vector<double> position_encoding(std::size_t pos, std::size_t d);

// Reference loss: each trajectory run on its own under a causal mask with
// positions 0..L-1, then combined per `norm`. Throws std::out_of_range for a
// token id >= V.
double loss_unpacked(const MicroModel& model, std::span<const Trajectory> trajectories, const Normalizer& norm);

// Σ over packs Σ targets weight × CE, attention restricted to parent chains,
// positions from `depth`. Throws StructureError for a malformed pack.
double loss_packed(const MicroModel& model, std::span<const EncodedPack> packs);

// Softmax weights of every packed position over its allowed set, in
// attention_allowed order.
std::vector<std::vector<double>> attention_weights(const MicroModel& model, const EncodedPack& pack);

// Analytic gradients by backpropagation.
Gradients grad_packed(const MicroModel& model, std::span<const EncodedPack> packs, double* loss = nullptr);
Gradients grad_unpacked(const MicroModel& model, std::span<const Trajectory> trajectories, const Normalizer& norm,
                        double* loss = nullptr);

// Central differences with the given step, one parameter at a time. The loss
// is evaluated in long double so roundoff stays far below the step's signal.
Gradients numeric_grad_packed(const MicroModel& model, std::span<const EncodedPack> packs, double step = 1e-5);
Gradients numeric_grad_unpacked(const MicroModel& model, std::span<const Trajectory> trajectories,
                                const Normalizer& norm, double step = 1e-5);

enum class GradMode { analytic, numeric };

struct GradReport {
    double loss_packed = 0.0;
    double loss_unpacked = 0.0;
    double loss_rel_err = 0.0;
    double max_rel_grad_err = 0.0;
    std::array<double, kParamBlocks> block_rel_err{};
};

// max over entries of |a - b| / max(1e-12, |b|), per block and overall.
std::array<double, kParamBlocks> block_relative_errors(const Gradients& a, const Gradients& b);

struct SizeLimits {
    std::size_t max_vocab = 16;
    std::size_t max_width = 8;
    std::size_t max_trajectories = 8;
    std::size_t max_length = 16;
};

// Encodes every pack of `plan` over a trie built from `trajectories` and
// compares against the per-trajectory reference. Throws SizeError beyond `limits`.
GradReport grad_check(const MicroModel& model, std::span<const Trajectory> trajectories, const PackPlan& plan,
                      Normalization norm, GradMode mode, const SizeLimits& limits = {});

// Same comparison for packs already encoded (e.g. with altered weights).
GradReport grad_check_encoded(const MicroModel& model, std::span<const Trajectory> trajectories,
                              std::span<const EncodedPack> packs, Normalization norm, GradMode mode,
                              const SizeLimits& limits = {});

// Copy of `packs` with every target weight replaced by `weight`; used to show
// what happens without the tree-structured scaler.
std::vector<EncodedPack> with_uniform_weights(std::span<const EncodedPack> packs, double weight);

}  // namespace triepack
