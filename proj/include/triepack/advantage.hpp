#pragma once

// Group-relative advantages with difficulty- and entropy-aware rescaling, plus
// the deviation filter that decides when a rollout should be resampled.

#include "triepack/trajectory.hpp"

#include <span>
#include <string>
#include <vector>

namespace triepack {

inline constexpr double kAdvantageEpsilon = 1e-8;
inline constexpr double kDefaultScaleFloor = 0.1;

struct AdvantageGroup {
    std::string group_id;
    std::vector<double> rewards;    // each in [0, 1]
    std::vector<double> entropies;  // one pre-aggregated policy entropy per sample, >= 0
    double lambda = 0.0;
    double mu = 0.0;

    // Throws std::invalid_argument when an invariant does not hold.
    void validate() const;
};

struct ShapedAdvantages {
    std::vector<double> base;
    double difficulty = 0.0;
    double alpha = 1.0;
    std::vector<double> beta;
    std::vector<double> shaped;
};

// z-score with population std; all zero when the rewards do not vary.
std::vector<double> group_normalize(std::span<const double> rewards);

// One minus the mean reward.
double difficulty(std::span<const double> rewards);

// 1 + lambda (D - D_bar), floored.
double group_scale(double difficulty, double mean_difficulty, double lambda, double floor = kDefaultScaleFloor);

// 1 + mu (H - H_bar), floored.
double sample_scale(double entropy, double mean_entropy, double mu, double floor = kDefaultScaleFloor);

ShapedAdvantages shape(const AdvantageGroup& group, double mean_difficulty, double floor = kDefaultScaleFloor);

// Unweighted mean of group difficulties.
double batch_difficulty(std::span<const AdvantageGroup> groups);

std::vector<ShapedAdvantages> shape_batch(std::span<const AdvantageGroup> groups, double floor = kDefaultScaleFloor);

std::size_t levenshtein(std::span<const TokenId> a, std::span<const TokenId> b);

// Smallest normalized edit distance to any reference, in [0, 1].
// Throws std::invalid_argument for an empty reference set.
double deviation_score(std::span<const TokenId> candidate, std::span<const std::vector<TokenId>> references);

inline bool should_resample(double score, double tau) { return score > tau; }

}  // namespace triepack
