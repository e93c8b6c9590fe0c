#include "triepack/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace triepack {

namespace {

double mean(std::span<const double> xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

void AdvantageGroup::validate() const {
    if (rewards.empty()) throw std::invalid_argument("group '" + group_id + "': no rewards");
    if (rewards.size() != entropies.size())
        throw std::invalid_argument("group '" + group_id + "': rewards and entropies differ in length");
    for (double r : rewards)
        if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("group '" + group_id + "': reward outside [0, 1]");
    for (double h : entropies)
        if (!(h >= 0.0) || !std::isfinite(h))
            throw std::invalid_argument("group '" + group_id + "': entropy must be finite and non-negative");
    if (!(lambda >= 0.0) || !(mu >= 0.0))
        throw std::invalid_argument("group '" + group_id + "': lambda and mu must be non-negative");
}

std::vector<double> group_normalize(std::span<const double> rewards) {
    std::vector<double> out(rewards.size(), 0.0);
    if (rewards.empty()) return out;
    const double m = mean(rewards);
    double var = 0.0;
    for (double r : rewards) var += (r - m) * (r - m);
    const double sd = std::sqrt(var / static_cast<double>(rewards.size()));
    if (sd == 0.0) return out;
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - m) / (sd + kAdvantageEpsilon);
    return out;
}

double difficulty(std::span<const double> rewards) { return 1.0 - mean(rewards); }

double group_scale(double difficulty, double mean_difficulty, double lambda, double floor) {
    return std::max(floor, 1.0 + lambda * (difficulty - mean_difficulty));
}

double sample_scale(double entropy, double mean_entropy, double mu, double floor) {
    return std::max(floor, 1.0 + mu * (entropy - mean_entropy));
}

ShapedAdvantages shape(const AdvantageGroup& group, double mean_difficulty, double floor) {
    group.validate();
    ShapedAdvantages s;
    s.base = group_normalize(group.rewards);
    s.difficulty = difficulty(group.rewards);
    s.alpha = group_scale(s.difficulty, mean_difficulty, group.lambda, floor);
    const double mean_entropy = mean(group.entropies);
    for (std::size_t j = 0; j < s.base.size(); ++j) {
        s.beta.push_back(sample_scale(group.entropies[j], mean_entropy, group.mu, floor));
        s.shaped.push_back(s.alpha * s.beta[j] * s.base[j]);
    }
    return s;
}

double batch_difficulty(std::span<const AdvantageGroup> groups) {
    if (groups.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& g : groups) {
        g.validate();
        sum += difficulty(g.rewards);
    }
    return sum / static_cast<double>(groups.size());
}

std::vector<ShapedAdvantages> shape_batch(std::span<const AdvantageGroup> groups, double floor) {
    const double d_bar = batch_difficulty(groups);
    std::vector<ShapedAdvantages> out;
    out.reserve(groups.size());
    for (const auto& g : groups) out.push_back(shape(g, d_bar, floor));
    return out;
}

std::size_t levenshtein(std::span<const TokenId> a, std::span<const TokenId> b) {
    // Single-row DP over b.
    std::vector<std::size_t> row(b.size() + 1);
    std::iota(row.begin(), row.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

double deviation_score(std::span<const TokenId> candidate, std::span<const std::vector<TokenId>> references) {
    if (references.empty()) throw std::invalid_argument("deviation_score: empty reference set");
    double best = 1.0;
    for (const auto& ref : references) {
        const std::size_t denom = std::max(candidate.size(), ref.size());
        const double score = denom == 0 ? 0.0 : static_cast<double>(levenshtein(candidate, ref)) / static_cast<double>(denom);
        best = std::min(best, score);
    }
    return best;
}

}  // namespace triepack
