// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include "test_util.hpp"

#include "triepack/advantage.hpp"
#include "triepack/grad_verifier.hpp"
#include "triepack/pack_encoder.hpp"
#include "triepack/pack_planner.hpp"
#include "triepack/sft_masking.hpp"
#include "triepack/trie.hpp"
#include "triepack/tst_decompose.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

using namespace triepack;
using namespace triepack::testing;

namespace {

constexpr std::uint64_t kSeeds = 200;

struct Outcome {
    bool pass = true;
    std::string detail;
};

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-12, std::abs(b)); }

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

std::vector<EncodedPack> encode_all(const Trie& trie, const PackPlan& plan, Normalization mode) {
    const auto z = batch_normalizer(trie, mode);
    std::vector<EncodedPack> out;
    for (const auto& m : plan.packs) out.push_back(encode_pack(trie, m, z));
    return out;
}

double max_rel(const Gradients& a, const Gradients& b) {
    auto blocks = block_relative_errors(a, b);
    return *std::max_element(blocks.begin(), blocks.end());
}

// 1. Packed loss and gradients equal the per-trajectory reference.
Outcome gradient_equivalence() {
    const auto start = std::chrono::steady_clock::now();
    double worst_loss = 0, worst_analytic = 0, worst_numeric = 0;
    std::size_t checks = 0, numeric_checks = 0;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const auto c = make_random_case(seed);
        const auto model = init_model(seed, c.V, c.d);
        const auto plan = plan_packs(build_trie(c.trajectories), c.budget, c.dp_width);
        for (auto mode : {Normalization::trajectory_mean, Normalization::token_mean}) {
            const auto a = grad_check(model, c.trajectories, plan, mode, GradMode::analytic);
            worst_loss = std::max(worst_loss, a.loss_rel_err);
            worst_analytic = std::max(worst_analytic, a.max_rel_grad_err);
            ++checks;
        }
        // Numeric oracle on every seed, normalization alternating by seed.
        const auto mode = seed % 2 ? Normalization::token_mean : Normalization::trajectory_mean;
        const auto n = grad_check(model, c.trajectories, plan, mode, GradMode::numeric);
        worst_numeric = std::max(worst_numeric, n.max_rel_grad_err);
        ++numeric_checks;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Outcome o;
    o.pass = worst_loss <= 1e-10 && worst_analytic <= 1e-6 && worst_numeric <= 1e-4 && secs < 60.0;
    o.detail = std::to_string(checks) + " analytic + " + std::to_string(numeric_checks) + " numeric checks; worst loss " +
               fmt("%.2e", worst_loss) + ", analytic " + fmt("%.2e", worst_analytic) + ", numeric " +
               fmt("%.2e", worst_numeric) + ", " + fmt("%.1f", secs) + " s";
    return o;
}

// 2. Uniform 1/N weights give wrong gradients once targets are shared.
Outcome scaler_necessity() {
    std::size_t branching = 0, detected = 0;
    double smallest = INFINITY;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const auto c = make_random_case(seed);
        const auto trie = build_trie(c.trajectories);
        const auto packs = encode_all(trie, plan_packs(trie, c.budget, c.dp_width), Normalization::trajectory_mean);
        const double uniform_w = 1.0 / static_cast<double>(c.trajectories.size());
        bool genuine = false;
        for (const auto& p : packs)
            for (const auto& t : p.targets) genuine |= t.weight != uniform_w;
        if (!genuine) continue;
        ++branching;
        const auto r = grad_check_encoded(init_model(seed, c.V, c.d), c.trajectories,
                                          with_uniform_weights(packs, uniform_w), Normalization::trajectory_mean,
                                          GradMode::analytic);
        smallest = std::min(smallest, r.max_rel_grad_err);
        detected += r.max_rel_grad_err > 1e-2;
    }
    Outcome o;
    o.pass = branching > 0 && detected * 10 >= branching * 9;
    o.detail = std::to_string(detected) + "/" + std::to_string(branching) +
               " branching cases exceed 1e-2; smallest error " + fmt("%.2e", smallest);
    return o;
}

// 3. Different feasible plans give the same loss and gradients.
Outcome plan_invariance() {
    double worst = 0;
    std::size_t tries = 0, distinct = 0;
    for (std::uint64_t seed = 1000; tries < 50; ++seed) {
        const auto c = make_random_case(seed, kBruteForceMaxTrajectories);
        const auto trie = build_trie(c.trajectories);
        const auto heuristic = plan_packs(trie, c.budget, c.dp_width);
        const auto brute = brute_force_plan(trie, c.budget);
        PackPlan singles = heuristic;
        singles.packs.clear();
        for (TrajIndex t = 0; t < trie.n_trajectories(); ++t) singles.packs.push_back({t});

        const auto model = init_model(seed, c.V, c.d);
        for (auto mode : {Normalization::trajectory_mean, Normalization::token_mean}) {
            double l0 = 0;
            const auto g0 = grad_packed(model, encode_all(trie, heuristic, mode), &l0);
            for (const PackPlan* other : {&brute, static_cast<const PackPlan*>(&singles)}) {
                if (other->packs == heuristic.packs) continue;
                ++distinct;
                double l1 = 0;
                const auto g1 = grad_packed(model, encode_all(trie, *other, mode), &l1);
                worst = std::max({worst, rel(l1, l0), max_rel(g1, g0)});
            }
        }
        ++tries;
    }
    Outcome o;
    o.pass = worst <= 1e-10 && distinct > 0;
    o.detail = std::to_string(tries) + " tries, " + std::to_string(distinct) + " distinct plan pairs; worst " +
               fmt("%.2e", worst);
    return o;
}

// 4. Heuristic plans are valid and close to optimal.
Outcome packing_quality() {
    std::size_t plans = 0, valid = 0, compared = 0;
    double worst = 1.0;
    auto check = [&](const RandomCase& c) {
        const auto trie = build_trie(c.trajectories);
        const auto plan = plan_packs(trie, c.budget, c.dp_width);
        ++plans;
        valid += validate_plan(plan, trie).ok;
        if (trie.n_trajectories() > 6) return;
        const auto best = brute_force_plan(trie, c.budget);
        ++compared;
        worst = std::max(worst, static_cast<double>(plan.total_cost) / static_cast<double>(best.total_cost));
    };
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        check(make_random_case(seed));
        check(make_random_case(seed + 5000, 6));
    }
    Outcome o;
    o.pass = valid == plans && worst <= 1.15;
    o.detail = std::to_string(valid) + "/" + std::to_string(plans) + " plans valid; worst ratio " +
               fmt("%.4f", worst) + " over " + std::to_string(compared) + " tries";
    return o;
}

// 5. Whole-trie pack cost and the duplicated-token identity.
Outcome sharing_accounting() {
    std::size_t ok = 0;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const auto c = make_random_case(seed);
        const auto trie = build_trie(c.trajectories);
        const auto s = trie_stats(trie);

        std::vector<TrajIndex> all(trie.n_trajectories());
        for (TrajIndex t = 0; t < all.size(); ++t) all[t] = t;
        const auto pack = encode_pack(trie, all, batch_normalizer(trie, Normalization::trajectory_mean));

        std::size_t unpacked = 0, duplicated = 0;
        for (const auto& t : c.trajectories) unpacked += t.tokens.size();
        for (const auto& n : trie.nodes()) duplicated += (n.leaf_count - 1) * n.length();

        // Independent count of distinct (token, mask) prefixes.
        std::set<std::vector<std::pair<TokenId, std::uint8_t>>> prefixes;
        for (const auto& t : c.trajectories) {
            std::vector<std::pair<TokenId, std::uint8_t>> p;
            for (std::size_t i = 0; i < t.tokens.size(); ++i) {
                p.emplace_back(t.tokens[i], t.loss_mask[i]);
                prefixes.insert(p);
            }
        }
        const bool good = pack.size() == s.unique_tokens && s.unique_tokens == prefixes.size() &&
                          trie.induced_cost(all) == s.unique_tokens && s.unpacked_tokens == unpacked &&
                          unpacked - s.unique_tokens == duplicated;
        ok += good;
    }
    Outcome o;
    o.pass = ok == kSeeds;
    o.detail = std::to_string(ok) + "/" + std::to_string(kSeeds) + " tries satisfy the identity";
    return o;
}

// 6. Advantage shaping formulas and properties.
Outcome advantage_formulas() {
    using Vd = std::vector<double>;
    std::size_t failures = 0;
    auto expect = [&](bool b) { failures += !b; };

    const auto a = group_normalize(Vd{1, 0, 1, 1});
    const Vd hand{0.577350, -1.732051, 0.577350, 0.577350};
    for (std::size_t i = 0; i < 4; ++i) expect(std::abs(a[i] - hand[i]) <= 1e-6);
    expect(std::abs(0.9 * 1.1 * a[0] - 0.571577) <= 1e-6);
    AdvantageGroup g{"g", {1, 0, 1, 1}, {1.5, 1.0, 0.5, 1.0}, 0.4, 0.2};
    const auto s = shape(g, 0.5);
    expect(std::abs(s.alpha - 0.9) <= 1e-12 && std::abs(s.beta[0] - 1.1) <= 1e-12);
    expect(std::abs(s.shaped[0] - 0.571577) <= 1e-6);

    std::mt19937_64 rng(77);
    std::size_t groups = 0;
    for (int batch = 0; batch < 500; ++batch) {
        std::vector<AdvantageGroup> gs;
        for (std::size_t i = uniform(rng, 1, 6); i > 0; --i) {
            AdvantageGroup x;
            x.group_id = "g" + std::to_string(i);
            for (std::size_t j = uniform(rng, 1, 8); j > 0; --j) {
                x.rewards.push_back(static_cast<double>(uniform(rng, 0, 4)) / 4.0);
                x.entropies.push_back(static_cast<double>(uniform(rng, 0, 5000)) / 1000.0);
            }
            x.lambda = static_cast<double>(uniform(rng, 0, 50)) / 10.0;
            x.mu = static_cast<double>(uniform(rng, 0, 50)) / 10.0;
            gs.push_back(std::move(x));
        }
        const double d_bar = batch_difficulty(gs);
        const auto shaped = shape_batch(gs);
        for (std::size_t i = 0; i < gs.size(); ++i, ++groups) {
            double sum = 0;
            for (std::size_t j = 0; j < shaped[i].base.size(); ++j) {
                sum += shaped[i].base[j];
                expect((shaped[i].shaped[j] > 0) == (shaped[i].base[j] > 0));
                expect((shaped[i].shaped[j] < 0) == (shaped[i].base[j] < 0));
            }
            expect(std::abs(sum / static_cast<double>(shaped[i].base.size())) <= 1e-12);
            AdvantageGroup plain = gs[i];
            plain.lambda = plain.mu = 0;
            const auto p = shape(plain, d_bar);
            expect(p.shaped == p.base);
        }
    }
    Outcome o;
    o.pass = failures == 0;
    o.detail = "hand values and " + std::to_string(groups) + " random groups; " + std::to_string(failures) +
               " violations";
    return o;
}

// Random session with planted erroneous tool calls, recoveries and boundaries.
SessionTree synthetic_session(std::mt19937_64& rng, std::size_t idx) {
    std::vector<Message> ms;
    auto tokens = [&] {
        std::vector<TokenId> t;
        for (std::size_t k = uniform(rng, 1, 5); k > 0; --k) t.push_back(static_cast<TokenId>(uniform(rng, 0, 40)));
        return t;
    };
    ms.push_back(msg(Role::system, tokens()));
    ms.push_back(msg(Role::user, tokens(), 0));
    const std::size_t n = uniform(rng, 8, 30);
    while (ms.size() < n) {
        const std::size_t parent = coin(rng, 0.75) ? ms.size() - 1 : uniform(rng, 0, ms.size() - 1);
        const Boundary b = coin(rng, 0.12) ? (coin(rng, 0.5) ? Boundary::compression : Boundary::mode_switch)
                                           : Boundary::none;
        switch (uniform(rng, 0, 3)) {
            case 0:
                ms.push_back(msg(Role::user, tokens(), parent, b));
                break;
            case 1:
                ms.push_back(msg(Role::tool, tokens(), parent, b));
                break;
            default: {
                std::optional<ToolOutcome> call;
                if (coin(rng, 0.6)) call = ToolOutcome{"bash", coin(rng, 0.4) ? ToolStatus::error : ToolStatus::ok};
                ms.push_back(msg(Role::assistant, tokens(), parent, b, call));
            }
        }
    }
    return SessionTree("syn" + std::to_string(idx), std::move(ms));
}

// 7. Error masking and subtree decomposition on a synthetic corpus.
Outcome masking_and_decomposition() {
    std::mt19937_64 rng(2025);
    std::size_t error_tokens = 0, error_masked = 0, recovery_tokens = 0, recovery_masked = 0;
    std::size_t count_ok = 0, partition_ok = 0;
    constexpr std::size_t kSessions = 20;
    for (std::size_t s = 0; s < kSessions; ++s) {
        const SessionTree sess = synthetic_session(rng, s);
        for (MessageIndex leaf : sess.leaves()) {
            const Trajectory t = build_loss_mask(sess, leaf);
            std::size_t pos = 0;
            bool seen_error = false;
            for (MessageIndex m : sess.path_to(leaf)) {
                const Message& msg = sess.message(m);
                const bool error = msg.tool_call && msg.tool_call->status == ToolStatus::error;
                for (std::size_t k = 0; k < msg.tokens.size(); ++k, ++pos) {
                    if (error) {
                        ++error_tokens;
                        error_masked += t.loss_mask[pos] == 0;
                    } else if (seen_error && msg.role == Role::assistant) {
                        ++recovery_tokens;
                        recovery_masked += t.loss_mask[pos] == 0;
                    }
                }
                seen_error |= error;
            }
        }

        std::size_t boundaries = 0;
        for (MessageIndex i = 1; i < sess.size(); ++i) boundaries += sess.message(i).boundary != Boundary::none;
        const auto subs = decompose(sess);
        count_ok += subs.size() == 1 + boundaries;
        std::vector<int> seen(sess.size(), 0);
        for (const auto& sub : subs)
            for (MessageIndex m : sub.messages) ++seen[m];
        partition_ok += std::all_of(seen.begin(), seen.end(), [](int k) { return k == 1; });
    }
    Outcome o;
    o.pass = error_tokens > 0 && recovery_tokens > 0 && error_masked == error_tokens && recovery_masked == 0 &&
             count_ok == kSessions && partition_ok == kSessions;
    o.detail = std::to_string(error_masked) + "/" + std::to_string(error_tokens) + " error tokens masked, " +
               std::to_string(recovery_masked) + "/" + std::to_string(recovery_tokens) +
               " recovery tokens masked, subtree counts " + std::to_string(count_ok) + "/" +
               std::to_string(kSessions) + ", partitions " + std::to_string(partition_ok) + "/" +
               std::to_string(kSessions);
    return o;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// 8. The CLI writes identical bytes on repeated runs.
Outcome determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / ("triepack_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const std::string cli = TRIEPACK_CLI, fx = TRIEPACK_FIXTURES;
    const std::vector<std::string> cmds{
        "pack -i " + fx + "/three_traj.jsonl --budget 4",
        "pack -i " + fx + "/sessions.jsonl --budget 16 --tst --normalization token_mean",
        "verify -i " + fx + "/three_traj.jsonl --seed 7 --V 11 --d 4",
        "verify -i " + fx + "/sessions.jsonl --tst --seed 1 --budget 16 --V 16 --d 4",
    };
    std::size_t identical = 0;
    for (std::size_t i = 0; i < cmds.size(); ++i) {
        std::string outs[2];
        bool ran = true;
        for (int r = 0; r < 2; ++r) {
            const std::string path = (dir / (std::to_string(i) + "_" + std::to_string(r))).string();
            const int status = std::system((cli + " " + cmds[i] + " -o " + path + " 2>/dev/null").c_str());
            ran &= WIFEXITED(status) && WEXITSTATUS(status) == 0;
            outs[r] = slurp(path);
        }
        identical += ran && !outs[0].empty() && outs[0] == outs[1];
    }
    fs::remove_all(dir);
    Outcome o;
    o.pass = identical == cmds.size();
    o.detail = std::to_string(identical) + "/" + std::to_string(cmds.size()) + " commands byte-identical";
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient equivalence", gradient_equivalence},
        {"scaler necessity", scaler_necessity},
        {"plan invariance", plan_invariance},
        {"packing quality", packing_quality},
        {"sharing accounting", sharing_accounting},
        {"advantage formulas", advantage_formulas},
        {"error masking and subtree decomposition", masking_and_decomposition},
        {"CLI determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s criterion %zu: %s (%s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
