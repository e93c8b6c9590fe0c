// triepack: trajectory packing and training-signal toolkit.
//
// Exit codes: 0 ok, 1 usage, 2 input, 3 infeasible budget, 4 verification failure.

#include "triepack/advantage.hpp"
#include "triepack/errors.hpp"
#include "triepack/grad_verifier.hpp"
#include "triepack/io.hpp"
#include "triepack/pack_encoder.hpp"
#include "triepack/pack_planner.hpp"
#include "triepack/trie.hpp"
#include "triepack/tst_decompose.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace triepack;
using ordered_json = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kUsage = 1, kInput = 2, kInfeasible = 3, kVerifyFailed = 4 };

struct Options {
    std::string input;
    std::string output = "-";
    bool lenient = false;
    std::size_t vocab = 0;
    bool keep_non_assistant = false;
    bool no_recovery = false;
    bool tree_split = false;

    std::size_t budget = 0;
    std::string normalization = "trajectory_mean";
    std::size_t dp_width = kDefaultDpWidth;

    std::uint64_t seed = 0;
    std::size_t V = 0;
    std::size_t d = 4;
    std::string mode = "analytic";
    double grad_tol = -1.0;
    double loss_tol = 1e-10;

    double lambda = 0.0;
    double mu = 0.0;
    double tau = 0.5;
    double floor = kDefaultScaleFloor;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct VerificationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(0, "cannot read '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Single writer; the file appears complete or not at all.
void emit(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    const std::filesystem::path target(path);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError(0, "cannot write '" + tmp.string() + "'");
        out << text;
        if (!out.flush()) throw InputError(0, "write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, target);
}

CorpusOptions corpus_options(const Options& o) {
    CorpusOptions c;
    c.parse.lenient = o.lenient;
    if (o.vocab) c.parse.vocab_size = o.vocab;
    c.mask.mask_non_assistant = !o.keep_non_assistant;
    c.mask.preserve_recovery = !o.no_recovery;
    c.tree_split = o.tree_split;
    return c;
}

Corpus load(const Options& o) {
    std::istringstream in(slurp(o.input));
    Corpus c = read_corpus(in, corpus_options(o));
    if (c.trajectories.empty()) throw InputError(0, "'" + o.input + "' holds no trajectories");
    return c;
}

Normalization normalization(const Options& o) {
    auto n = parse_normalization(o.normalization);
    if (!n) throw UsageError("--normalization must be trajectory_mean or token_mean");
    return *n;
}

int run_mask(const Options& o) {
    Options sessions_only = o;
    sessions_only.tree_split = false;
    const Corpus c = load(sessions_only);
    if (c.sessions.empty()) throw InputError(0, "mask expects session records");
    std::ostringstream os;
    for (const auto& t : c.trajectories) write_trajectory(os, t);
    emit(o.output, os.str());
    return kOk;
}

int run_decompose(const Options& o) {
    Options split = o;
    split.tree_split = true;
    const Corpus c = load(split);
    if (c.sessions.empty()) throw InputError(0, "decompose expects session records");
    std::ostringstream os;
    for (const auto& t : c.trajectories) write_trajectory(os, t);
    emit(o.output, os.str());
    return kOk;
}

int run_pack(const Options& o) {
    if (o.budget == 0) throw UsageError("--budget must be positive");
    const Corpus c = load(o);
    const Trie trie = build_trie(c.trajectories);
    const PackPlan plan = plan_packs(trie, o.budget, o.dp_width);
    if (auto r = validate_plan(plan, trie); !r.ok) throw VerificationFailure("plan failed validation: " + r.message);
    std::ostringstream os;
    write_pack_file(os, make_pack_file(trie, plan, normalization(o), o.dp_width));
    emit(o.output, os.str());
    return kOk;
}

int run_verify(const Options& o) {
    const Corpus c = load(o);
    const Trie trie = build_trie(c.trajectories);
    const TrieStats stats = trie_stats(trie);
    const std::size_t budget = o.budget ? o.budget : stats.unique_tokens;
    const Normalization norm = normalization(o);

    GradMode mode;
    if (o.mode == "analytic")
        mode = GradMode::analytic;
    else if (o.mode == "numeric")
        mode = GradMode::numeric;
    else
        throw UsageError("--mode must be analytic or numeric");
    const double grad_tol = o.grad_tol >= 0.0 ? o.grad_tol : (mode == GradMode::analytic ? 1e-6 : 1e-4);

    TokenId max_token = 0;
    for (const auto& t : c.trajectories)
        for (TokenId tok : t.tokens) max_token = std::max(max_token, tok);
    const std::size_t V = o.V ? o.V : std::max<std::size_t>(2, max_token + 1);
    if (max_token >= V) throw InputError(0, "token " + std::to_string(max_token) + " does not fit --V " + std::to_string(V));

    MicroModel model;
    try {
        model = init_model(o.seed, V, o.d);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const PackPlan plan = plan_packs(trie, budget, o.dp_width);
    const GradReport r = grad_check(model, c.trajectories, plan, norm, mode);
    const bool passed = r.loss_rel_err <= o.loss_tol && r.max_rel_grad_err <= grad_tol;

    ordered_json rep;
    rep["seed"] = o.seed;
    rep["V"] = V;
    rep["d"] = o.d;
    rep["budget"] = budget;
    rep["normalization"] = std::string(to_string(norm));
    rep["mode"] = o.mode;
    rep["n_trajectories"] = trie.n_trajectories();
    rep["n_packs"] = plan.packs.size();
    rep["total_cost"] = plan.total_cost;
    rep["loss_packed"] = r.loss_packed;
    rep["loss_unpacked"] = r.loss_unpacked;
    rep["loss_rel_err"] = r.loss_rel_err;
    rep["max_rel_grad_err"] = r.max_rel_grad_err;
    ordered_json blocks = ordered_json::object();
    for (std::size_t b = 0; b < kParamBlocks; ++b) blocks[std::string(kParamBlockNames[b])] = r.block_rel_err[b];
    rep["block_rel_err"] = blocks;
    rep["loss_tolerance"] = o.loss_tol;
    rep["grad_tolerance"] = grad_tol;
    rep["passed"] = passed;
    emit(o.output, rep.dump() + "\n");
    return passed ? kOk : kVerifyFailed;
}

std::vector<std::vector<TokenId>> token_lists(const nlohmann::json& j, const char* field, std::size_t line) {
    if (!j.is_array()) throw InputError(line, std::string("field '") + field + "' must be an array of token arrays");
    std::vector<std::vector<TokenId>> out;
    for (const auto& seq : j) {
        if (!seq.is_array()) throw InputError(line, std::string("field '") + field + "' must be an array of token arrays");
        std::vector<TokenId> toks;
        for (const auto& t : seq) {
            if (!t.is_number_integer() || t.get<std::int64_t>() < 0)
                throw InputError(line, std::string("field '") + field + "' must hold non-negative integers");
            toks.push_back(static_cast<TokenId>(t.get<std::int64_t>()));
        }
        out.push_back(std::move(toks));
    }
    return out;
}

int run_advantage(const Options& o) {
    if (o.tau < 0.0 || o.tau > 1.0) throw UsageError("--tau must lie in [0, 1]");
    std::istringstream in(slurp(o.input));
    std::vector<AdvantageGroup> groups;
    std::vector<std::vector<std::vector<TokenId>>> rollouts, references;
    std::string text;
    for (std::size_t line = 1; std::getline(in, text); ++line) {
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(line, std::string("invalid JSON: ") + e.what());
        }
        if (!rec.is_object()) throw InputError(line, "expected a group object");
        if (!o.lenient)
            for (auto it = rec.begin(); it != rec.end(); ++it)
                if (it.key() != "group_id" && it.key() != "rewards" && it.key() != "entropies" && it.key() != "lambda" &&
                    it.key() != "mu" && it.key() != "rollouts" && it.key() != "references")
                    throw InputError(line, "unknown field '" + it.key() + "'");
        AdvantageGroup g;
        try {
            g.group_id = rec.at("group_id").get<std::string>();
            g.rewards = rec.at("rewards").get<std::vector<double>>();
            g.entropies = rec.at("entropies").get<std::vector<double>>();
            g.lambda = rec.value("lambda", o.lambda);
            g.mu = rec.value("mu", o.mu);
        } catch (const nlohmann::json::exception& e) {
            throw InputError(line, e.what());
        }
        try {
            g.validate();
        } catch (const std::invalid_argument& e) {
            throw InputError(line, e.what());
        }
        rollouts.push_back(rec.contains("rollouts") ? token_lists(rec["rollouts"], "rollouts", line)
                                                    : std::vector<std::vector<TokenId>>{});
        references.push_back(rec.contains("references") ? token_lists(rec["references"], "references", line)
                                                        : std::vector<std::vector<TokenId>>{});
        if (!rollouts.back().empty() && references.back().empty())
            throw InputError(line, "rollouts need a non-empty 'references' field");
        groups.push_back(std::move(g));
    }

    const double d_bar = batch_difficulty(groups);
    std::ostringstream os;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const ShapedAdvantages s = shape(groups[i], d_bar, o.floor);
        ordered_json rec;
        rec["group_id"] = groups[i].group_id;
        rec["difficulty"] = s.difficulty;
        rec["mean_difficulty"] = d_bar;
        rec["alpha"] = s.alpha;
        rec["base"] = s.base;
        rec["beta"] = s.beta;
        rec["shaped"] = s.shaped;
        if (!rollouts[i].empty()) {
            std::vector<double> scores;
            std::vector<bool> resample;
            for (const auto& r : rollouts[i]) {
                scores.push_back(deviation_score(r, references[i]));
                resample.push_back(should_resample(scores.back(), o.tau));
            }
            rec["deviation"] = scores;
            rec["resample"] = resample;
        }
        os << rec.dump() << '\n';
    }
    emit(o.output, os.str());
    return kOk;
}

int run_stats(const Options& o) {
    const Corpus c = load(o);
    const Trie trie = build_trie(c.trajectories);
    const TrieStats s = trie_stats(trie);

    std::size_t all_masked = 0, targets = 0;
    for (const auto& t : c.trajectories) {
        all_masked += t.all_masked();
        targets += t.target_count();
    }
    ordered_json rep;
    rep["n_sessions"] = c.sessions.size();
    rep["n_trajectories"] = trie.n_trajectories();
    rep["all_masked_trajectories"] = all_masked;
    rep["unmasked_targets"] = targets;
    rep["unpacked_tokens"] = s.unpacked_tokens;
    rep["unique_tokens"] = s.unique_tokens;
    rep["sharing_ratio"] = s.sharing_ratio;
    rep["trie_nodes"] = trie.nodes().size();
    rep["trie_roots"] = trie.roots().size();
    if (!c.sessions.empty()) {
        std::size_t messages = 0, boundaries = 0, errors = 0, subtrees = 0;
        for (const auto& sess : c.sessions) {
            messages += sess.size();
            subtrees += decompose(sess).size();
            for (MessageIndex i = 0; i < sess.size(); ++i) {
                const Message& m = sess.message(i);
                boundaries += i > 0 && m.boundary != Boundary::none;
                errors += m.tool_call && m.tool_call->status == ToolStatus::error;
            }
        }
        rep["messages"] = messages;
        rep["boundary_messages"] = boundaries;
        rep["error_tool_calls"] = errors;
        rep["subtrees"] = subtrees;
    }
    emit(o.output, rep.dump() + "\n");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"triepack: trie-packed training batches and training signals for agent trajectories"};
    app.require_subcommand(1);
    Options o;

    auto add_io = [&](CLI::App* cmd) {
        cmd->add_option("-i,--input", o.input, "Input file (sessions or trajectories, JSONL)")->required();
        cmd->add_option("-o,--output", o.output, "Output file, '-' for stdout");
        cmd->add_flag("--lenient", o.lenient, "Ignore unknown record fields");
    };
    auto add_corpus = [&](CLI::App* cmd) {
        add_io(cmd);
        cmd->add_option("--vocab", o.vocab, "Reject token ids at or above this vocabulary size");
        cmd->add_flag("--keep-non-assistant", o.keep_non_assistant, "Supervise system/user/tool tokens too");
        cmd->add_flag("--no-recovery", o.no_recovery, "Also mask assistant turns after an erroneous tool call");
    };
    auto add_trie = [&](CLI::App* cmd) {
        add_corpus(cmd);
        cmd->add_flag("--tst", o.tree_split, "Split sessions at compression/mode-switch boundaries first");
        cmd->add_option("--normalization", o.normalization, "trajectory_mean or token_mean");
        cmd->add_option("--dp-width", o.dp_width, "Open bundles handled by exact DP per node")->check(CLI::Range(1, 20));
    };

    auto* mask = app.add_subcommand("mask", "Error-masked loss masks, one trajectory per session leaf");
    add_corpus(mask);
    auto* dec = app.add_subcommand("decompose", "Split sessions into boundary-delimited subtrees");
    add_corpus(dec);

    auto* pack = app.add_subcommand("pack", "Plan and encode trie packs under a token budget");
    add_trie(pack);
    pack->add_option("--budget", o.budget, "Token budget per pack")->required();

    auto* verify = app.add_subcommand("verify", "Check packed loss/gradients against per-trajectory computation");
    add_trie(verify);
    verify->add_option("--budget", o.budget, "Token budget per pack (default: whole trie in one pack)");
    verify->add_option("--seed", o.seed, "Model initialization seed");
    verify->add_option("--V", o.V, "Vocabulary size (default: max token + 1)");
    verify->add_option("--d", o.d, "Hidden width (even)");
    verify->add_option("--mode", o.mode, "analytic or numeric");
    verify->add_option("--grad-tol", o.grad_tol, "Relative gradient tolerance (default 1e-6 analytic, 1e-4 numeric)");
    verify->add_option("--loss-tol", o.loss_tol, "Relative loss tolerance");

    auto* adv = app.add_subcommand("advantage", "Group advantages with difficulty/entropy rescaling");
    add_io(adv);
    adv->add_option("--lambda", o.lambda, "Group scaling strength (per-group 'lambda' overrides)")->check(CLI::NonNegativeNumber);
    adv->add_option("--mu", o.mu, "Sample scaling strength (per-group 'mu' overrides)")->check(CLI::NonNegativeNumber);
    adv->add_option("--tau", o.tau, "Resample when deviation exceeds this");
    adv->add_option("--floor", o.floor, "Lower clamp for the scaling factors");

    auto* stats = app.add_subcommand("stats", "Corpus and trie statistics");
    add_corpus(stats);
    stats->add_flag("--tst", o.tree_split, "Split sessions at boundaries first");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (mask->parsed()) return run_mask(o);
        if (dec->parsed()) return run_decompose(o);
        if (pack->parsed()) return run_pack(o);
        if (verify->parsed()) return run_verify(o);
        if (adv->parsed()) return run_advantage(o);
        if (stats->parsed()) return run_stats(o);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kInfeasible;
    } catch (const VerificationFailure& e) {
        std::cerr << "verification failed: " << e.what() << '\n';
        return kVerifyFailed;
    } catch (const triepack::Error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInput;
    } catch (const std::out_of_range& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInput;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInput;
    }
    return kUsage;
}
