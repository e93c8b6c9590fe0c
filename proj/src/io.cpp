#include "triepack/io.hpp"

#include "triepack/errors.hpp"
#include "triepack/tst_decompose.hpp"

#include <json.hpp>

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace triepack {

using nlohmann::json;

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace {

template <typename T>
void write_array(std::ostream& out, const std::vector<T>& xs) {
    out << '[';
    for (std::size_t i = 0; i < xs.size(); ++i) out << (i ? "," : "") << +xs[i];
    out << ']';
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r") == std::string::npos; }

json parse_line(const std::string& text, std::size_t line) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(line, std::string("invalid JSON: ") + e.what());
    }
}

const json& field(const json& obj, const char* name, std::size_t line) {
    auto it = obj.find(name);
    if (it == obj.end()) throw InputError(line, std::string("missing field '") + name + "'");
    return *it;
}

template <typename T>
std::vector<T> uint_array(const json& j, const char* name, std::size_t line) {
    if (!j.is_array()) throw InputError(line, std::string("field '") + name + "' must be an array");
    std::vector<T> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
            throw InputError(line, std::string("field '") + name + "' must hold non-negative integers");
        out.push_back(static_cast<T>(v.get<std::int64_t>()));
    }
    return out;
}

std::size_t size_field(const json& obj, const char* name, std::size_t line) {
    const json& v = field(obj, name, line);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw InputError(line, std::string("field '") + name + "' must be a non-negative integer");
    return static_cast<std::size_t>(v.get<std::int64_t>());
}

Trajectory trajectory_from_json(const json& rec, std::size_t line, bool lenient) {
    if (!rec.is_object()) throw InputError(line, "expected a trajectory object");
    if (!lenient) {
        for (auto it = rec.begin(); it != rec.end(); ++it)
            if (it.key() != "traj_id" && it.key() != "tokens" && it.key() != "loss_mask")
                throw InputError(line, "unknown field '" + it.key() + "'");
    }
    Trajectory t;
    const json& id = field(rec, "traj_id", line);
    if (!id.is_string()) throw InputError(line, "field 'traj_id' must be a string");
    t.traj_id = id.get<std::string>();
    t.tokens = uint_array<TokenId>(field(rec, "tokens", line), "tokens", line);
    t.loss_mask = uint_array<std::uint8_t>(field(rec, "loss_mask", line), "loss_mask", line);
    try {
        t.validate();
    } catch (const StructureError& e) {
        throw InputError(line, e.what());
    }
    return t;
}

}  // namespace

std::vector<Trajectory> parse_trajectories(std::istream& in, bool lenient) {
    std::vector<Trajectory> out;
    std::string text;
    for (std::size_t line = 1; std::getline(in, text); ++line) {
        if (blank(text)) continue;
        out.push_back(trajectory_from_json(parse_line(text, line), line, lenient));
    }
    return out;
}

void write_trajectory(std::ostream& out, const Trajectory& t) {
    out << "{\"traj_id\":" << json(t.traj_id).dump() << ",\"tokens\":";
    write_array(out, t.tokens);
    out << ",\"loss_mask\":";
    write_array(out, t.loss_mask);
    out << "}\n";
}

Corpus read_corpus(std::istream& in, const CorpusOptions& opts) {
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::istringstream probe(text);
    std::string first;
    std::size_t line = 0;
    while (std::getline(probe, first)) {
        ++line;
        if (!blank(first)) break;
    }
    Corpus c;
    if (blank(first)) return c;

    const json rec = parse_line(first, line);
    std::istringstream body(text);
    if (rec.is_object() && rec.contains("messages")) {
        c.sessions = parse_sessions(body, opts.parse);
        for (const auto& s : c.sessions) {
            if (opts.tree_split) {
                for (const auto& sub : decompose(s)) {
                    auto ts = subtree_trajectories(sub, s, opts.mask);
                    std::move(ts.begin(), ts.end(), std::back_inserter(c.trajectories));
                }
            } else {
                for (MessageIndex leaf : s.leaves()) c.trajectories.push_back(build_loss_mask(s, leaf, opts.mask));
            }
        }
    } else {
        c.trajectories = parse_trajectories(body, opts.parse.lenient);
        if (opts.parse.vocab_size) {
            for (const auto& t : c.trajectories)
                for (TokenId tok : t.tokens)
                    if (tok >= *opts.parse.vocab_size)
                        throw StructureError("trajectory '" + t.traj_id + "': token " + std::to_string(tok) +
                                             " outside vocabulary");
        }
    }
    return c;
}

void write_pack_file(std::ostream& out, const PackFile& file) {
    const auto& h = file.header;
    out << "{\"kind\":\"plan\",\"budget\":" << h.budget << ",\"dp_width\":" << h.dp_width
        << ",\"normalization\":\"" << to_string(h.normalization) << "\",\"denominator\":" << format_double(h.denominator)
        << ",\"n_trajectories\":" << h.n_trajectories << ",\"n_packs\":" << h.n_packs
        << ",\"total_cost\":" << h.total_cost << ",\"unique_tokens\":" << h.unique_tokens
        << ",\"unpacked_tokens\":" << h.unpacked_tokens << "}\n";
    for (const auto& r : file.packs) {
        out << "{\"kind\":\"pack\",\"pack_id\":" << r.pack_id << ",\"trajectories\":" << json(r.traj_ids).dump()
            << ",\"cost\":" << r.cost << ",\"tokens\":";
        write_array(out, r.pack.tokens);
        out << ",\"parent\":";
        write_array(out, r.pack.parent);
        out << ",\"depth\":";
        write_array(out, r.pack.depth);
        out << ",\"segment\":";
        write_array(out, r.pack.segment);
        out << ",\"targets\":[";
        for (std::size_t i = 0; i < r.pack.targets.size(); ++i) {
            const auto& t = r.pack.targets[i];
            out << (i ? "," : "") << '[' << t.context_pos << ',' << t.target_token << ',' << format_double(t.weight)
                << ']';
        }
        out << "]}\n";
    }
}

PackFile parse_pack_file(std::istream& in) {
    PackFile f;
    std::string text;
    bool have_header = false;
    for (std::size_t line = 1; std::getline(in, text); ++line) {
        if (blank(text)) continue;
        const json rec = parse_line(text, line);
        if (!rec.is_object()) throw InputError(line, "expected an object");
        const json& kind = field(rec, "kind", line);
        if (kind == "plan") {
            if (have_header) throw InputError(line, "second plan record");
            have_header = true;
            auto& h = f.header;
            h.budget = size_field(rec, "budget", line);
            h.dp_width = size_field(rec, "dp_width", line);
            const json& norm = field(rec, "normalization", line);
            if (!norm.is_string() || !parse_normalization(norm.get<std::string>()))
                throw InputError(line, "field 'normalization' must be trajectory_mean or token_mean");
            h.normalization = *parse_normalization(norm.get<std::string>());
            const json& den = field(rec, "denominator", line);
            if (!den.is_number()) throw InputError(line, "field 'denominator' must be a number");
            h.denominator = den.get<double>();
            h.n_trajectories = size_field(rec, "n_trajectories", line);
            h.n_packs = size_field(rec, "n_packs", line);
            h.total_cost = size_field(rec, "total_cost", line);
            h.unique_tokens = size_field(rec, "unique_tokens", line);
            h.unpacked_tokens = size_field(rec, "unpacked_tokens", line);
        } else if (kind == "pack") {
            if (!have_header) throw InputError(line, "pack record before the plan record");
            PackRecord r;
            r.pack_id = size_field(rec, "pack_id", line);
            r.cost = size_field(rec, "cost", line);
            const json& ids = field(rec, "trajectories", line);
            if (!ids.is_array()) throw InputError(line, "field 'trajectories' must be an array");
            for (const auto& id : ids) {
                if (!id.is_string()) throw InputError(line, "field 'trajectories' must hold strings");
                r.traj_ids.push_back(id.get<std::string>());
            }
            r.pack.tokens = uint_array<TokenId>(field(rec, "tokens", line), "tokens", line);
            r.pack.depth = uint_array<std::size_t>(field(rec, "depth", line), "depth", line);
            r.pack.segment = uint_array<NodeId>(field(rec, "segment", line), "segment", line);
            const json& parent = field(rec, "parent", line);
            if (!parent.is_array()) throw InputError(line, "field 'parent' must be an array");
            for (const auto& p : parent) {
                if (!p.is_number_integer()) throw InputError(line, "field 'parent' must hold integers");
                r.pack.parent.push_back(p.get<std::int64_t>());
            }
            const json& targets = field(rec, "targets", line);
            if (!targets.is_array()) throw InputError(line, "field 'targets' must be an array");
            for (const auto& t : targets) {
                if (!t.is_array() || t.size() != 3 || !t[0].is_number_integer() || !t[1].is_number_integer() ||
                    !t[2].is_number())
                    throw InputError(line, "targets entries must be [context_pos, target_token, weight]");
                r.pack.targets.push_back({t[0].get<std::size_t>(), t[1].get<TokenId>(), t[2].get<double>()});
            }
            try {
                r.pack.validate();
            } catch (const StructureError& e) {
                throw InputError(line, e.what());
            }
            f.packs.push_back(std::move(r));
        } else {
            throw InputError(line, "field 'kind' must be plan or pack");
        }
    }
    if (!have_header) throw InputError(0, "pack file has no plan record");
    if (f.packs.size() != f.header.n_packs) throw InputError(0, "pack count differs from the plan record");
    return f;
}

PackFile make_pack_file(const Trie& trie, const PackPlan& plan, Normalization norm, std::size_t dp_width) {
    const Normalizer z = batch_normalizer(trie, norm);
    const TrieStats stats = trie_stats(trie);
    PackFile f;
    f.header = PackFileHeader{plan.budget,         dp_width,          norm,
                              z.denominator,       trie.n_trajectories(), plan.packs.size(),
                              plan.total_cost,     stats.unique_tokens,   stats.unpacked_tokens};
    for (std::size_t i = 0; i < plan.packs.size(); ++i) {
        PackRecord r;
        r.pack_id = i;
        for (TrajIndex t : plan.packs[i]) r.traj_ids.push_back(trie.traj_id(t));
        r.cost = plan.cost_per_pack[i];
        r.pack = encode_pack(trie, plan.packs[i], z);
        f.packs.push_back(std::move(r));
    }
    return f;
}

}  // namespace triepack
