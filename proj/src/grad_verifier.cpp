#include "triepack/grad_verifier.hpp"

#include "triepack/errors.hpp"

#include <boost/multiprecision/float128.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace triepack {

namespace {

enum Block : std::size_t { kE = 0, kWq, kWk, kWv, kWo, kU };

using Vec = std::vector<double>;

// y = W x, W rows×cols row-major.
Vec matvec(const Vec& W, const Vec& x, std::size_t rows, std::size_t cols) {
    Vec y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += W[r * cols + c] * x[c];
        y[r] = s;
    }
    return y;
}

// y = W^T x, W rows×cols row-major.
Vec matvec_t(const Vec& W, const Vec& x, std::size_t rows, std::size_t cols) {
    Vec y(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) y[c] += W[r * cols + c] * x[r];
    return y;
}

// G += a b^T, G rows×cols.
void add_outer(Vec& G, const Vec& a, const Vec& b) {
    const std::size_t cols = b.size();
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) G[r * cols + c] += a[r] * b[c];
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// In-place softmax; returns log-sum-exp of the input.
double softmax_inplace(Vec& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return mx + std::log(sum);
}

void check_token(const MicroModel& m, TokenId t) {
    if (t >= m.V)
        throw std::out_of_range("token " + std::to_string(t) + " outside the model vocabulary of " +
                                std::to_string(m.V));
}

// A batch of positions with explicit attention sets; both the packed and the
// unpacked gradient paths lower onto this.
struct Target {
    std::size_t pos;
    TokenId token;
    double weight;
};

struct Graph {
    std::vector<TokenId> tokens;
    std::vector<std::size_t> pos_id;
    std::vector<std::vector<std::size_t>> allowed;  // ascending, includes self
    std::vector<Target> targets;
};

Graph graph_from_pack(const EncodedPack& p) {
    p.validate();
    Graph g;
    g.tokens = p.tokens;
    g.pos_id = p.depth;
    g.allowed.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g.allowed.push_back(attention_allowed(p, i));
    for (const auto& t : p.targets) g.targets.push_back({t.context_pos, t.target_token, t.weight});
    return g;
}

Graph graph_from_trajectory(const Trajectory& t, double weight) {
    Graph g;
    g.tokens = t.tokens;
    for (std::size_t p = 0; p < t.tokens.size(); ++p) {
        g.pos_id.push_back(p);
        std::vector<std::size_t> a(p + 1);
        for (std::size_t j = 0; j <= p; ++j) a[j] = j;
        g.allowed.push_back(std::move(a));
        if (p > 0 && t.loss_mask[p]) g.targets.push_back({p - 1, t.tokens[p], weight});
    }
    return g;
}

struct Cache {
    std::vector<Vec> h, q, k, v, attn, ctx, out;
};

Cache forward(const MicroModel& m, const Graph& g) {
    const std::size_t n = g.tokens.size(), d = m.d;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Cache c;
    c.h.resize(n);
    c.q.resize(n);
    c.k.resize(n);
    c.v.resize(n);
    c.attn.resize(n);
    c.ctx.resize(n);
    c.out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        check_token(m, g.tokens[i]);
        Vec h = position_encoding(g.pos_id[i], d);
        for (std::size_t j = 0; j < d; ++j) h[j] += m.E()[g.tokens[i] * d + j];
        c.q[i] = matvec(m.blocks[kWq], h, d, d);
        c.k[i] = matvec(m.blocks[kWk], h, d, d);
        c.v[i] = matvec(m.blocks[kWv], h, d, d);
        c.h[i] = std::move(h);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& allow = g.allowed[i];
        Vec s(allow.size());
        for (std::size_t a = 0; a < allow.size(); ++a) s[a] = dot(c.q[i], c.k[allow[a]]) * scale;
        softmax_inplace(s);
        Vec ctx(d, 0.0);
        for (std::size_t a = 0; a < allow.size(); ++a)
            for (std::size_t j = 0; j < d; ++j) ctx[j] += s[a] * c.v[allow[a]][j];
        Vec o = matvec(m.blocks[kWo], ctx, d, d);
        for (std::size_t j = 0; j < d; ++j) o[j] += c.h[i][j];
        c.attn[i] = std::move(s);
        c.ctx[i] = std::move(ctx);
        c.out[i] = std::move(o);
    }
    return c;
}

// Adds the weighted loss of `g` to `loss`; accumulates gradients when `grad` is set.
void run_graph(const MicroModel& m, const Graph& g, double& loss, Gradients* grad) {
    const std::size_t n = g.tokens.size(), d = m.d, V = m.V;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const Cache c = forward(m, g);

    std::vector<Vec> d_out(n, Vec(d, 0.0));
    for (const Target& t : g.targets) {
        check_token(m, t.token);
        Vec z = matvec_t(m.blocks[kU], c.out[t.pos], d, V);
        const double target_logit = z[t.token];
        const double lse = softmax_inplace(z);  // z now holds probabilities
        loss += t.weight * (lse - target_logit);
        if (!grad) continue;
        // d CE / d logits = p - onehot
        Vec dz = z;
        dz[t.token] -= 1.0;
        for (double& x : dz) x *= t.weight;
        add_outer(grad->blocks[kU], c.out[t.pos], dz);
        const Vec back = matvec(m.blocks[kU], dz, d, V);
        for (std::size_t j = 0; j < d; ++j) d_out[t.pos][j] += back[j];
    }
    if (!grad) return;

    std::vector<Vec> dh(n, Vec(d, 0.0)), dq(n, Vec(d, 0.0)), dk(n, Vec(d, 0.0)), dv(n, Vec(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) dh[i][j] += d_out[i][j];
        add_outer(grad->blocks[kWo], d_out[i], c.ctx[i]);
        const Vec dctx = matvec_t(m.blocks[kWo], d_out[i], d, d);

        const auto& allow = g.allowed[i];
        const Vec& a = c.attn[i];
        Vec da(allow.size());
        double mean = 0.0;
        for (std::size_t s = 0; s < allow.size(); ++s) {
            da[s] = dot(dctx, c.v[allow[s]]);
            mean += a[s] * da[s];
            for (std::size_t j = 0; j < d; ++j) dv[allow[s]][j] += a[s] * dctx[j];
        }
        for (std::size_t s = 0; s < allow.size(); ++s) {
            const double ds = a[s] * (da[s] - mean) * scale;
            for (std::size_t j = 0; j < d; ++j) {
                dq[i][j] += ds * c.k[allow[s]][j];
                dk[allow[s]][j] += ds * c.q[i][j];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        add_outer(grad->blocks[kWq], dq[i], c.h[i]);
        add_outer(grad->blocks[kWk], dk[i], c.h[i]);
        add_outer(grad->blocks[kWv], dv[i], c.h[i]);
        const Vec bq = matvec_t(m.blocks[kWq], dq[i], d, d);
        const Vec bk = matvec_t(m.blocks[kWk], dk[i], d, d);
        const Vec bv = matvec_t(m.blocks[kWv], dv[i], d, d);
        for (std::size_t j = 0; j < d; ++j)
            grad->blocks[kE][g.tokens[i] * d + j] += dh[i][j] + bq[j] + bk[j] + bv[j];
    }
}

Gradients zeros_like(const MicroModel& m) {
    Gradients g;
    g.V = m.V;
    g.d = m.d;
    for (std::size_t b = 0; b < kParamBlocks; ++b) g.blocks[b].assign(m.blocks[b].size(), 0.0);
    return g;
}

// Loss of `g` evaluated in scalar type T, with parameter (block, index) shifted
// by `delta`. Central-difference roundoff is about ulp(loss) / step: 1e-10 in
// double, 1e-14 in long double. The numeric oracle runs in long double and
// re-evaluates entries too small for that in quad precision.
template <typename T>
T graph_loss(const MicroModel& m, const Graph& g, std::size_t pb, std::size_t pi, T delta) {
    using TV = std::vector<T>;
    const std::size_t n = g.tokens.size(), d = m.d, V = m.V;
    auto param = [&](std::size_t b, std::size_t i) {
        const T x = static_cast<T>(m.blocks[b][i]);
        return b == pb && i == pi ? x + delta : x;
    };
    using std::cos, std::exp, std::log, std::pow, std::sin, std::sqrt;
    const T scale = T(1) / sqrt(static_cast<T>(d));
    std::vector<TV> h(n, TV(d)), q(n, TV(d, T(0))), k(n, TV(d, T(0))), v(n, TV(d, T(0)));
    for (std::size_t i = 0; i < n; ++i) {
        check_token(m, g.tokens[i]);
        for (std::size_t c = 0; 2 * c < d; ++c) {
            const T freq = pow(T(10000), static_cast<T>(2 * c) / static_cast<T>(d));
            const T angle = static_cast<T>(g.pos_id[i]) / freq;
            h[i][2 * c] = sin(angle);
            h[i][2 * c + 1] = cos(angle);
        }
        for (std::size_t j = 0; j < d; ++j) h[i][j] += param(kE, g.tokens[i] * d + j);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) {
                q[i][r] += param(kWq, r * d + c) * h[i][c];
                k[i][r] += param(kWk, r * d + c) * h[i][c];
                v[i][r] += param(kWv, r * d + c) * h[i][c];
            }
    }
    T loss = 0;
    for (const Target& t : g.targets) {
        check_token(m, t.token);
        const auto& allow = g.allowed[t.pos];
        TV s(allow.size());
        for (std::size_t a = 0; a < allow.size(); ++a) {
            T acc = 0;
            for (std::size_t j = 0; j < d; ++j) acc += q[t.pos][j] * k[allow[a]][j];
            s[a] = acc * scale;
        }
        const T smax = *std::max_element(s.begin(), s.end());
        T ssum = 0;
        for (T& x : s) ssum += (x = exp(x - smax));
        TV ctx(d, T(0));
        for (std::size_t a = 0; a < allow.size(); ++a)
            for (std::size_t j = 0; j < d; ++j) ctx[j] += s[a] / ssum * v[allow[a]][j];
        TV o = h[t.pos];
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) o[r] += param(kWo, r * d + c) * ctx[c];
        TV z(V, T(0));
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < V; ++c) z[c] += param(kU, r * V + c) * o[r];
        const T zmax = *std::max_element(z.begin(), z.end());
        T zsum = 0;
        for (T x : z) zsum += exp(x - zmax);
        loss += static_cast<T>(t.weight) * (zmax + log(zsum) - z[t.token]);
    }
    return loss;
}

template <typename T>
double central_difference(const MicroModel& model, const std::vector<Graph>& graphs, std::size_t b, std::size_t i,
                          double step) {
    auto total = [&](T delta) {
        T s = 0;
        for (const Graph& gr : graphs) s += graph_loss<T>(model, gr, b, i, delta);
        return s;
    };
    const T h = static_cast<T>(step);
    return static_cast<double>((total(h) - total(-h)) / (2 * h));
}

// Below this magnitude a long double estimate carries more than 1e-6 relative noise.
constexpr double kQuadRefine = 1e-8;

Gradients central_differences(const MicroModel& model, double step, const std::vector<Graph>& graphs) {
    Gradients g = zeros_like(model);
    // Embedding rows of absent tokens cannot move the loss.
    std::vector<bool> present(model.V, false);
    for (const Graph& gr : graphs)
        for (TokenId t : gr.tokens)
            if (t < model.V) present[t] = true;
    for (std::size_t b = 0; b < kParamBlocks; ++b)
        for (std::size_t i = 0; i < model.blocks[b].size(); ++i) {
            if (b == kE && !present[i / model.d]) continue;
            double v = central_difference<long double>(model, graphs, b, i, step);
            if (std::abs(v) < kQuadRefine) v = central_difference<boost::multiprecision::float128>(model, graphs, b, i, step);
            g.blocks[b][i] = v;
        }
    return g;
}

double relative_error(double value, double reference) {
    return std::abs(value - reference) / std::max(1e-12, std::abs(reference));
}

}  // namespace

std::size_t MicroParams::total_size() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.size();
    return n;
}

MicroModel init_model(std::uint64_t seed, std::size_t V, std::size_t d) {
    if (V < 2) throw std::invalid_argument("init_model: vocabulary size must be at least 2");
    if (d == 0 || d % 2 != 0) throw std::invalid_argument("init_model: hidden width must be even and positive");
    MicroModel m;
    m.V = V;
    m.d = d;
    const std::array<std::size_t, kParamBlocks> sizes{V * d, d * d, d * d, d * d, d * d, d * V};
    std::mt19937_64 rng(seed);
    for (std::size_t b = 0; b < kParamBlocks; ++b) {
        m.blocks[b].resize(sizes[b]);
        for (double& x : m.blocks[b]) {
            // Top 53 bits -> [0, 1); std distributions are not portable across libraries.
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            x = -0.1 + 0.2 * u;
        }
    }
    return m;
}

std::vector<double> position_encoding(std::size_t pos, std::size_t d) {
    std::vector<double> pe(d);
    for (std::size_t k = 0; 2 * k < d; ++k) {
        const double freq = std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(d));
        const double angle = static_cast<double>(pos) / freq;
        pe[2 * k] = std::sin(angle);
        if (2 * k + 1 < d) pe[2 * k + 1] = std::cos(angle);
    }
    return pe;
}

// Written directly against the causal definition, independent of the graph
// lowering used by the packed path.
double loss_unpacked(const MicroModel& m, std::span<const Trajectory> trajectories, const Normalizer& norm) {
    const std::size_t d = m.d, V = m.V;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    double total = 0.0;
    for (const Trajectory& tr : trajectories) {
        const std::size_t L = tr.tokens.size();
        std::vector<Vec> h(L), q(L), k(L), v(L);
        for (std::size_t p = 0; p < L; ++p) {
            check_token(m, tr.tokens[p]);
            h[p] = position_encoding(p, d);
            for (std::size_t j = 0; j < d; ++j) h[p][j] += m.E()[tr.tokens[p] * d + j];
            q[p] = matvec(m.blocks[kWq], h[p], d, d);
            k[p] = matvec(m.blocks[kWk], h[p], d, d);
            v[p] = matvec(m.blocks[kWv], h[p], d, d);
        }
        double traj_loss = 0.0;
        for (std::size_t p = 0; p + 1 < L; ++p) {
            if (!tr.loss_mask[p + 1]) continue;
            Vec scores(p + 1);
            for (std::size_t j = 0; j <= p; ++j) scores[j] = dot(q[p], k[j]) * scale;
            softmax_inplace(scores);
            Vec ctx(d, 0.0);
            for (std::size_t j = 0; j <= p; ++j)
                for (std::size_t c = 0; c < d; ++c) ctx[c] += scores[j] * v[j][c];
            Vec o = matvec(m.blocks[kWo], ctx, d, d);
            for (std::size_t c = 0; c < d; ++c) o[c] += h[p][c];
            Vec logits = matvec_t(m.blocks[kU], o, d, V);
            const TokenId next = tr.tokens[p + 1];
            const double target_logit = logits[next];
            traj_loss += softmax_inplace(logits) - target_logit;
        }
        total += traj_loss;
    }
    return norm.denominator > 0.0 ? total / norm.denominator : 0.0;
}

double loss_packed(const MicroModel& model, std::span<const EncodedPack> packs) {
    double loss = 0.0;
    for (const auto& p : packs) run_graph(model, graph_from_pack(p), loss, nullptr);
    return loss;
}

std::vector<std::vector<double>> attention_weights(const MicroModel& model, const EncodedPack& pack) {
    return forward(model, graph_from_pack(pack)).attn;
}

Gradients grad_packed(const MicroModel& model, std::span<const EncodedPack> packs, double* loss) {
    Gradients g = zeros_like(model);
    double l = 0.0;
    for (const auto& p : packs) run_graph(model, graph_from_pack(p), l, &g);
    if (loss) *loss = l;
    return g;
}

Gradients grad_unpacked(const MicroModel& model, std::span<const Trajectory> trajectories, const Normalizer& norm,
                        double* loss) {
    Gradients g = zeros_like(model);
    double l = 0.0;
    const double w = norm.denominator > 0.0 ? 1.0 / norm.denominator : 0.0;
    for (const auto& t : trajectories) run_graph(model, graph_from_trajectory(t, w), l, &g);
    if (loss) *loss = l;
    return g;
}

Gradients numeric_grad_packed(const MicroModel& model, std::span<const EncodedPack> packs, double step) {
    std::vector<Graph> graphs;
    for (const auto& p : packs) graphs.push_back(graph_from_pack(p));
    return central_differences(model, step, graphs);
}

Gradients numeric_grad_unpacked(const MicroModel& model, std::span<const Trajectory> trajectories,
                                const Normalizer& norm, double step) {
    const double w = norm.denominator > 0.0 ? 1.0 / norm.denominator : 0.0;
    std::vector<Graph> graphs;
    for (const auto& t : trajectories) graphs.push_back(graph_from_trajectory(t, w));
    return central_differences(model, step, graphs);
}

std::array<double, kParamBlocks> block_relative_errors(const Gradients& a, const Gradients& b) {
    std::array<double, kParamBlocks> out{};
    for (std::size_t blk = 0; blk < kParamBlocks; ++blk) {
        if (a.blocks[blk].size() != b.blocks[blk].size())
            throw std::invalid_argument("block_relative_errors: shape mismatch");
        for (std::size_t i = 0; i < a.blocks[blk].size(); ++i)
            out[blk] = std::max(out[blk], relative_error(a.blocks[blk][i], b.blocks[blk][i]));
    }
    return out;
}

GradReport grad_check_encoded(const MicroModel& model, std::span<const Trajectory> trajectories,
                              std::span<const EncodedPack> packs, Normalization norm_mode, GradMode mode,
                              const SizeLimits& limits) {
    if (model.V > limits.max_vocab || model.d > limits.max_width)
        throw SizeError("grad_check: model exceeds V <= " + std::to_string(limits.max_vocab) +
                        ", d <= " + std::to_string(limits.max_width));
    if (trajectories.size() > limits.max_trajectories)
        throw SizeError("grad_check: more than " + std::to_string(limits.max_trajectories) + " trajectories");
    for (const auto& t : trajectories)
        if (t.tokens.size() > limits.max_length)
            throw SizeError("grad_check: trajectory '" + t.traj_id + "' longer than " +
                            std::to_string(limits.max_length));

    const Normalizer norm = batch_normalizer(trajectories, norm_mode);
    GradReport r;
    r.loss_unpacked = loss_unpacked(model, trajectories, norm);
    r.loss_packed = loss_packed(model, packs);
    r.loss_rel_err = relative_error(r.loss_packed, r.loss_unpacked);

    Gradients packed, unpacked;
    if (mode == GradMode::analytic) {
        packed = grad_packed(model, packs);
        unpacked = grad_unpacked(model, trajectories, norm);
    } else {
        packed = numeric_grad_packed(model, packs);
        unpacked = numeric_grad_unpacked(model, trajectories, norm);
    }
    r.block_rel_err = block_relative_errors(packed, unpacked);
    r.max_rel_grad_err = *std::max_element(r.block_rel_err.begin(), r.block_rel_err.end());
    return r;
}

GradReport grad_check(const MicroModel& model, std::span<const Trajectory> trajectories, const PackPlan& plan,
                      Normalization norm_mode, GradMode mode, const SizeLimits& limits) {
    const Trie trie = build_trie(trajectories);
    const Normalizer norm = batch_normalizer(trie, norm_mode);
    std::vector<EncodedPack> packs;
    for (const auto& members : plan.packs) packs.push_back(encode_pack(trie, members, norm));
    return grad_check_encoded(model, trajectories, packs, norm_mode, mode, limits);
}

std::vector<EncodedPack> with_uniform_weights(std::span<const EncodedPack> packs, double weight) {
    std::vector<EncodedPack> out(packs.begin(), packs.end());
    for (auto& p : out)
        for (auto& t : p.targets) t.weight = weight;
    return out;
}

}  // namespace triepack
