#include "meshmorph/deformer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace meshmorph {

namespace {

constexpr double kScoreClamp = 30.0;

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

// node-wise velocity projection: identity inside, tangent line on edges,
// pinned at corners
Vec2 project_velocity(const Mesh& mesh, int node, const Vec2& v) {
    const BoundaryTag& tag = mesh.boundary[node];
    if (tag.kind == NodeKind::Interior) return v;
    if (tag.kind == NodeKind::Corner) return {0.0, 0.0};
    Vec2 t = segment_tangent(mesh, tag.segment);
    return t * dot(v, t);
}

}  // namespace

void DeformerParams::validate() const {
    if (cfg.d_lambda < 1) throw std::invalid_argument("DeformerParams: d_lambda must be >= 1");
    if (!(cfg.dtau > 0.0 && cfg.dtau < 0.5))
        throw std::invalid_argument("DeformerParams: dtau must lie in (0, 1/2)");
    if (cfg.n_blocks < 1 || cfg.steps_per_block < 1)
        throw std::invalid_argument("DeformerParams: need at least one block and one step");
    const size_t in_att = 2 * (2 + static_cast<size_t>(cfg.d_lambda));
    if (enc_w1.size() != static_cast<size_t>(cfg.encoder_hidden) * 4 ||
        enc_b1.size() != static_cast<size_t>(cfg.encoder_hidden) ||
        enc_w2.size() != static_cast<size_t>(cfg.d_lambda) * cfg.encoder_hidden ||
        enc_b2.size() != static_cast<size_t>(cfg.d_lambda))
        throw std::invalid_argument("DeformerParams: encoder shape mismatch");
    if (blocks.size() != static_cast<size_t>(cfg.n_blocks))
        throw std::invalid_argument("DeformerParams: block count mismatch");
    for (const BlockParams& b : blocks) {
        if (b.att_w1.size() != static_cast<size_t>(cfg.attention_hidden) * in_att ||
            b.att_b1.size() != static_cast<size_t>(cfg.attention_hidden) ||
            b.att_w2.size() != static_cast<size_t>(cfg.attention_hidden) || b.att_b2.size() != 1 ||
            b.w_lambda.size() != static_cast<size_t>(cfg.d_lambda) * cfg.d_lambda)
            throw std::invalid_argument("DeformerParams: block shape mismatch");
        check_finite(b.att_w1, "att_w1");
        check_finite(b.att_b1, "att_b1");
        check_finite(b.att_w2, "att_w2");
        check_finite(b.att_b2, "att_b2");
        check_finite(b.w_lambda, "w_lambda");
    }
    check_finite(enc_w1, "enc_w1");
    check_finite(enc_b1, "enc_b1");
    check_finite(enc_w2, "enc_w2");
    check_finite(enc_b2, "enc_b2");
}

DeformerParams DeformerParams::init(const DeformerConfig& cfg, Rng& rng) {
    DeformerParams p;
    p.cfg = cfg;
    auto fill = [&rng](std::vector<double>& v, size_t n, double scale) {
        v.resize(n);
        for (double& x : v) x = rng.uniform(-scale, scale);
    };
    fill(p.enc_w1, static_cast<size_t>(cfg.encoder_hidden) * 4, 1.0 / std::sqrt(4.0));
    p.enc_b1.assign(cfg.encoder_hidden, 0.0);
    fill(p.enc_w2, static_cast<size_t>(cfg.d_lambda) * cfg.encoder_hidden,
         1.0 / std::sqrt(static_cast<double>(cfg.encoder_hidden)));
    p.enc_b2.assign(cfg.d_lambda, 0.0);

    const size_t in_att = 2 * (2 + static_cast<size_t>(cfg.d_lambda));
    p.blocks.resize(cfg.n_blocks);
    for (BlockParams& b : p.blocks) {
        fill(b.att_w1, static_cast<size_t>(cfg.attention_hidden) * in_att,
             1.0 / std::sqrt(static_cast<double>(in_att)));
        b.att_b1.assign(cfg.attention_hidden, 0.0);
        b.att_w2.assign(cfg.attention_hidden, 0.0);  // uniform attention at start
        b.att_b2.assign(1, 0.0);
        fill(b.w_lambda, static_cast<size_t>(cfg.d_lambda) * cfg.d_lambda,
             1.0 / std::sqrt(static_cast<double>(cfg.d_lambda)));
    }
    p.validate();
    return p;
}

std::vector<std::vector<double>*> param_arrays(DeformerParams& p) {
    std::vector<std::vector<double>*> arrays = {&p.enc_w1, &p.enc_b1, &p.enc_w2, &p.enc_b2};
    for (BlockParams& b : p.blocks) {
        arrays.push_back(&b.att_w1);
        arrays.push_back(&b.att_b1);
        arrays.push_back(&b.att_w2);
        arrays.push_back(&b.att_b2);
        arrays.push_back(&b.w_lambda);
    }
    return arrays;
}

ParamGradient ParamGradient::zeros_like(const DeformerParams& p) {
    ParamGradient g;
    g.cfg = p.cfg;
    g.enc_w1.assign(p.enc_w1.size(), 0.0);
    g.enc_b1.assign(p.enc_b1.size(), 0.0);
    g.enc_w2.assign(p.enc_w2.size(), 0.0);
    g.enc_b2.assign(p.enc_b2.size(), 0.0);
    g.blocks.resize(p.blocks.size());
    for (size_t b = 0; b < p.blocks.size(); ++b) {
        g.blocks[b].att_w1.assign(p.blocks[b].att_w1.size(), 0.0);
        g.blocks[b].att_b1.assign(p.blocks[b].att_b1.size(), 0.0);
        g.blocks[b].att_w2.assign(p.blocks[b].att_w2.size(), 0.0);
        g.blocks[b].att_b2.assign(p.blocks[b].att_b2.size(), 0.0);
        g.blocks[b].w_lambda.assign(p.blocks[b].w_lambda.size(), 0.0);
    }
    return g;
}

std::vector<std::vector<double>*> param_arrays(ParamGradient& p) {
    std::vector<std::vector<double>*> arrays = {&p.enc_w1, &p.enc_b1, &p.enc_w2, &p.enc_b2};
    for (BlockParams& b : p.blocks) {
        arrays.push_back(&b.att_w1);
        arrays.push_back(&b.att_b1);
        arrays.push_back(&b.att_w2);
        arrays.push_back(&b.att_b2);
        arrays.push_back(&b.w_lambda);
    }
    return arrays;
}

void save_checkpoint(const DeformerParams& params, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["d_lambda"] = params.cfg.d_lambda;
    j["encoder_hidden"] = params.cfg.encoder_hidden;
    j["attention_hidden"] = params.cfg.attention_hidden;
    j["n_blocks"] = params.cfg.n_blocks;
    j["steps_per_block"] = params.cfg.steps_per_block;
    j["dtau"] = params.cfg.dtau;
    auto dump = [](const std::vector<double>& v, std::initializer_list<int> shape) {
        nlohmann::json e;
        e["shape"] = shape;
        e["data"] = v;
        return e;
    };
    const int ia = 2 * (2 + params.cfg.d_lambda);
    auto& w = j["weights"];
    w["enc_w1"] = dump(params.enc_w1, {params.cfg.encoder_hidden, 4});
    w["enc_b1"] = dump(params.enc_b1, {params.cfg.encoder_hidden});
    w["enc_w2"] = dump(params.enc_w2, {params.cfg.d_lambda, params.cfg.encoder_hidden});
    w["enc_b2"] = dump(params.enc_b2, {params.cfg.d_lambda});
    for (int b = 0; b < params.cfg.n_blocks; ++b) {
        std::string k = "block" + std::to_string(b) + ".";
        w[k + "att_w1"] = dump(params.blocks[b].att_w1, {params.cfg.attention_hidden, ia});
        w[k + "att_b1"] = dump(params.blocks[b].att_b1, {params.cfg.attention_hidden});
        w[k + "att_w2"] = dump(params.blocks[b].att_w2, {1, params.cfg.attention_hidden});
        w[k + "att_b2"] = dump(params.blocks[b].att_b2, {1});
        w[k + "w_lambda"] = dump(params.blocks[b].w_lambda,
                                 {params.cfg.d_lambda, params.cfg.d_lambda});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << j.dump();
}

DeformerParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("version", 0) != 1)
        throw std::runtime_error("load_checkpoint: unsupported checkpoint version in " + path);
    DeformerParams p;
    p.cfg.d_lambda = j.at("d_lambda").get<int>();
    p.cfg.encoder_hidden = j.at("encoder_hidden").get<int>();
    p.cfg.attention_hidden = j.at("attention_hidden").get<int>();
    p.cfg.n_blocks = j.at("n_blocks").get<int>();
    p.cfg.steps_per_block = j.at("steps_per_block").get<int>();
    p.cfg.dtau = j.at("dtau").get<double>();
    const auto& w = j.at("weights");
    auto arr = [&w](const std::string& key) {
        return w.at(key).at("data").get<std::vector<double>>();
    };
    p.enc_w1 = arr("enc_w1");
    p.enc_b1 = arr("enc_b1");
    p.enc_w2 = arr("enc_w2");
    p.enc_b2 = arr("enc_b2");
    p.blocks.resize(p.cfg.n_blocks);
    for (int b = 0; b < p.cfg.n_blocks; ++b) {
        std::string k = "block" + std::to_string(b) + ".";
        p.blocks[b].att_w1 = arr(k + "att_w1");
        p.blocks[b].att_b1 = arr(k + "att_b1");
        p.blocks[b].att_w2 = arr(k + "att_w2");
        p.blocks[b].att_b2 = arr(k + "att_b2");
        p.blocks[b].w_lambda = arr(k + "w_lambda");
    }
    p.validate();
    return p;
}

FeatureEncoding encode_features(const Mesh& mesh0, const FemField& hess_norm,
                                const FemField& monitor, const DeformerParams& params) {
    const int n = mesh0.n_nodes();
    if (static_cast<int>(hess_norm.values.size()) != n ||
        static_cast<int>(monitor.values.size()) != n)
        throw std::invalid_argument("encode_features: field size mismatch");

    FeatureEncoding enc;
    enc.standardized.assign(static_cast<size_t>(n) * 4, 0.0);
    for (int i = 0; i < n; ++i) {
        enc.standardized[i * 4 + 0] = mesh0.coords[i].x;
        enc.standardized[i * 4 + 1] = mesh0.coords[i].y;
        enc.standardized[i * 4 + 2] = hess_norm.values[i];
        enc.standardized[i * 4 + 3] = monitor.values[i];
    }
    check_finite(enc.standardized, "encode_features inputs");

    // channel-wise standardization; constant channels map to zero
    for (int c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += enc.standardized[i * 4 + c];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = enc.standardized[i * 4 + c] - mean;
            var += d * d;
        }
        var /= n;
        double inv_std = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
        for (int i = 0; i < n; ++i)
            enc.standardized[i * 4 + c] = (enc.standardized[i * 4 + c] - mean) * inv_std;
    }

    const int he = params.cfg.encoder_hidden;
    const int d = params.cfg.d_lambda;
    enc.hidden.assign(static_cast<size_t>(n) * he, 0.0);
    enc.lambda.assign(static_cast<size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int h = 0; h < he; ++h) {
            double s = params.enc_b1[h];
            for (int c = 0; c < 4; ++c) s += params.enc_w1[h * 4 + c] * enc.standardized[i * 4 + c];
            enc.hidden[i * he + h] = std::tanh(s);
        }
        for (int f = 0; f < d; ++f) {
            double s = params.enc_b2[f];
            for (int h = 0; h < he; ++h) s += params.enc_w2[f * he + h] * enc.hidden[i * he + h];
            enc.lambda[i * d + f] = std::tanh(s);
        }
    }
    return enc;
}

AttentionGraph attention_weights(const std::vector<Vec2>& positions,
                                 const std::vector<double>& lambda, const MeshGraph& graph,
                                 const DeformerParams& params, int block, AttentionTape* tape) {
    const int n = graph.n_nodes();
    const int d = params.cfg.d_lambda;
    const int ha = params.cfg.attention_hidden;
    const int in_dim = 2 * (2 + d);
    const BlockParams& bp = params.blocks.at(block);
    const int n_edges = graph.n_edges();

    std::vector<double> scores(n_edges);
    if (tape) {
        tape->hidden.assign(static_cast<size_t>(n_edges) * ha, 0.0);
        tape->scores.assign(n_edges, 0.0);
    }

    std::vector<double> input(in_dim);
    for (int i = 0; i < n; ++i) {
        for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
            int j = graph.neighbors[k];
            input[0] = positions[i].x;
            input[1] = positions[i].y;
            for (int f = 0; f < d; ++f) input[2 + f] = lambda[i * d + f];
            input[2 + d] = positions[j].x;
            input[3 + d] = positions[j].y;
            for (int f = 0; f < d; ++f) input[4 + d + f] = lambda[j * d + f];

            double score = bp.att_b2[0];
            for (int h = 0; h < ha; ++h) {
                double s = bp.att_b1[h];
                for (int c = 0; c < in_dim; ++c) s += bp.att_w1[h * in_dim + c] * input[c];
                double th = std::tanh(s);
                if (tape) tape->hidden[static_cast<size_t>(k) * ha + h] = th;
                score += bp.att_w2[h] * th;
            }
            if (tape) tape->scores[k] = score;
            scores[k] = std::clamp(score, -kScoreClamp, kScoreClamp);
        }
    }

    AttentionGraph att;
    att.graph = &graph;
    att.weights.assign(n_edges, 0.0);
    for (int i = 0; i < n; ++i) {
        int lo = graph.offsets[i], hi = graph.offsets[i + 1];
        if (lo == hi) continue;
        double smax = scores[lo];
        for (int k = lo + 1; k < hi; ++k) smax = std::max(smax, scores[k]);
        double denom = 0.0;
        for (int k = lo; k < hi; ++k) {
            att.weights[k] = std::exp(scores[k] - smax);
            denom += att.weights[k];
        }
        for (int k = lo; k < hi; ++k) att.weights[k] /= denom;
    }
    return att;
}

DiffusionResult diffuse_block(const std::vector<Vec2>& z, const AttentionGraph& attention,
                              double dtau, int steps, const Mesh& mesh) {
    if (!(dtau > 0.0 && dtau < 0.5))
        throw std::invalid_argument("diffuse_block: dtau must lie in (0, 1/2), got " +
                                    std::to_string(dtau));
    const MeshGraph& graph = *attention.graph;
    const int n = graph.n_nodes();
    if (static_cast<int>(z.size()) != n || mesh.n_nodes() != n)
        throw std::invalid_argument("diffuse_block: size mismatch");

    DiffusionResult res;
    res.states.reserve(steps + 1);
    res.states.push_back(z);
    std::vector<Vec2> cur = z;
    std::vector<Vec2> next(n);
    for (int t = 0; t < steps; ++t) {
        for (int i = 0; i < n; ++i) {
            Vec2 avg{0.0, 0.0};
            for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k)
                avg += attention.weights[k] * cur[graph.neighbors[k]];
            Vec2 v = project_velocity(mesh, i, avg - cur[i]);
            next[i] = cur[i] + dtau * v;
        }
        cur = next;
        res.states.push_back(cur);
    }

    Mesh probe = mesh;
    probe.coords = cur;
    TangleReport rep = is_tangled(probe);
    if (rep.tangled)
        throw std::runtime_error("diffuse_block: produced a tangled mesh (element " +
                                 std::to_string(rep.offending.front()) +
                                 "); this violates the step bound and indicates a bug");
    return res;
}

double max_stable_dt(const AttentionGraph& attention) {
    const MeshGraph& graph = *attention.graph;
    const int n = graph.n_nodes();
    // power iteration on Delta = I - A for the dominant eigenvalue size
    std::vector<double> v(n), av(n);
    for (int i = 0; i < n; ++i) v[i] = (i % 2 == 0) ? 1.0 : -1.0;
    double lambda_hat = 2.0;
    for (int it = 0; it < 60; ++it) {
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k)
                s += attention.weights[k] * v[graph.neighbors[k]];
            av[i] = v[i] - s;
        }
        double nv = 0.0;
        for (double x : av) nv += x * x;
        nv = std::sqrt(nv);
        if (nv < 1e-30) {
            lambda_hat = 0.0;
            break;
        }
        lambda_hat = nv;
        for (int i = 0; i < n; ++i) v[i] = av[i] / nv;
    }
    lambda_hat = std::clamp(lambda_hat, 0.0, 2.0);
    const double dtau0 = 0.25;
    double kappa = 1.0 / (1.0 - dtau0 * lambda_hat);  // lambda_min = 0 for row-stochastic A
    kappa = std::max(kappa, 1.0);
    // shave the cap so the bound itself is accepted as a step size
    return std::min(0.5 * (1.0 - 1e-12), 0.5 * kappa);
}

DeformResult deform(const Mesh& mesh0, const DeformerParams& params, const FemField& hess_norm,
                    const FemField& monitor) {
    params.validate();
    TangleReport rep = is_tangled(mesh0);
    if (rep.tangled) throw std::runtime_error("deform: input mesh is tangled");

    DeformResult out;
    out.tape.mesh0 = &mesh0;
    out.tape.graph = mesh_graph(mesh0);
    out.tape.encoding = encode_features(mesh0, hess_norm, monitor, params);

    const int d = params.cfg.d_lambda;
    const int n = mesh0.n_nodes();
    std::vector<Vec2> z = mesh0.coords;
    std::vector<double> x = out.tape.encoding.lambda;

    for (int b = 0; b < params.cfg.n_blocks; ++b) {
        BlockTape bt;
        bt.z_entry = z;
        bt.x_entry = x;
        bt.weights = attention_weights(z, x, out.tape.graph, params, b, &bt.attention);
        bt.weights.graph = nullptr;  // re-pointed below; tape owns no graph

        AttentionGraph att;
        att.graph = &out.tape.graph;
        att.weights = bt.weights.weights;
        DiffusionResult diff = diffuse_block(z, att, params.cfg.dtau, params.cfg.steps_per_block,
                                             mesh0);
        z = diff.states.back();
        bt.z_states = std::move(diff.states);

        // feature update x <- tanh((A x) W)
        bt.y.assign(static_cast<size_t>(n) * d, 0.0);
        for (int i = 0; i < n; ++i)
            for (int k = out.tape.graph.offsets[i]; k < out.tape.graph.offsets[i + 1]; ++k) {
                int j = out.tape.graph.neighbors[k];
                double w = att.weights[k];
                for (int f = 0; f < d; ++f) bt.y[i * d + f] += w * x[j * d + f];
            }
        bt.x_next.assign(static_cast<size_t>(n) * d, 0.0);
        const BlockParams& bp = params.blocks[b];
        for (int i = 0; i < n; ++i)
            for (int f = 0; f < d; ++f) {
                double s = 0.0;
                for (int g = 0; g < d; ++g) s += bt.y[i * d + g] * bp.w_lambda[g * d + f];
                bt.x_next[i * d + f] = std::tanh(s);
            }
        x = bt.x_next;
        bt.weights.weights = att.weights;
        out.tape.blocks.push_back(std::move(bt));
    }

    out.mesh = mesh0;
    out.mesh.coords = z;
    return out;
}

ParamGradient backward_params(const DeformerParams& params, const DeformTape& tape,
                              const std::vector<Vec2>& d_loss_d_z,
                              const std::vector<double>& d_loss_d_x) {
    const Mesh& mesh0 = *tape.mesh0;
    const MeshGraph& graph = tape.graph;
    const int n = graph.n_nodes();
    const int d = params.cfg.d_lambda;
    const int ha = params.cfg.attention_hidden;
    const int in_dim = 2 * (2 + d);
    const double dtau = params.cfg.dtau;
    const int steps = params.cfg.steps_per_block;

    if (static_cast<int>(d_loss_d_z.size()) != n)
        throw std::invalid_argument("backward_params: position gradient size mismatch");
    if (!d_loss_d_x.empty() && static_cast<int>(d_loss_d_x.size()) != n * d)
        throw std::invalid_argument("backward_params: feature gradient size mismatch");
    if (tape.blocks.size() != static_cast<size_t>(params.cfg.n_blocks))
        throw std::invalid_argument("backward_params: tape does not match the parameters");

    ParamGradient grad = ParamGradient::zeros_like(params);

    std::vector<Vec2> g_z = d_loss_d_z;
    std::vector<double> g_x = d_loss_d_x;
    if (g_x.empty()) g_x.assign(static_cast<size_t>(n) * d, 0.0);

    for (int b = params.cfg.n_blocks - 1; b >= 0; --b) {
        const BlockTape& bt = tape.blocks[b];
        const BlockParams& bp = params.blocks[b];
        BlockParams& gbp = grad.blocks[b];
        const std::vector<double>& aw = bt.weights.weights;

        std::vector<double> g_att(graph.n_edges(), 0.0);

        // feature update backward: x_next = tanh(y w_lambda)
        std::vector<double> g_y(static_cast<size_t>(n) * d, 0.0);
        {
            std::vector<double> g_pre(static_cast<size_t>(n) * d);
            for (int i = 0; i < n * d; ++i)
                g_pre[i] = g_x[i] * (1.0 - bt.x_next[i] * bt.x_next[i]);
            for (int i = 0; i < n; ++i)
                for (int g = 0; g < d; ++g) {
                    double yig = bt.y[i * d + g];
                    double acc = 0.0;
                    for (int f = 0; f < d; ++f) {
                        gbp.w_lambda[g * d + f] += yig * g_pre[i * d + f];
                        acc += g_pre[i * d + f] * bp.w_lambda[g * d + f];
                    }
                    g_y[i * d + g] = acc;
                }
        }
        // y = A x_entry
        std::vector<double> g_x_entry(static_cast<size_t>(n) * d, 0.0);
        for (int i = 0; i < n; ++i)
            for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
                int j = graph.neighbors[k];
                double acc = 0.0;
                for (int f = 0; f < d; ++f) {
                    acc += g_y[i * d + f] * bt.x_entry[j * d + f];
                    g_x_entry[j * d + f] += aw[k] * g_y[i * d + f];
                }
                g_att[k] += acc;
            }

        // diffusion backward: z_{t+1} = z_t + dtau P (A z_t - z_t)
        for (int t = steps - 1; t >= 0; --t) {
            const std::vector<Vec2>& zt = bt.z_states[t];
            std::vector<Vec2> w(n);
            for (int i = 0; i < n; ++i) w[i] = dtau * project_velocity(mesh0, i, g_z[i]);
            std::vector<Vec2> g_prev = g_z;
            for (int i = 0; i < n; ++i) {
                g_prev[i] -= w[i];
                for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
                    int j = graph.neighbors[k];
                    g_prev[j] += aw[k] * w[i];        // A^T w
                    g_att[k] += dot(w[i], zt[j]);     // d v_i / d a_k = z_j
                }
            }
            g_z = std::move(g_prev);
        }

        // attention backward: softmax rows, then the edge MLP
        std::vector<double> g_scores(graph.n_edges(), 0.0);
        for (int i = 0; i < n; ++i) {
            int lo = graph.offsets[i], hi = graph.offsets[i + 1];
            double dotrow = 0.0;
            for (int k = lo; k < hi; ++k) dotrow += aw[k] * g_att[k];
            for (int k = lo; k < hi; ++k) g_scores[k] = aw[k] * (g_att[k] - dotrow);
        }

        std::vector<double> input(in_dim);
        for (int i = 0; i < n; ++i) {
            for (int k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
                double gs = g_scores[k];
                if (gs == 0.0) continue;
                if (std::abs(bt.attention.scores[k]) > kScoreClamp) continue;  // clamped flat
                int j = graph.neighbors[k];
                input[0] = bt.z_entry[i].x;
                input[1] = bt.z_entry[i].y;
                for (int f = 0; f < d; ++f) input[2 + f] = bt.x_entry[i * d + f];
                input[2 + d] = bt.z_entry[j].x;
                input[3 + d] = bt.z_entry[j].y;
                for (int f = 0; f < d; ++f) input[4 + d + f] = bt.x_entry[j * d + f];

                gbp.att_b2[0] += gs;
                Vec2 gzi{0.0, 0.0}, gzj{0.0, 0.0};
                for (int h = 0; h < ha; ++h) {
                    double th = bt.attention.hidden[static_cast<size_t>(k) * ha + h];
                    gbp.att_w2[h] += gs * th;
                    double gh = gs * bp.att_w2[h] * (1.0 - th * th);
                    if (gh == 0.0) continue;
                    gbp.att_b1[h] += gh;
                    const double* w1row = &bp.att_w1[static_cast<size_t>(h) * in_dim];
                    double* gw1row = &gbp.att_w1[static_cast<size_t>(h) * in_dim];
                    for (int c = 0; c < in_dim; ++c) gw1row[c] += gh * input[c];
                    gzi.x += gh * w1row[0];
                    gzi.y += gh * w1row[1];
                    for (int f = 0; f < d; ++f) g_x_entry[i * d + f] += gh * w1row[2 + f];
                    gzj.x += gh * w1row[2 + d];
                    gzj.y += gh * w1row[3 + d];
                    for (int f = 0; f < d; ++f) g_x_entry[j * d + f] += gh * w1row[4 + d + f];
                }
                g_z[i] += gzi;
                g_z[j] += gzj;
            }
        }
        g_x = std::move(g_x_entry);
    }

    // encoder backward; standardized inputs are data
    const FeatureEncoding& enc = tape.encoding;
    const int he = params.cfg.encoder_hidden;
    for (int i = 0; i < n; ++i) {
        for (int f = 0; f < d; ++f) {
            double lam = enc.lambda[i * d + f];
            double gp = g_x[i * d + f] * (1.0 - lam * lam);
            if (gp == 0.0) continue;
            grad.enc_b2[f] += gp;
            for (int h = 0; h < he; ++h) {
                double hid = enc.hidden[i * he + h];
                grad.enc_w2[f * he + h] += gp * hid;
                double gh = gp * params.enc_w2[f * he + h] * (1.0 - hid * hid);
                grad.enc_b1[h] += gh;
                for (int c = 0; c < 4; ++c)
                    grad.enc_w1[h * 4 + c] += gh * enc.standardized[i * 4 + c];
            }
        }
    }
    return grad;
}

}  // namespace meshmorph
