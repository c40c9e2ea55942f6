#include "meshmorph/burgers.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "meshmorph/linalg.hpp"
#include "meshmorph/locate.hpp"
#include "meshmorph/objective.hpp"
#include "meshmorph/quadrature.hpp"

namespace meshmorph {

void BurgersConfig::validate() const {
    if (!(nu > 0.0)) throw std::invalid_argument("BurgersConfig: nu must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("BurgersConfig: dt must be positive");
    if (remesh_every < 1) throw std::invalid_argument("BurgersConfig: remesh_every must be >= 1");
    if (n_steps < 0) throw std::invalid_argument("BurgersConfig: n_steps must be >= 0");
}

namespace {

bool is_boundary(const Mesh& mesh, int node) {
    return mesh.boundary[node].kind != NodeKind::Interior;
}

struct ElementData {
    double area;
    Vec2 grads[3];
};

ElementData element_data(const Mesh& mesh, const std::array<int, 3>& tri) {
    const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
    ElementData e;
    e.area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
    Vec2 edge[3] = {p[2] - p[1], p[0] - p[2], p[1] - p[0]};
    for (int k = 0; k < 3; ++k) e.grads[k] = perp(edge[k]) * (1.0 / (2.0 * e.area));
    return e;
}

// residual of the backward-Euler weak form; unknowns interleaved (x,y)
DenseVector residual(const Mesh& mesh, const std::vector<Vec2>& u, const std::vector<Vec2>& u_old,
                     const BurgersConfig& cfg) {
    const int n = mesh.n_nodes();
    DenseVector r(2 * static_cast<size_t>(n), 0.0);
    for (const auto& tri : mesh.tris) {
        ElementData e = element_data(mesh, tri);
        double m_off = e.area / 12.0, m_diag = e.area / 6.0;

        Vec2 gx{0.0, 0.0}, gy{0.0, 0.0};
        for (int k = 0; k < 3; ++k) {
            gx += e.grads[k] * u[tri[k]].x;
            gy += e.grads[k] * u[tri[k]].y;
        }
        for (int i = 0; i < 3; ++i) {
            double kx = 0.0, ky = 0.0;
            for (int j = 0; j < 3; ++j) {
                double m = (i == j) ? m_diag : m_off;
                double kij = dot(e.grads[i], e.grads[j]) * e.area;
                const Vec2& uj = u[tri[j]];
                kx += m * (uj.x - u_old[tri[j]].x) / cfg.dt + cfg.nu * kij * uj.x;
                ky += m * (uj.y - u_old[tri[j]].y) / cfg.dt + cfg.nu * kij * uj.y;
                if (!cfg.skip_advection) {
                    kx += m * dot(uj, gx);
                    ky += m * dot(uj, gy);
                }
            }
            r[2 * tri[i] + 0] += kx;
            r[2 * tri[i] + 1] += ky;
        }
    }
    for (int i = 0; i < n; ++i)
        if (is_boundary(mesh, i)) {
            r[2 * i + 0] = u[i].x;
            r[2 * i + 1] = u[i].y;
        }
    return r;
}

DenseMatrix jacobian(const Mesh& mesh, const std::vector<Vec2>& u, const BurgersConfig& cfg) {
    const int n = mesh.n_nodes();
    DenseMatrix jac(2 * n);
    for (const auto& tri : mesh.tris) {
        ElementData e = element_data(mesh, tri);
        double m_off = e.area / 12.0, m_diag = e.area / 6.0;

        Vec2 gx{0.0, 0.0}, gy{0.0, 0.0}, s[3];
        for (int k = 0; k < 3; ++k) {
            gx += e.grads[k] * u[tri[k]].x;
            gy += e.grads[k] * u[tri[k]].y;
        }
        for (int i = 0; i < 3; ++i) {
            s[i] = {0.0, 0.0};
            for (int l = 0; l < 3; ++l) s[i] += u[tri[l]] * (i == l ? m_diag : m_off);
        }
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double m = (i == j) ? m_diag : m_off;
                double kij = dot(e.grads[i], e.grads[j]) * e.area;
                double diag = m / cfg.dt + cfg.nu * kij;
                int ri = 2 * tri[i], cj = 2 * tri[j];
                jac(ri + 0, cj + 0) += diag;
                jac(ri + 1, cj + 1) += diag;
                if (cfg.skip_advection) continue;
                // velocity factor: d(u_j . G_d)/dU_{j,e}
                jac(ri + 0, cj + 0) += m * gx.x;
                jac(ri + 0, cj + 1) += m * gx.y;
                jac(ri + 1, cj + 0) += m * gy.x;
                jac(ri + 1, cj + 1) += m * gy.y;
                if (!cfg.picard) {
                    // gradient factor: d G_d/dU_{j,d} = grad phi_j
                    double sg = dot(s[i], e.grads[j]);
                    jac(ri + 0, cj + 0) += sg;
                    jac(ri + 1, cj + 1) += sg;
                }
            }
    }
    for (int i = 0; i < n; ++i)
        if (is_boundary(mesh, i))
            for (int d = 0; d < 2; ++d) {
                int row = 2 * i + d;
                for (int c = 0; c < 2 * n; ++c) jac(row, c) = 0.0;
                jac(row, row) = 1.0;
            }
    return jac;
}

double norm2_vec(const DenseVector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

VectorField initial_state(const Mesh& mesh, const ProblemSpec& spec) {
    VectorField f;
    f.mesh = &mesh;
    f.values.resize(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        double v = is_boundary(mesh, i) ? 0.0 : spec.u(mesh.coords[i]);
        f.values[i] = {v, v};
    }
    return f;
}

VectorField burgers_step(const Mesh& mesh, const VectorField& state, const BurgersConfig& cfg) {
    cfg.validate();
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled) throw std::runtime_error("burgers_step: tangled mesh");
    const int n = mesh.n_nodes();
    if (static_cast<int>(state.values.size()) != n)
        throw std::invalid_argument("burgers_step: state size mismatch");

    std::vector<Vec2> u = state.values;
    DenseVector r = residual(mesh, u, state.values, cfg);
    const double r0 = norm2_vec(r);
    std::vector<double> history{r0};

    for (int it = 0; it < cfg.newton_max_iter; ++it) {
        if (history.back() <= cfg.newton_tol * (1.0 + r0)) {
            VectorField out;
            out.mesh = &mesh;
            out.values = std::move(u);
            return out;
        }
        DenseMatrix jac = jacobian(mesh, u, cfg);
        DenseVector delta = lu_solve(std::move(jac), r);
        for (int i = 0; i < n; ++i) {
            u[i].x -= delta[2 * i + 0];
            u[i].y -= delta[2 * i + 1];
        }
        r = residual(mesh, u, state.values, cfg);
        history.push_back(norm2_vec(r));
    }
    if (history.back() <= cfg.newton_tol * (1.0 + r0)) {
        VectorField out;
        out.mesh = &mesh;
        out.values = std::move(u);
        return out;
    }
    std::ostringstream msg;
    msg << "burgers_step: Newton failed to converge; residual history:";
    for (double h : history) msg << " " << h;
    throw std::runtime_error(msg.str());
}

VectorField interpolate_vector(const VectorField& f, const Mesh& mesh_to) {
    FemField flat;
    flat.mesh = f.mesh;
    flat.components = 2;
    flat.values.resize(2 * f.values.size());
    for (size_t i = 0; i < f.values.size(); ++i) {
        flat.values[2 * i + 0] = f.values[i].x;
        flat.values[2 * i + 1] = f.values[i].y;
    }
    FemField moved = interpolate_p1(flat, mesh_to);
    VectorField out;
    out.mesh = &mesh_to;
    out.values.resize(mesh_to.n_nodes());
    for (int i = 0; i < mesh_to.n_nodes(); ++i)
        out.values[i] = {moved.values[2 * i + 0], moved.values[2 * i + 1]};
    return out;
}

double vector_error_sq(const VectorField& u, const VectorField& u_ref) {
    const Mesh& mesh = *u.mesh;
    PointLocator locator(*u_ref.mesh);
    int hint = 0;
    double total = 0.0;
    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        double acc = 0.0;
        for (const TriQuadPoint& q : kTriQuadDeg4) {
            Vec2 x = q.bary[0] * p[0] + q.bary[1] * p[1] + q.bary[2] * p[2];
            Vec2 uh = q.bary[0] * u.values[tri[0]] + q.bary[1] * u.values[tri[1]] +
                      q.bary[2] * u.values[tri[2]];
            auto hit = locator.locate(x, hint);
            hint = hit.tri;
            const auto& rt = u_ref.mesh->tris[hit.tri];
            Vec2 ur = hit.bary[0] * u_ref.values[rt[0]] + hit.bary[1] * u_ref.values[rt[1]] +
                      hit.bary[2] * u_ref.values[rt[2]];
            acc += q.weight * norm2(uh - ur);
        }
        total += area * acc;
    }
    return total;
}

std::vector<VectorField> burgers_trajectory(const Mesh& mesh, const ProblemSpec& spec,
                                            const BurgersConfig& cfg) {
    std::vector<VectorField> states;
    states.push_back(initial_state(mesh, spec));
    for (int s = 0; s < cfg.n_steps; ++s) {
        VectorField next = burgers_step(mesh, states.back(), cfg);
        states.push_back(std::move(next));
    }
    return states;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string reference_key(const ProblemSpec& spec, const BurgersConfig& cfg, int side) {
    std::ostringstream os;
    os.precision(17);
    os << "burgers-ref-v1|" << cfg.nu << "|" << cfg.dt << "|" << cfg.n_steps << "|" << side;
    for (const Gaussian& g : spec.gaussians)
        os << "|" << g.center.x << "," << g.center.y << "," << g.sigma << "," << g.amplitude;
    return os.str();
}

// reference trajectories are expensive; cache them keyed by spec and config
std::vector<std::vector<Vec2>> load_or_compute_reference(const ProblemSpec& spec,
                                                         const BurgersConfig& cfg,
                                                         const Mesh& ref_mesh, int side,
                                                         const std::string& cache_dir) {
    std::string key = reference_key(spec, cfg, side);
    std::filesystem::path path;
    if (!cache_dir.empty()) {
        std::filesystem::create_directories(cache_dir);
        std::ostringstream name;
        name << "ref_" << std::hex << fnv1a(key) << ".json";
        path = std::filesystem::path(cache_dir) / name.str();
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            nlohmann::json j;
            in >> j;
            if (j.value("key", "") == key) {
                std::vector<std::vector<Vec2>> states;
                for (const auto& snap : j.at("states")) {
                    std::vector<Vec2> vals;
                    vals.reserve(snap.size() / 2);
                    for (size_t i = 0; i + 1 < snap.size(); i += 2)
                        vals.push_back({snap[i].get<double>(), snap[i + 1].get<double>()});
                    states.push_back(std::move(vals));
                }
                return states;
            }
        }
    }

    std::vector<VectorField> traj = burgers_trajectory(ref_mesh, spec, cfg);
    std::vector<std::vector<Vec2>> states;
    states.reserve(traj.size());
    for (const VectorField& f : traj) states.push_back(f.values);

    if (!cache_dir.empty()) {
        nlohmann::json j;
        j["key"] = key;
        auto& arr = j["states"] = nlohmann::json::array();
        for (const auto& snap : states) {
            nlohmann::json s = nlohmann::json::array();
            for (const Vec2& v : snap) {
                s.push_back(v.x);
                s.push_back(v.y);
            }
            arr.push_back(std::move(s));
        }
        std::ofstream out(path);
        out << j.dump();
    }
    return states;
}

void write_field_json(const VectorField& f, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["components"] = 2;
    auto& vals = j["values"] = nlohmann::json::array();
    for (const Vec2& v : f.values) {
        vals.push_back(v.x);
        vals.push_back(v.y);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_field_json: cannot open " + path);
    out << j.dump();
}

FemField speed_field(const VectorField& state) {
    FemField f;
    f.mesh = state.mesh;
    f.values.resize(state.values.size());
    for (size_t i = 0; i < state.values.size(); ++i) f.values[i] = norm(state.values[i]);
    return f;
}

Mesh adapt_mesh(const Mesh& mesh0, const VectorField& state, const RolloutOptions& opts) {
    // monitor input: speed of the current state, recovered on its own mesh,
    // nodal values carried over by node id
    FemField speed = speed_field(state);
    FemField monitor_cur = recover_monitor(speed);
    HessianField hess_cur = recover_hessian(speed);

    FemField monitor{&mesh0, monitor_cur.values, 1};
    FemField hess{&mesh0, hess_cur.frobenius, 1};

    if (opts.strategy == RolloutStrategy::Deformer) {
        if (!opts.params) throw std::invalid_argument("rollout: deformer strategy needs parameters");
        return deform(mesh0, *opts.params, hess, monitor).mesh;
    }

    // DirectOpt in the rollout: equidistribution descent on the monitor
    // (the error functional is not differentiated through the time stepper)
    Mesh mesh = mesh0;
    FemField mon = monitor;
    double loss = equi_loss(mesh, mon);
    for (int step = 0; step < opts.directopt_steps; ++step) {
        CoordinateGradient g = equi_loss_grad(mesh, mon);
        double lr = opts.directopt_lr;
        bool accepted = false;
        for (int half = 0; half < 30; ++half) {
            Mesh trial = mesh;
            for (int i = 0; i < mesh.n_nodes(); ++i) trial.coords[i] -= lr * g.values[i];
            if (!is_tangled(trial).tangled) {
                double tl = equi_loss(trial, mon);
                if (tl <= loss) {
                    mesh = std::move(trial);
                    loss = tl;
                    accepted = true;
                    break;
                }
            }
            lr *= 0.5;
        }
        if (!accepted) break;
    }
    return mesh;
}

}  // namespace

RolloutResult rollout_remesh(const ProblemSpec& spec, const Mesh& mesh0, const BurgersConfig& cfg,
                             const RolloutOptions& opts) {
    cfg.validate();
    spec.validate();
    if (opts.strategy == RolloutStrategy::Deformer && !opts.params)
        throw std::invalid_argument("rollout_remesh: deformer strategy needs parameters");

    // structured reference mesh over the same domain, >= refine_factor per side
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(mesh0.n_nodes()))));
    const int ref_side = (side - 1) * std::max(opts.refine_factor, 1) + 1;
    Rect rect{mesh0.domain[0], mesh0.domain[2]};
    Mesh ref_mesh = build_rect_mesh(ref_side, ref_side, rect);
    std::vector<std::vector<Vec2>> ref_states =
        load_or_compute_reference(spec, cfg, ref_mesh, ref_side, opts.cache_dir);

    // uniform run (baseline denominator)
    std::vector<VectorField> uniform = burgers_trajectory(mesh0, spec, cfg);

    const int n_windows = (cfg.n_steps + cfg.remesh_every - 1) / cfg.remesh_every;
    RolloutResult res;
    res.windows = n_windows;

    const bool adapting = opts.strategy != RolloutStrategy::None;
    const Mesh* cur_mesh = &mesh0;
    VectorField state = initial_state(mesh0, spec);
    std::vector<Mesh> meshes_owned;  // keep interpolation sources alive
    meshes_owned.reserve(n_windows + 1);

    std::filesystem::path dump;
    nlohmann::json index;
    if (!opts.dump_dir.empty()) {
        dump = opts.dump_dir;
        std::filesystem::create_directories(dump);
        index["times"] = nlohmann::json::array();
        index["snapshots"] = nlohmann::json::array();
    }

    double aspect_sum = 0.0;
    int step_idx = 0;
    for (int w = 0; w < n_windows; ++w) {
        if (adapting) {
            auto tic = std::chrono::steady_clock::now();
            Mesh adapted = adapt_mesh(mesh0, state, opts);
            auto toc = std::chrono::steady_clock::now();
            res.adapt_time_ms += std::chrono::duration<double, std::milli>(toc - tic).count();

            TangleReport rep = is_tangled(adapted);
            if (rep.tangled)
                throw std::runtime_error("rollout_remesh: adapted mesh tangled at window " +
                                         std::to_string(w));
            meshes_owned.push_back(std::move(adapted));
            const Mesh& target = meshes_owned.back();
            VectorField moved = interpolate_vector(state, target);
            // enforce the boundary condition exactly after transfer
            for (int i = 0; i < target.n_nodes(); ++i)
                if (target.boundary[i].kind != NodeKind::Interior) moved.values[i] = {0.0, 0.0};
            state = std::move(moved);
            cur_mesh = &target;
        }
        aspect_sum += aspect_ratio(*cur_mesh).mean;

        const int steps_here = std::min(cfg.remesh_every, cfg.n_steps - step_idx);
        for (int s = 0; s < steps_here; ++s) {
            state = burgers_step(*cur_mesh, state, cfg);
            ++step_idx;
        }

        // window-end error against the reference, both runs
        VectorField ref;
        ref.mesh = &ref_mesh;
        ref.values = ref_states[step_idx];
        double e_strat = std::sqrt(vector_error_sq(state, ref));
        double e_unif = std::sqrt(vector_error_sq(uniform[step_idx], ref));
        double er = e_unif > 0.0 ? 100.0 * (e_unif - e_strat) / e_unif : 0.0;
        if (!adapting) er = 0.0;  // self comparison by definition
        res.window_er.push_back(er);

        if (!opts.dump_dir.empty()) {
            std::string mesh_name = "mesh_" + std::to_string(w) + ".json";
            std::string field_name = "field_" + std::to_string(w) + ".json";
            write_mesh_json(*cur_mesh, (dump / mesh_name).string());
            write_field_json(state, (dump / field_name).string());
            index["times"].push_back(step_idx * cfg.dt);
            index["snapshots"].push_back({{"mesh", mesh_name}, {"field", field_name}});
        }
    }

    if (!opts.dump_dir.empty()) {
        std::ofstream out(dump / "index.json");
        out << index.dump();
    }

    double sum = 0.0;
    for (double er : res.window_er) sum += er;
    res.mean_er = res.window_er.empty() ? 0.0 : sum / res.window_er.size();
    res.aspect_mean = n_windows > 0 ? aspect_sum / n_windows : 0.0;
    return res;
}

}  // namespace meshmorph
