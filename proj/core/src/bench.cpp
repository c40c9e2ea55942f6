#include "meshmorph/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "meshmorph/rng.hpp"

namespace meshmorph {

namespace fs = std::filesystem;

int worker_count() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("MESHMORPH_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
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

nlohmann::json mesh_to_json(const Mesh& mesh) {
    nlohmann::json j;
    j["version"] = 1;
    auto& coords = j["coords"] = nlohmann::json::array();
    for (const Vec2& p : mesh.coords) coords.push_back({p.x, p.y});
    auto& tris = j["tris"] = nlohmann::json::array();
    for (const auto& t : mesh.tris) tris.push_back({t[0], t[1], t[2]});
    auto& boundary = j["boundary"] = nlohmann::json::array();
    for (const BoundaryTag& tag : mesh.boundary) {
        int code = -1;
        if (tag.kind == NodeKind::Corner) code = -2;
        else if (tag.kind == NodeKind::Edge) code = tag.segment;
        boundary.push_back(code);
    }
    auto& domain = j["domain"] = nlohmann::json::array();
    for (const Vec2& p : mesh.domain) domain.push_back({p.x, p.y});
    return j;
}

Mesh mesh_from_json(const nlohmann::json& j) {
    Mesh m;
    for (const auto& c : j.at("coords")) m.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    for (const auto& t : j.at("tris")) m.tris.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
    for (const auto& b : j.at("boundary")) {
        int code = b.get<int>();
        BoundaryTag tag;
        if (code == -2) tag = {NodeKind::Corner, -1};
        else if (code >= 0) tag = {NodeKind::Edge, code};
        m.boundary.push_back(tag);
    }
    for (const auto& d : j.at("domain")) m.domain.push_back({d.at(0).get<double>(), d.at(1).get<double>()});
    validate_mesh(m);
    return m;
}

ProblemSpec sample_spec(Rng& rng, const GaussianRanges& r) {
    ProblemSpec spec;
    int count = rng.uniform_int(r.min_count, r.max_count);
    for (int g = 0; g < count; ++g) {
        Gaussian gau;
        gau.center = {rng.uniform(r.center_lo, r.center_hi), rng.uniform(r.center_lo, r.center_hi)};
        gau.sigma = rng.uniform(r.sigma_lo, r.sigma_hi);
        gau.amplitude = rng.uniform(r.amplitude_lo, r.amplitude_hi);
        spec.gaussians.push_back(gau);
    }
    return spec;
}

DatasetRecord make_record(const std::string& pde, const ProblemSpec& spec, int res, int index) {
    DatasetRecord rec;
    rec.pde = pde;
    rec.spec = spec;
    rec.index = index;
    rec.mesh0 = build_rect_mesh(res, res);

    if (pde == "poisson") {
        FemField u = solve_poisson(rec.mesh0, spec);
        rec.u = u.values;
        rec.e0 = l2_error(u, spec);
        rec.hess_norm = recover_hessian(u).frobenius;
        rec.monitor = recover_monitor(u).values;
    } else {
        VectorField state = initial_state(rec.mesh0, spec);
        FemField speed;
        speed.mesh = &rec.mesh0;
        speed.values.resize(state.values.size());
        double e0 = 0.0;
        for (size_t i = 0; i < state.values.size(); ++i) speed.values[i] = norm(state.values[i]);
        rec.u = speed.values;
        rec.hess_norm = recover_hessian(speed).frobenius;
        rec.monitor = recover_monitor(speed).values;
        // initial energy; rollout error reductions are computed at bench time
        VectorField zero;
        zero.mesh = &rec.mesh0;
        zero.values.assign(rec.mesh0.n_nodes(), Vec2{0.0, 0.0});
        e0 = vector_error_sq(state, zero);
        rec.e0 = e0;
    }
    if (!(rec.e0 > 0.0)) throw std::runtime_error("gen_dataset: sample has zero baseline error");
    return rec;
}

nlohmann::json record_to_json(const DatasetRecord& rec) {
    nlohmann::json j;
    j["version"] = 1;
    j["pde"] = rec.pde;
    j["index"] = rec.index;
    auto& gs = j["spec"]["gaussians"] = nlohmann::json::array();
    for (const Gaussian& g : rec.spec.gaussians)
        gs.push_back({{"c", {g.center.x, g.center.y}}, {"sigma", g.sigma}, {"a", g.amplitude}});
    j["mesh"] = mesh_to_json(rec.mesh0);
    j["u"] = rec.u;
    j["hess_norm"] = rec.hess_norm;
    j["monitor"] = rec.monitor;
    j["e0"] = rec.e0;
    return j;
}

DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord rec;
    rec.pde = j.at("pde").get<std::string>();
    rec.index = j.at("index").get<int>();
    for (const auto& g : j.at("spec").at("gaussians"))
        rec.spec.gaussians.push_back({{g.at("c").at(0).get<double>(), g.at("c").at(1).get<double>()},
                                      g.at("sigma").get<double>(), g.at("a").get<double>()});
    rec.mesh0 = mesh_from_json(j.at("mesh"));
    rec.u = j.at("u").get<std::vector<double>>();
    rec.hess_norm = j.at("hess_norm").get<std::vector<double>>();
    rec.monitor = j.at("monitor").get<std::vector<double>>();
    rec.e0 = j.at("e0").get<double>();
    rec.spec.validate();
    return rec;
}

}  // namespace

void gen_dataset(const GenOptions& opts) {
    if (opts.out_dir.empty()) throw std::invalid_argument("gen_dataset: output directory required");
    if (opts.pde != "poisson" && opts.pde != "burgers")
        throw std::invalid_argument("gen_dataset: pde must be poisson or burgers");
    if (opts.resolutions.empty()) throw std::invalid_argument("gen_dataset: need a resolution");
    if (opts.ranges.sigma_lo < 0.01)
        std::cerr << "warning: sigma range reaches below 0.01; Gaussians this narrow are not "
                     "resolved by the quadrature at desk resolutions\n";

    fs::create_directories(opts.out_dir);
    Rng root(opts.seed);

    std::vector<std::string> files(opts.n_samples);
    std::vector<std::uint64_t> hashes(opts.n_samples);
    std::vector<ProblemSpec> specs(opts.n_samples);
    std::vector<int> res(opts.n_samples);
    for (int i = 0; i < opts.n_samples; ++i) {
        Rng rng = root.fork(static_cast<std::uint64_t>(i));
        specs[i] = sample_spec(rng, opts.ranges);
        res[i] = opts.resolutions[i % opts.resolutions.size()];
    }

    parallel_for(opts.n_samples, [&](int i) {
        DatasetRecord rec = make_record(opts.pde, specs[i], res[i], i);
        std::string name = "sample_" + std::to_string(i) + ".json";
        std::string body = record_to_json(rec).dump();
        std::ofstream out(fs::path(opts.out_dir) / name);
        if (!out) throw std::runtime_error("gen_dataset: cannot write " + name);
        out << body;
        files[i] = name;
        hashes[i] = fnv1a(body);
    });

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["pde"] = opts.pde;
    manifest["seed"] = opts.seed;
    manifest["n_samples"] = opts.n_samples;
    manifest["resolutions"] = opts.resolutions;
    auto& samples = manifest["samples"] = nlohmann::json::array();
    for (int i = 0; i < opts.n_samples; ++i) {
        std::ostringstream h;
        h << std::hex << hashes[i];
        samples.push_back({{"file", files[i]}, {"hash", h.str()}});
    }
    std::ostringstream all;
    for (std::uint64_t h : hashes) all << std::hex << h << "|";
    manifest["hash"] = [&] {
        std::ostringstream h;
        h << std::hex << fnv1a(all.str());
        return h.str();
    }();
    std::ofstream out(fs::path(opts.out_dir) / "manifest.json");
    out << manifest.dump(2);
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream min(fs::path(dir) / "manifest.json");
    if (!min) throw std::runtime_error("load_dataset: no manifest in " + dir);
    nlohmann::json manifest;
    min >> manifest;
    Dataset ds;
    ds.pde = manifest.at("pde").get<std::string>();
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& entry : manifest.at("samples")) {
        fs::path p = fs::path(dir) / entry.at("file").get<std::string>();
        std::ifstream in(p);
        if (!in) throw std::runtime_error("load_dataset: missing sample " + p.string());
        std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ostringstream h;
        h << std::hex << fnv1a(body);
        if (h.str() != entry.at("hash").get<std::string>())
            throw std::runtime_error("load_dataset: hash mismatch for " + p.string() +
                                     " (cached values are not reproducible from the manifest)");
        ds.records.push_back(record_from_json(nlohmann::json::parse(body)));
    }
    return ds;
}

DirectOptResult direct_opt(const DatasetRecord& record, const DirectOptOptions& opts) {
    const Mesh& mesh0 = record.mesh0;
    TangleReport rep = is_tangled(mesh0);
    if (rep.tangled) throw std::runtime_error("direct_opt: tangled input mesh");

    Mesh mesh = mesh0;
    FemField monitor{&mesh, record.monitor, 1};

    auto tic = std::chrono::steady_clock::now();
    TotalLossResult cur = total_loss(mesh, record.spec, monitor, opts.w_equi, opts.cg);
    DirectOptResult res;
    res.loss_curve.push_back(cur.loss.total);

    int stagnant = 0;
    for (int step = 0; step < opts.steps; ++step) {
        double lr = opts.lr;
        bool accepted = false;
        Mesh trial = mesh;
        for (int half = 0; half < 40; ++half) {
            for (int i = 0; i < mesh.n_nodes(); ++i)
                trial.coords[i] = mesh.coords[i] - lr * cur.grad.values[i];
            if (!is_tangled(trial).tangled) {
                TotalLossResult tl = total_loss(trial, record.spec, monitor, opts.w_equi, opts.cg);
                if (tl.loss.total <= cur.loss.total) {
                    double rel = (cur.loss.total - tl.loss.total) /
                                 std::max(cur.loss.total, 1e-300);
                    mesh.coords = trial.coords;
                    cur = std::move(tl);
                    accepted = true;
                    stagnant = rel < 1e-8 ? stagnant + 1 : 0;
                    break;
                }
            }
            lr *= 0.5;
        }
        if (!accepted) ++stagnant;
        res.loss_curve.push_back(cur.loss.total);
        if (stagnant >= 10) break;  // stagnation is success
    }
    auto toc = std::chrono::steady_clock::now();

    res.mesh = std::move(mesh);
    res.record.method = "directopt";
    res.record.adapt_time_ms = std::chrono::duration<double, std::milli>(toc - tic).count();
    res.record.error_reduction_pct =
        100.0 * (1.0 - std::sqrt(cur.loss.error / record.e0));
    res.record.aspect_mean = aspect_ratio(res.mesh).mean;
    return res;
}

TrainResult train_deformer(const std::vector<DatasetRecord>& train_set, const TrainOptions& opts) {
    if (train_set.empty()) throw std::invalid_argument("train_deformer: empty training set");
    Rng rng(opts.seed);
    DeformerParams params = DeformerParams::init(opts.config, rng);

    auto sample_loss = [&](const DatasetRecord& rec, const DeformerParams& p, ParamGradient* grad) {
        FemField hess{&rec.mesh0, rec.hess_norm, 1};
        FemField monitor{&rec.mesh0, rec.monitor, 1};
        DeformResult def = deform(rec.mesh0, p, hess, monitor);
        FemField monitor_moved{&def.mesh, rec.monitor, 1};  // nodal values ride along
        TotalLossResult tl = total_loss(def.mesh, rec.spec, monitor_moved, opts.w_equi, opts.cg);
        if (grad) {
            std::vector<double> no_feature_grad;
            *grad = backward_params(p, def.tape, tl.grad.values, no_feature_grad);
        }
        return tl.loss.total;
    };

    auto mean_loss = [&](const DeformerParams& p) {
        std::vector<double> losses(train_set.size());
        parallel_for(static_cast<int>(train_set.size()),
                     [&](int i) { losses[i] = sample_loss(train_set[i], p, nullptr); });
        return std::accumulate(losses.begin(), losses.end(), 0.0) / losses.size();
    };

    TrainResult result;
    result.loss_curve.push_back(mean_loss(params));  // epoch 0: pre-training evaluation
    result.params = params;
    double best = result.loss_curve[0];
    if (!opts.checkpoint_path.empty()) save_checkpoint(params, opts.checkpoint_path);

    // Adam state
    auto arrays = param_arrays(params);
    std::vector<std::vector<double>> m_state, v_state;
    for (auto* a : arrays) {
        m_state.emplace_back(a->size(), 0.0);
        v_state.emplace_back(a->size(), 0.0);
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t t = 0;

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        // Fisher-Yates from the run RNG
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_int(0, i)]);

        double epoch_loss = 0.0;
        bool diverged = false;
        for (int idx : order) {
            ParamGradient grad = ParamGradient::zeros_like(params);
            double loss = sample_loss(train_set[idx], params, &grad);
            if (!std::isfinite(loss)) {
                diverged = true;
                break;
            }
            epoch_loss += loss;
            ++t;
            auto garrays = param_arrays(grad);
            double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
            double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
            for (size_t a = 0; a < arrays.size(); ++a) {
                std::vector<double>& w = *arrays[a];
                const std::vector<double>& g = *garrays[a];
                for (size_t i = 0; i < w.size(); ++i) {
                    m_state[a][i] = beta1 * m_state[a][i] + (1.0 - beta1) * g[i];
                    v_state[a][i] = beta2 * v_state[a][i] + (1.0 - beta2) * g[i] * g[i];
                    double mhat = m_state[a][i] / c1;
                    double vhat = v_state[a][i] / c2;
                    w[i] -= opts.lr * mhat / (std::sqrt(vhat) + eps);
                }
            }
        }
        if (diverged) {
            std::cerr << "train_deformer: loss diverged at epoch " << epoch
                      << "; keeping last good checkpoint\n";
            break;
        }
        epoch_loss /= static_cast<double>(train_set.size());
        result.loss_curve.push_back(epoch_loss);
        if (epoch_loss < best) {
            best = epoch_loss;
            result.params = params;
            if (!opts.checkpoint_path.empty()) save_checkpoint(params, opts.checkpoint_path);
        }
    }

    if (!opts.curve_path.empty()) {
        std::ofstream out(opts.curve_path);
        out << "epoch,mean_loss\n";
        for (size_t e = 0; e < result.loss_curve.size(); ++e)
            out << e << "," << result.loss_curve[e] << "\n";
    }
    return result;
}

namespace {

struct SampleMetrics {
    double er = 0.0;
    double time_ms = 0.0;
    double aspect = 0.0;
};

SampleMetrics eval_poisson_method(const DatasetRecord& rec, const std::string& method,
                                  const DeformerParams* params, const DirectOptOptions& dopts) {
    SampleMetrics m;
    if (method == "identity") {
        m.er = 0.0;  // definitional: no relocation, no reduction
        m.aspect = aspect_ratio(rec.mesh0).mean;
        return m;
    }
    if (method == "directopt") {
        DirectOptResult r = direct_opt(rec, dopts);
        m.er = r.record.error_reduction_pct;
        m.time_ms = r.record.adapt_time_ms;
        m.aspect = r.record.aspect_mean;
        return m;
    }
    if (method == "deformer") {
        FemField hess{&rec.mesh0, rec.hess_norm, 1};
        FemField monitor{&rec.mesh0, rec.monitor, 1};
        auto tic = std::chrono::steady_clock::now();
        DeformResult def = deform(rec.mesh0, *params, hess, monitor);
        auto toc = std::chrono::steady_clock::now();
        m.time_ms = std::chrono::duration<double, std::milli>(toc - tic).count();
        FemField u = solve_poisson(def.mesh, rec.spec);
        m.er = 100.0 * (1.0 - std::sqrt(l2_error(u, rec.spec) / rec.e0));
        m.aspect = aspect_ratio(def.mesh).mean;
        return m;
    }
    throw std::invalid_argument("benchmark: unknown method " + method);
}

SampleMetrics eval_burgers_method(const DatasetRecord& rec, const std::string& method,
                                  const DeformerParams* params, const BenchOptions& opts) {
    RolloutOptions ropts;
    ropts.cache_dir = opts.cache_dir;
    if (method == "identity") ropts.strategy = RolloutStrategy::None;
    else if (method == "directopt") ropts.strategy = RolloutStrategy::DirectOpt;
    else if (method == "deformer") {
        ropts.strategy = RolloutStrategy::Deformer;
        ropts.params = params;
    } else {
        throw std::invalid_argument("benchmark: unknown method " + method);
    }
    RolloutResult r = rollout_remesh(rec.spec, rec.mesh0, opts.burgers, ropts);
    SampleMetrics m;
    m.er = r.mean_er;
    m.time_ms = r.adapt_time_ms;
    m.aspect = r.aspect_mean;
    return m;
}

}  // namespace

std::vector<BenchRow> run_benchmark(const Dataset& dataset, const BenchOptions& opts) {
    if (dataset.records.empty()) throw std::invalid_argument("benchmark: empty dataset");

    DeformerParams params;
    bool have_params = false;
    for (const std::string& m : opts.methods)
        if (m == "deformer") {
            if (opts.checkpoint_path.empty())
                throw std::invalid_argument("benchmark: deformer method requires a checkpoint");
            params = load_checkpoint(opts.checkpoint_path);
            have_params = true;
        }

    std::vector<BenchRow> rows;
    for (const std::string& method : opts.methods) {
        // per-seed aggregate over the test set; deterministic methods yield
        // zero spread by construction
        std::vector<double> seed_er(opts.seeds.size(), 0.0), seed_aspect(opts.seeds.size(), 0.0);
        double time_total = 0.0;
        long time_count = 0;

        for (size_t s = 0; s < opts.seeds.size(); ++s) {
            const int n = static_cast<int>(dataset.records.size());
            std::vector<SampleMetrics> metrics(n);
            parallel_for(n, [&](int i) {
                metrics[i] = dataset.pde == "burgers"
                                 ? eval_burgers_method(dataset.records[i], method,
                                                       have_params ? &params : nullptr, opts)
                                 : eval_poisson_method(dataset.records[i], method,
                                                       have_params ? &params : nullptr,
                                                       opts.directopt);
            });
            double er = 0.0, aspect = 0.0;
            for (const SampleMetrics& m : metrics) {
                er += m.er;
                aspect += m.aspect;
                time_total += m.time_ms;
                ++time_count;
            }
            seed_er[s] = er / n;
            seed_aspect[s] = aspect / n;
        }

        auto mean_std = [](const std::vector<double>& v) {
            double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= v.size();
            return std::pair<double, double>(mean, std::sqrt(var));
        };
        BenchRow row;
        row.method = method;
        std::tie(row.er_mean, row.er_std) = mean_std(seed_er);
        std::tie(row.aspect_mean, row.aspect_std) = mean_std(seed_aspect);
        row.time_ms = time_count > 0 ? time_total / time_count : 0.0;
        rows.push_back(row);
    }
    return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_bench_csv: cannot open " + path);
    out << "# schema=meshmorph-bench-1\n";
    out << "method,er_mean,er_std,time_ms,aspect_mean,aspect_std\n";
    out.precision(10);
    for (const BenchRow& r : rows)
        out << r.method << "," << r.er_mean << "," << r.er_std << "," << r.time_ms << ","
            << r.aspect_mean << "," << r.aspect_std << "\n";
}

void export_vtk(const Mesh& mesh,
                const std::vector<std::pair<std::string, std::vector<double>>>& fields,
                const std::string& path) {
    for (const auto& [name, values] : fields)
        if (static_cast<int>(values.size()) != mesh.n_nodes())
            throw std::invalid_argument("export_vtk: field '" + name + "' size mismatch");

    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_vtk: cannot open " + path);
    out.precision(12);
    out << "# vtk DataFile Version 3.0\n";
    out << "meshmorph mesh\n";
    out << "ASCII\n";
    out << "DATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << mesh.n_nodes() << " double\n";
    for (const Vec2& p : mesh.coords) out << p.x << " " << p.y << " 0\n";
    out << "CELLS " << mesh.n_tris() << " " << 4 * mesh.n_tris() << "\n";
    for (const auto& t : mesh.tris) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
    out << "CELL_TYPES " << mesh.n_tris() << "\n";
    for (int t = 0; t < mesh.n_tris(); ++t) out << "5\n";
    if (!fields.empty()) {
        out << "POINT_DATA " << mesh.n_nodes() << "\n";
        for (const auto& [name, values] : fields) {
            out << "SCALARS " << name << " double 1\n";
            out << "LOOKUP_TABLE default\n";
            for (double v : values) out << v << "\n";
        }
    }
    if (!out) throw std::runtime_error("export_vtk: write failed for " + path);
}

}  // namespace meshmorph
