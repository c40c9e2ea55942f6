#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "meshmorph/burgers.hpp"
#include "meshmorph/deformer.hpp"
#include "meshmorph/mesh.hpp"
#include "meshmorph/objective.hpp"
#include "meshmorph/poisson.hpp"

namespace meshmorph {

// One dataset sample: problem, undeformed mesh, cached solve products.
struct DatasetRecord {
    std::string pde;  // "poisson" or "burgers"
    ProblemSpec spec;
    Mesh mesh0;
    std::vector<double> u;          // nodal solution (poisson) or initial speed (burgers)
    std::vector<double> hess_norm;  // |H|_F per node
    std::vector<double> monitor;
    double e0 = 0.0;                // squared L2 error of the uniform mesh (poisson)
                                    // or squared L2 norm of the initial state (burgers)
    int index = 0;
};

struct GaussianRanges {
    int min_count = 1, max_count = 3;
    double center_lo = 0.2, center_hi = 0.8;
    double sigma_lo = 0.05, sigma_hi = 0.2;
    double amplitude_lo = 0.5, amplitude_hi = 1.0;
};

struct GenOptions {
    std::string pde = "poisson";
    int n_samples = 100;
    std::vector<int> resolutions = {15};  // nodes per side, cycled over samples
    std::uint64_t seed = 0;
    std::string out_dir;
    GaussianRanges ranges;
};

// Deterministic dataset: sample i uses an RNG forked from the run seed, so
// results do not depend on worker count. Writes one JSON per sample plus a
// manifest with content hashes.
void gen_dataset(const GenOptions& opts);

struct Dataset {
    std::vector<DatasetRecord> records;
    std::string pde;
    std::uint64_t seed = 0;
};

// Loads and hash-verifies a dataset directory.
Dataset load_dataset(const std::string& dir);

struct BenchRecord {
    std::string method;
    double error_reduction_pct = 0.0;
    double adapt_time_ms = 0.0;
    double aspect_mean = 0.0;
    std::uint64_t seed = 0;
};

struct DirectOptOptions {
    int steps = 200;
    double lr = 0.05;
    double w_equi = 1.0;
    CgOptions cg;
};

struct DirectOptResult {
    Mesh mesh;
    BenchRecord record;
    std::vector<double> loss_curve;  // non-increasing by construction
};

// Gradient descent on node coordinates with backtracking; stops at the step
// budget or when the relative loss change stays below 1e-8 for 10 steps.
DirectOptResult direct_opt(const DatasetRecord& record, const DirectOptOptions& opts);

struct TrainOptions {
    int epochs = 300;
    double lr = 1e-3;
    double w_equi = 1.0;
    std::uint64_t seed = 0;
    std::string checkpoint_path;     // best params saved here on improvement
    std::string curve_path;          // optional CSV of per-epoch mean loss
    DeformerConfig config;
    CgOptions cg;
};

struct TrainResult {
    DeformerParams params;            // best (lowest mean epoch loss)
    std::vector<double> loss_curve;   // entry 0 is the pre-training evaluation
};

// Adam on the deformer parameters against the regularized FEM error, batch
// size one, per-epoch shuffling from the run seed.
TrainResult train_deformer(const std::vector<DatasetRecord>& train_set, const TrainOptions& opts);

struct BenchOptions {
    std::vector<std::string> methods;  // subset of {identity, directopt, deformer}
    std::string checkpoint_path;       // for deformer
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    DirectOptOptions directopt;
    BurgersConfig burgers;             // used for burgers datasets
    std::string cache_dir;             // burgers reference cache
};

struct BenchRow {
    std::string method;
    double er_mean = 0.0, er_std = 0.0;
    double time_ms = 0.0;
    double aspect_mean = 0.0, aspect_std = 0.0;
};

std::vector<BenchRow> run_benchmark(const Dataset& dataset, const BenchOptions& opts);

// CSV schema v1: header comment plus
// method,er_mean,er_std,time_ms,aspect_mean,aspect_std
void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

// VTK legacy ASCII export: triangle cells (type 5), one SCALARS block per
// named nodal field. Field sizes must match the node count.
void export_vtk(const Mesh& mesh, const std::vector<std::pair<std::string, std::vector<double>>>& fields,
                const std::string& path);

// Worker count for per-sample parallel loops: MESHMORPH_THREADS caps it,
// default hardware concurrency.
int worker_count();

// Deterministic parallel map: fn(i) runs for i in [0, n), results land by
// index regardless of scheduling.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace meshmorph
