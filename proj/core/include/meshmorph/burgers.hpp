#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "meshmorph/deformer.hpp"
#include "meshmorph/mesh.hpp"
#include "meshmorph/poisson.hpp"

namespace meshmorph {

struct BurgersConfig {
    double nu = 0.01;          // kinematic viscosity; default is ours, not a reported value
    double dt = 0.02;
    int n_steps = 20;
    int remesh_every = 2;
    double newton_tol = 1e-9;  // relative residual reduction
    int newton_max_iter = 20;
    bool picard = false;       // drop the advection Jacobian (Picard fallback)
    bool skip_advection = false;  // pure-diffusion test hook

    void validate() const;
};

// Velocity field: two nodal values per node.
struct VectorField {
    const Mesh* mesh = nullptr;
    std::vector<Vec2> values;
};

// Initial data: both velocity components carry the Gaussian mixture.
VectorField initial_state(const Mesh& mesh, const ProblemSpec& spec);

// One backward-Euler step with Newton iteration on the coupled system;
// homogeneous Dirichlet velocity on the boundary. Throws with the residual
// history if Newton fails to converge.
VectorField burgers_step(const Mesh& mesh, const VectorField& state, const BurgersConfig& cfg);

VectorField interpolate_vector(const VectorField& f, const Mesh& mesh_to);

// Squared L2 distance between a coarse state and a reference state on a
// finer mesh (sum over both components).
double vector_error_sq(const VectorField& u, const VectorField& u_ref);

enum class RolloutStrategy { None, Deformer, DirectOpt };

struct RolloutOptions {
    RolloutStrategy strategy = RolloutStrategy::None;
    const DeformerParams* params = nullptr;  // required for Deformer
    int refine_factor = 4;                   // reference resolution multiplier
    int directopt_steps = 40;                // equidistribution descent steps
    double directopt_lr = 0.05;
    std::string cache_dir;                   // reference trajectory cache; empty disables
    std::string dump_dir;                    // trajectory snapshot dump; empty disables
};

struct RolloutResult {
    std::vector<double> window_er;  // percent, one entry per remesh window
    double mean_er = 0.0;
    double adapt_time_ms = 0.0;     // total time spent relocating meshes
    double aspect_mean = 0.0;       // mean over windows of mean element aspect
    int windows = 0;
};

// Time rollout with periodic r-adaptive remeshing: every remesh_every steps
// recover monitor/Hessian from the current speed field, relocate the mesh,
// interpolate the state across, continue. Error reduction is measured
// per window against a fine uniform reference trajectory, relative to the
// uniform (never remeshed) run.
RolloutResult rollout_remesh(const ProblemSpec& spec, const Mesh& mesh0, const BurgersConfig& cfg,
                             const RolloutOptions& opts);

// Plain time loop without remeshing; exposed for the rollout equivalence
// property and the reference trajectory.
std::vector<VectorField> burgers_trajectory(const Mesh& mesh, const ProblemSpec& spec,
                                            const BurgersConfig& cfg);

}  // namespace meshmorph
