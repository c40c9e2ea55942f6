#pragma once

#include <string>
#include <vector>

#include "meshmorph/mesh.hpp"
#include "meshmorph/poisson.hpp"
#include "meshmorph/rng.hpp"

namespace meshmorph {

struct DeformerConfig {
    int d_lambda = 16;         // latent feature width
    int encoder_hidden = 32;   // per-node encoder MLP hidden width
    int attention_hidden = 32; // edge score MLP hidden width
    int n_blocks = 4;
    int steps_per_block = 32;  // explicit Euler steps per block
    double dtau = 0.1;         // must stay below 1/2 for non-tangling
};

struct BlockParams {
    std::vector<double> att_w1;  // attention_hidden x 2*(2+d_lambda)
    std::vector<double> att_b1;  // attention_hidden
    std::vector<double> att_w2;  // attention_hidden (row vector)
    std::vector<double> att_b2;  // 1
    std::vector<double> w_lambda;  // d_lambda x d_lambda, no bias
};

struct DeformerParams {
    DeformerConfig cfg;
    std::vector<double> enc_w1;  // encoder_hidden x 4
    std::vector<double> enc_b1;
    std::vector<double> enc_w2;  // d_lambda x encoder_hidden
    std::vector<double> enc_b2;
    std::vector<BlockParams> blocks;

    void validate() const;  // dtau in (0, 1/2), finite weights, shapes

    // Zero-initialised attention output layers give uniform diffusion at the
    // start of training; the remaining weights are small random values.
    static DeformerParams init(const DeformerConfig& cfg, Rng& rng);
};

void save_checkpoint(const DeformerParams& params, const std::string& path);
DeformerParams load_checkpoint(const std::string& path);

// Mutable views over all parameter arrays, ordered identically for
// DeformerParams and ParamGradient (used by Adam and the FD tests).
std::vector<std::vector<double>*> param_arrays(DeformerParams& p);

struct ParamGradient {
    DeformerConfig cfg;
    std::vector<double> enc_w1, enc_b1, enc_w2, enc_b2;
    std::vector<BlockParams> blocks;

    static ParamGradient zeros_like(const DeformerParams& p);
};

std::vector<std::vector<double>*> param_arrays(ParamGradient& p);

// Node features entering the first block: positions ride along separately,
// the latent part is the encoder output from standardized
// (xi_x, xi_y, |H|_F, m) channels.
struct FeatureEncoding {
    std::vector<double> standardized;  // n x 4
    std::vector<double> hidden;        // n x encoder_hidden
    std::vector<double> lambda;        // n x d_lambda
};

FeatureEncoding encode_features(const Mesh& mesh0, const FemField& hess_norm,
                                const FemField& monitor, const DeformerParams& params);

// Row-stochastic attention over mesh-graph edges; weights parallel the
// graph's directed edge list.
struct AttentionGraph {
    const MeshGraph* graph = nullptr;
    std::vector<double> weights;
};

struct AttentionTape {
    std::vector<double> hidden;  // n_edges x attention_hidden
    std::vector<double> scores;  // raw scores before the +-30 clamp
};

AttentionGraph attention_weights(const std::vector<Vec2>& positions,
                                 const std::vector<double>& lambda, const MeshGraph& graph,
                                 const DeformerParams& params, int block,
                                 AttentionTape* tape = nullptr);

// T explicit Euler steps of dZ/dtau = (A - I) Z with A frozen; boundary
// node velocities are projected onto their segment, corners are pinned.
// Rejects dtau >= 1/2 and throws if the result tangles (which the step
// bound rules out; a throw here means a bug).
struct DiffusionResult {
    std::vector<std::vector<Vec2>> states;  // T+1 snapshots including input
};

DiffusionResult diffuse_block(const std::vector<Vec2>& z, const AttentionGraph& attention,
                              double dtau, int steps, const Mesh& mesh);

// Step-size bound from the spectral estimate of the frozen diffusion
// operator: min(1/2, kappa/2), kept strictly below 1/2 so the returned
// value is itself a valid dtau.
double max_stable_dt(const AttentionGraph& attention);

struct BlockTape {
    std::vector<Vec2> z_entry;
    std::vector<double> x_entry;  // n x d_lambda
    AttentionTape attention;
    AttentionGraph weights;
    std::vector<std::vector<Vec2>> z_states;  // diffusion trajectory
    std::vector<double> y;       // attention-averaged features, n x d_lambda
    std::vector<double> x_next;  // tanh(y w_lambda)
};

struct DeformTape {
    const Mesh* mesh0 = nullptr;
    MeshGraph graph;
    FeatureEncoding encoding;
    std::vector<BlockTape> blocks;
};

struct DeformResult {
    Mesh mesh;
    DeformTape tape;
};

// Full deformer rollout: per block recompute attention from the current
// (Z || X_lambda), diffuse the positions, update the latent features.
DeformResult deform(const Mesh& mesh0, const DeformerParams& params, const FemField& hess_norm,
                    const FemField& monitor);

// Reverse-mode gradients of <d_loss_d_z, Z_out> + <d_loss_d_x, X_out>
// through the recorded rollout. d_loss_d_x may be empty (treated as zero).
ParamGradient backward_params(const DeformerParams& params, const DeformTape& tape,
                              const std::vector<Vec2>& d_loss_d_z,
                              const std::vector<double>& d_loss_d_x);

}  // namespace meshmorph
