#include "meshmorph/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace meshmorph {

namespace {

// cell integral under the vertex rule: area * (1/3) * (m_i + m_j + m_k)
std::vector<double> cell_integrals(const Mesh& mesh, const FemField& monitor) {
    std::vector<double> vals(mesh.tris.size());
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tri = mesh.tris[t];
        double msum = monitor.values[tri[0]] + monitor.values[tri[1]] + monitor.values[tri[2]];
        vals[t] = signed_area(mesh, t) * msum / 3.0;
    }
    return vals;
}

}  // namespace

double equi_loss(const Mesh& mesh, const FemField& monitor) {
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled) throw std::runtime_error("equi_loss: tangled mesh");
    std::vector<double> cells = cell_integrals(mesh, monitor);
    double mean = 0.0;
    for (double v : cells) mean += v;
    mean /= static_cast<double>(cells.size());
    double loss = 0.0;
    for (double v : cells) loss += (v - mean) * (v - mean);
    return loss;
}

CoordinateGradient equi_loss_grad(const Mesh& mesh, const FemField& monitor) {
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled) throw std::runtime_error("equi_loss_grad: tangled mesh");
    std::vector<double> cells = cell_integrals(mesh, monitor);
    double mean = 0.0;
    for (double v : cells) mean += v;
    mean /= static_cast<double>(cells.size());

    // dL/dz = sum_j 2 (I_j - mean) dI_j/dz; the mean term drops because the
    // residuals sum to zero
    CoordinateGradient grad(mesh.n_nodes());
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tri = mesh.tris[t];
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double msum = (monitor.values[tri[0]] + monitor.values[tri[1]] + monitor.values[tri[2]]) / 3.0;
        double coeff = 2.0 * (cells[t] - mean) * msum;
        grad.values[tri[0]] += 0.5 * perp(p[2] - p[1]) * coeff;
        grad.values[tri[1]] += 0.5 * perp(p[0] - p[2]) * coeff;
        grad.values[tri[2]] += 0.5 * perp(p[1] - p[0]) * coeff;
    }
    apply_mask(mesh, grad);
    return grad;
}

TotalLossResult total_loss(const Mesh& mesh, const ProblemSpec& spec, const FemField& monitor,
                           double w_equi, const CgOptions& cg) {
    AdjointResult adj = adjoint_gradient(mesh, spec, cg);
    TotalLossResult out;
    out.loss.error = adj.error;
    out.loss.equi = equi_loss(mesh, monitor);
    out.loss.w_equi = w_equi;
    out.loss.total = adj.error + w_equi * out.loss.equi;
    out.grad = std::move(adj.grad);
    if (w_equi != 0.0) {
        CoordinateGradient eg = equi_loss_grad(mesh, monitor);
        eg.scale(w_equi);
        out.grad += eg;
    }
    return out;
}

}  // namespace meshmorph
