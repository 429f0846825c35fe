#pragma once

#include <functional>
#include <stdexcept>

#include "markovpide/model.hpp"

namespace markovpide {

/// Test function phi(z,l) with caller-supplied first and second z-derivatives
/// (the generator never differentiates numerically).
struct TestFunction {
    int dim_z = 1;
    std::function<double(const Vec& z, double l)> value;
    std::function<void(const Vec& z, double l, Vec& out)> grad_z;  // d entries
    std::function<void(const Vec& z, double l, Vec& out)> hess_z;  // d*d row-major
};

/// Full generator: drift + diffusion + jump-integral term, the latter as the
/// exact quadrature over the model's mark nodes,
///   sum_i a_i phi_{z_i} + (1/2) sum_ij Sigma_ij phi_{z_i z_j}
///   + sum_k w_k nu(t,x,u_k) [phi(z + gamma^Z, l + gamma^L) - phi(z,l)].
inline double apply_generator(const ModelSpec& model, const TestFunction& phi, double t,
                              const Vec& z, double l) {
    const int d = model.dim_z;
    if (phi.dim_z != d)
        throw std::invalid_argument("apply_generator: test function dimension " +
                                    std::to_string(phi.dim_z) + " != model dim_z " +
                                    std::to_string(d));
    if (static_cast<int>(z.size()) != d)
        throw std::invalid_argument("apply_generator: state dimension mismatch");

    Vec grad(static_cast<std::size_t>(d));
    Vec hess(static_cast<std::size_t>(d) * d);
    Vec a(static_cast<std::size_t>(d));
    Vec b_buf, sig;
    phi.grad_z(z, l, grad);
    phi.hess_z(z, l, hess);
    model.drift(t, z, l, a);
    model.sigma(t, z, l, b_buf, sig);

    double local = 0.0;
    for (int i = 0; i < d; ++i) local += a[i] * grad[i];
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            local += 0.5 * sig[static_cast<std::size_t>(i) * d + j] * hess[static_cast<std::size_t>(i) * d + j];

    const double phi_here = phi.value(z, l);
    Vec gz(static_cast<std::size_t>(d));
    Vec z_dest(static_cast<std::size_t>(d));
    double jump = 0.0;
    for (std::size_t k = 0; k < model.mark_measure.size(); ++k) {
        const double u = model.mark_measure.nodes[k];
        const double w = model.mark_measure.weights[k];
        const double nu = model.nu_density(t, z, l, u);
        model.jump_z(t, z, l, u, gz);
        for (int i = 0; i < d; ++i) z_dest[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(i)] + gz[static_cast<std::size_t>(i)];
        const double l_dest = l + model.jump_l(t, z, l, u);
        jump += w * nu * (phi.value(z_dest, l_dest) - phi_here);
    }
    return local + jump;
}

}  // namespace markovpide
