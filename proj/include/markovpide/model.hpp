#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "markovpide/mark_measure.hpp"

namespace markovpide {

using Vec = std::vector<double>;

// Coefficient signatures. State is x = (z, l) with z in R^d and l scalar;
// u is the numeric payload of a mark node.
using DriftFn = std::function<void(double t, const Vec& z, double l, Vec& out)>;          // a, R^d
using DispersionFn = std::function<void(double t, const Vec& z, double l, Vec& out)>;     // b, d*d row-major
using JumpZFn = std::function<void(double t, const Vec& z, double l, double u, Vec& out)>;  // gamma^Z
using JumpLFn = std::function<double(double t, const Vec& z, double l, double u)>;          // gamma^L
using NuFn = std::function<double(double t, const Vec& z, double l, double u)>;  // density wrt the mark measure, in [0,1]
using ScalarFieldFn = std::function<double(double t, const Vec& z, double l)>;   // c, f
using TerminalFn = std::function<double(const Vec& z, double l)>;                // g

/// Regularity constants the model declares about itself. Sup norms may be
/// infinite (e.g. unbounded terminal data); the validator then reports sampled
/// values without flagging them.
struct DeclaredBounds {
    double sup_b = std::numeric_limits<double>::infinity();
    double sup_c = std::numeric_limits<double>::infinity();
    double sup_f = std::numeric_limits<double>::infinity();
    double sup_g = std::numeric_limits<double>::infinity();
    double lip_a = std::numeric_limits<double>::infinity();
    double lip_b = std::numeric_limits<double>::infinity();
    double lip_f = std::numeric_limits<double>::infinity();
    double lip_g = std::numeric_limits<double>::infinity();
};

/// Complete coefficient bundle for one model X = (Z, L). Immutable after
/// construction; all members are pure functions of their arguments, so a
/// ModelSpec may be shared freely between threads.
struct ModelSpec {
    std::string name = "custom";
    int dim_z = 1;

    DriftFn drift;
    DispersionFn dispersion;
    JumpZFn jump_z;
    JumpLFn jump_l;
    NuFn nu_density;
    MarkMeasure mark_measure;

    ScalarFieldFn discount;      // c
    ScalarFieldFn running_cost;  // f
    TerminalFn terminal;         // g

    DeclaredBounds bounds;
    std::optional<std::vector<double>> rho;  // per-node jump modulus, if declared

    // Coefficients independent of t; enables coefficient caching in the PDE
    // march. Never changes results, only cost.
    bool time_homogeneous = false;

    /// Physical jump intensity: integral of the density against the mark
    /// measure, sum_k w_k nu(t,z,l,u_k). Bounded by total_mass.
    double physical_intensity(double t, const Vec& z, double l) const {
        double s = 0.0;
        for (std::size_t k = 0; k < mark_measure.size(); ++k)
            s += mark_measure.weights[k] * nu_density(t, z, l, mark_measure.nodes[k]);
        return s;
    }

    /// Sigma = b b^T at (t,z,l), row-major d*d. b_buf is scratch of size d*d.
    void sigma(double t, const Vec& z, double l, Vec& b_buf, Vec& out) const {
        const int d = dim_z;
        b_buf.resize(static_cast<std::size_t>(d) * d);
        out.assign(static_cast<std::size_t>(d) * d, 0.0);
        dispersion(t, z, l, b_buf);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double s = 0.0;
                for (int k = 0; k < d; ++k)
                    s += b_buf[static_cast<std::size_t>(i) * d + k] * b_buf[static_cast<std::size_t>(j) * d + k];
                out[static_cast<std::size_t>(i) * d + j] = s;
            }
    }
};

}  // namespace markovpide
