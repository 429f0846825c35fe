#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace markovpide {

/// Discrete representation of the finite reference jump measure on the mark
/// space: node payloads u_k with masses w_k > 0 and total mass
/// lambda_tilde = sum w_k (the event rate under the reference measure).
struct MarkMeasure {
    std::vector<double> nodes;    // numeric payload per mark
    std::vector<double> weights;  // w_k > 0
    double total_mass = 0.0;      // lambda_tilde

    static MarkMeasure make(std::vector<double> nodes, std::vector<double> weights) {
        MarkMeasure m;
        m.nodes = std::move(nodes);
        m.weights = std::move(weights);
        double total = 0.0;
        for (double w : m.weights) total += w;
        m.total_mass = total;
        m.validate();
        return m;
    }

    std::size_t size() const { return nodes.size(); }

    void validate() const {
        if (nodes.size() != weights.size())
            throw std::invalid_argument("MarkMeasure: nodes/weights size mismatch");
        if (nodes.empty())
            throw std::invalid_argument("MarkMeasure: empty mark set");
        double total = 0.0;
        for (double w : weights) {
            if (!(w > 0.0) || !std::isfinite(w))
                throw std::invalid_argument("MarkMeasure: weights must be finite and > 0");
            total += w;
        }
        if (!std::isfinite(total_mass) || !(total_mass > 0.0))
            throw std::invalid_argument("MarkMeasure: total mass must be finite and > 0");
        // ulp-scale consistency between the stored total and the weight sum
        const double tol = 64.0 * std::numeric_limits<double>::epsilon() * total;
        if (std::abs(total - total_mass) > tol)
            throw std::invalid_argument("MarkMeasure: total_mass inconsistent with weight sum");
    }

    /// Categorical draw by cumulative weights; u01 uniform on [0,1).
    std::size_t sample_index(double u01) const {
        const double target = u01 * total_mass;
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
            acc += weights[k];
            if (target < acc) return k;
        }
        return weights.size() - 1;
    }
};

}  // namespace markovpide
