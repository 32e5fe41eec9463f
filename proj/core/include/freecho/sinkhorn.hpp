#pragma once

#include <vector>

#include "freecho/histogram.hpp"

namespace freecho {

// Entropic-regularized coupling between two intensity histograms with
// squared-distance cost on bin centers.
struct TransportPlan {
    std::vector<double> coupling;  // row-major source_bins x target_bins
    IntensityHistogram source, target;
    double epsilon        = 1e-3;
    int iterations        = 0;
    double marginal_error = 0.0;  // max of the two marginal L1 errors
    bool converged        = false;
    std::vector<double> cost_trace;  // <C,P> logged every 10 iterations

    double transport_cost() const;  // <C,P>
    double row_marginal_l1() const;
    double col_marginal_l1() const;

    // Barycentric projection T(j) = sum_k P_jk c_k / sum_k P_jk per source
    // bin; NaN for zero-mass source bins.
    std::vector<double> barycentric_map() const;
    bool barycentric_monotone() const;  // over bins with mass
};

struct SinkhornOptions {
    double epsilon  = 1e-3;
    int max_iters   = 20000;
    double tol      = 1e-6;  // L1 on each marginal
    // anneal epsilon from a coarse level down to the target, warm-starting
    // the potentials (log-domain stabilization)
    bool epsilon_scaling = true;
};

// Log-domain Sinkhorn. Zero-mass bins are restricted out of the problem;
// non-convergence returns the plan with converged = false (no exception).
TransportPlan sinkhorn(const IntensityHistogram& source, const IntensityHistogram& target,
                       const SinkhornOptions& options = {});

}  // namespace freecho
