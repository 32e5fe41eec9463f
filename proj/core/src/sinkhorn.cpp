#include "freecho/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace freecho {

double TransportPlan::transport_cost() const {
    const int S = source.bins(), T = target.bins();
    double cost = 0.0;
    for (int j = 0; j < S; ++j)
        for (int k = 0; k < T; ++k) {
            const double d = source.center(j) - target.center(k);
            cost += coupling[static_cast<size_t>(j) * T + k] * d * d;
        }
    return cost;
}

double TransportPlan::row_marginal_l1() const {
    const int S = source.bins(), T = target.bins();
    double err = 0.0;
    for (int j = 0; j < S; ++j) {
        double row = 0.0;
        for (int k = 0; k < T; ++k) row += coupling[static_cast<size_t>(j) * T + k];
        err += std::abs(row - source.masses[static_cast<size_t>(j)]);
    }
    return err;
}

double TransportPlan::col_marginal_l1() const {
    const int S = source.bins(), T = target.bins();
    double err = 0.0;
    for (int k = 0; k < T; ++k) {
        double col = 0.0;
        for (int j = 0; j < S; ++j) col += coupling[static_cast<size_t>(j) * T + k];
        err += std::abs(col - target.masses[static_cast<size_t>(k)]);
    }
    return err;
}

std::vector<double> TransportPlan::barycentric_map() const {
    const int S = source.bins(), T = target.bins();
    std::vector<double> map(static_cast<size_t>(S),
                            std::numeric_limits<double>::quiet_NaN());
    for (int j = 0; j < S; ++j) {
        double row = 0.0, acc = 0.0;
        for (int k = 0; k < T; ++k) {
            const double p = coupling[static_cast<size_t>(j) * T + k];
            row += p;
            acc += p * target.center(k);
        }
        if (row > 0.0) map[static_cast<size_t>(j)] = acc / row;
    }
    return map;
}

bool TransportPlan::barycentric_monotone() const {
    const auto map = barycentric_map();
    double prev    = -std::numeric_limits<double>::infinity();
    for (double t : map) {
        if (std::isnan(t)) continue;
        if (t < prev - 1e-9) return false;
        prev = std::max(prev, t);
    }
    return true;
}

namespace {

double lse(const std::vector<double>& terms) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double t : terms) mx = std::max(mx, t);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    return mx + std::log(s);
}

}  // namespace

TransportPlan sinkhorn(const IntensityHistogram& source, const IntensityHistogram& target,
                       const SinkhornOptions& options) {
    source.validate();
    target.validate();
    if (!(options.epsilon > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be > 0");
    if (options.max_iters < 1) throw std::invalid_argument("sinkhorn: max_iters must be >= 1");

    // support restriction: zero-mass bins leave the problem entirely
    std::vector<int> ja, jb;
    for (int j = 0; j < source.bins(); ++j)
        if (source.masses[static_cast<size_t>(j)] > 0.0) ja.push_back(j);
    for (int k = 0; k < target.bins(); ++k)
        if (target.masses[static_cast<size_t>(k)] > 0.0) jb.push_back(k);
    const int S = static_cast<int>(ja.size());
    const int T = static_cast<int>(jb.size());

    std::vector<double> a(static_cast<size_t>(S)), b(static_cast<size_t>(T));
    std::vector<double> ca(static_cast<size_t>(S)), cb(static_cast<size_t>(T));
    for (int j = 0; j < S; ++j) {
        a[static_cast<size_t>(j)]  = source.masses[static_cast<size_t>(ja[static_cast<size_t>(j)])];
        ca[static_cast<size_t>(j)] = source.center(ja[static_cast<size_t>(j)]);
    }
    for (int k = 0; k < T; ++k) {
        b[static_cast<size_t>(k)]  = target.masses[static_cast<size_t>(jb[static_cast<size_t>(k)])];
        cb[static_cast<size_t>(k)] = target.center(jb[static_cast<size_t>(k)]);
    }

    std::vector<double> cost(static_cast<size_t>(S) * T);
    double cost_max = 0.0;
    for (int j = 0; j < S; ++j)
        for (int k = 0; k < T; ++k) {
            const double d = ca[static_cast<size_t>(j)] - cb[static_cast<size_t>(k)];
            cost[static_cast<size_t>(j) * T + k] = d * d;
            cost_max = std::max(cost_max, d * d);
        }

    std::vector<double> log_a(static_cast<size_t>(S)), log_b(static_cast<size_t>(T));
    for (int j = 0; j < S; ++j) log_a[static_cast<size_t>(j)] = std::log(a[static_cast<size_t>(j)]);
    for (int k = 0; k < T; ++k) log_b[static_cast<size_t>(k)] = std::log(b[static_cast<size_t>(k)]);

    std::vector<double> eps_levels;
    if (options.epsilon_scaling && cost_max > 0.0) {
        double e = std::max(options.epsilon, cost_max / 8.0);
        while (e > options.epsilon * 1.0000001) {
            eps_levels.push_back(e);
            e /= 4.0;
        }
    }
    eps_levels.push_back(options.epsilon);

    std::vector<double> f(static_cast<size_t>(S), 0.0), g(static_cast<size_t>(T), 0.0);
    std::vector<double> terms;

    TransportPlan plan;
    plan.source  = source;
    plan.target  = target;
    plan.epsilon = options.epsilon;
    plan.coupling.assign(static_cast<size_t>(source.bins()) * target.bins(), 0.0);

    auto compact_cost = [&](double eps) {
        double c = 0.0;
        for (int j = 0; j < S; ++j)
            for (int k = 0; k < T; ++k) {
                const size_t idx = static_cast<size_t>(j) * T + k;
                const double p =
                    std::exp((f[static_cast<size_t>(j)] + g[static_cast<size_t>(k)] - cost[idx]) /
                             eps);
                c += p * cost[idx];
            }
        return c;
    };

    int iters = 0;
    bool converged = false;
    for (size_t level = 0; level < eps_levels.size() && !converged; ++level) {
        const double eps     = eps_levels[level];
        const bool is_final  = level + 1 == eps_levels.size();
        const double lvl_tol = is_final ? options.tol : std::max(options.tol, 1e-3);
        const int lvl_max    = is_final ? options.max_iters : 60;

        for (int it = 0; it < lvl_max && iters < options.max_iters; ++it) {
            // column then row update; rows are exact after the row update
            terms.assign(static_cast<size_t>(S), 0.0);
            for (int k = 0; k < T; ++k) {
                for (int j = 0; j < S; ++j)
                    terms[static_cast<size_t>(j)] =
                        (f[static_cast<size_t>(j)] - cost[static_cast<size_t>(j) * T + k]) / eps;
                g[static_cast<size_t>(k)] = eps * (log_b[static_cast<size_t>(k)] - lse(terms));
            }
            terms.assign(static_cast<size_t>(T), 0.0);
            for (int j = 0; j < S; ++j) {
                for (int k = 0; k < T; ++k)
                    terms[static_cast<size_t>(k)] =
                        (g[static_cast<size_t>(k)] - cost[static_cast<size_t>(j) * T + k]) / eps;
                f[static_cast<size_t>(j)] = eps * (log_a[static_cast<size_t>(j)] - lse(terms));
            }
            ++iters;

            if (iters % 10 == 0) plan.cost_trace.push_back(compact_cost(eps));

            // column marginal error (rows are exact by construction)
            double col_err = 0.0;
            for (int k = 0; k < T; ++k) {
                double col = 0.0;
                for (int j = 0; j < S; ++j)
                    col += std::exp((f[static_cast<size_t>(j)] + g[static_cast<size_t>(k)] -
                                     cost[static_cast<size_t>(j) * T + k]) /
                                    eps);
                col_err += std::abs(col - b[static_cast<size_t>(k)]);
            }
            if (col_err < lvl_tol) {
                if (is_final) converged = true;
                break;
            }
        }
    }

    const double eps = options.epsilon;
    for (int j = 0; j < S; ++j)
        for (int k = 0; k < T; ++k)
            plan.coupling[static_cast<size_t>(ja[static_cast<size_t>(j)]) * target.bins() +
                          jb[static_cast<size_t>(k)]] =
                std::exp((f[static_cast<size_t>(j)] + g[static_cast<size_t>(k)] -
                          cost[static_cast<size_t>(j) * T + k]) /
                         eps);

    plan.iterations     = iters;
    plan.converged      = converged;
    plan.marginal_error = std::max(plan.row_marginal_l1(), plan.col_marginal_l1());
    if (!converged)
        std::fprintf(stderr,
                     "[freecho] sinkhorn: not converged after %d iterations "
                     "(marginal error %.3e)\n",
                     iters, plan.marginal_error);
    return plan;
}

}  // namespace freecho
