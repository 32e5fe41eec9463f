#pragma once

#include <utility>
#include <vector>

#include "freecho/denoiser.hpp"
#include "freecho/schedule.hpp"
#include "freecho/tensor.hpp"

namespace freecho {

enum class Solver { kEuler, kHeun };

// start_step counts diffusion steps from the clean end: 0 means no
// denoising, num_steps means full generation from pure noise.
struct SamplerConfig {
    Solver solver = Solver::kHeun;
    NoiseSchedule schedule;
    int start_step        = 64;
    double guidance_scale = 0.0;  // classifier-free baseline only
    uint64_t seed         = 0;

    void validate() const;
};

// (sigma, state) snapshots along a run; sigma strictly decreasing.
struct Trajectory {
    std::vector<std::pair<double, Tensor>> points;
    void record(double sigma, const Tensor& x) { points.emplace_back(sigma, x); }
};

// (x - D(x, sigma)) / sigma
Tensor ode_rhs(const Tensor& x, double sigma, const Denoiser& denoiser);

// Noise level sigma_{N - t_i} at which the truncated reverse process starts.
double sigma_at_step(const NoiseSchedule& schedule, int t_i);

// Full generation: x ~ Normal(0, sigma_max^2 I) integrated to sigma = 0.
// Requires config.start_step == num_steps.
Tensor sample_full(const Denoiser& denoiser, const std::vector<int>& shape,
                   const SamplerConfig& config, Rng& rng, Trajectory* trajectory = nullptr);

// Truncated generation from an init already carrying noise at sigma(t_i);
// integrates the last t_i rungs of the ladder. t_i = 0 returns init.
Tensor sample_truncated(const Denoiser& denoiser, const Tensor& init, const SamplerConfig& config,
                        Trajectory* trajectory = nullptr);

// D_cfg(x, sigma) = D(x, sigma, null) + g * (D(x, sigma, c) - D(x, sigma, null)).
class GuidedDenoiser : public Denoiser {
public:
    GuidedDenoiser(const Denoiser& inner, Tensor condition, double guidance_scale);
    Tensor denoise(const Tensor& x, double sigma, const Tensor* condition) const override;

private:
    const Denoiser* inner_;
    Tensor condition_;
    double scale_;
};

inline std::unique_ptr<Denoiser> cfg_denoiser(const Denoiser& inner, Tensor condition,
                                              double guidance_scale) {
    return std::make_unique<GuidedDenoiser>(inner, std::move(condition), guidance_scale);
}

}  // namespace freecho
