#include "freecho/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace freecho {

void SamplerConfig::validate() const {
    schedule.validate();
    if (start_step < 0 || start_step > schedule.num_steps)
        throw std::invalid_argument("SamplerConfig: start_step must lie in [0, num_steps]");
    if (guidance_scale < 0.0)
        throw std::invalid_argument("SamplerConfig: guidance_scale must be >= 0");
}

Tensor ode_rhs(const Tensor& x, double sigma, const Denoiser& denoiser) {
    if (!(sigma > 0.0)) throw std::invalid_argument("ode_rhs: sigma must be > 0");
    Tensor d        = denoiser.denoise(x, sigma);
    const int64_t n = x.numel();
    Tensor out(x.shape());
    for (int64_t i = 0; i < n; ++i) out[i] = (x[i] - d[i]) / sigma;
    return out;
}

double sigma_at_step(const NoiseSchedule& schedule, int t_i) {
    if (t_i < 1 || t_i > schedule.num_steps)
        throw std::invalid_argument("sigma_at_step: t_i must lie in [1, num_steps]");
    const auto sigmas = step_sigmas(schedule);
    return sigmas[static_cast<size_t>(schedule.num_steps - t_i)];
}

namespace {

void check_finite(const Tensor& x, int step_index, double sigma) {
    if (!x.all_finite())
        throw std::runtime_error("sampler: non-finite state at step " +
                                 std::to_string(step_index) + ", sigma " + std::to_string(sigma));
}

// Integrates the ladder tail sigmas[first..N] down to zero.
Tensor integrate(const Denoiser& denoiser, Tensor x, const std::vector<double>& sigmas,
                 size_t first, Solver solver, Trajectory* trajectory) {
    const size_t last = sigmas.size() - 1;  // sigmas[last] == 0
    if (trajectory) trajectory->record(sigmas[first], x);
    for (size_t i = first; i < last; ++i) {
        const double sigma      = sigmas[i];
        const double sigma_next = sigmas[i + 1];
        const double dt         = sigma_next - sigma;

        Tensor d = ode_rhs(x, sigma, denoiser);
        if (solver == Solver::kEuler || sigma_next == 0.0) {
            // Euler step; Heun's corrector is skipped into sigma = 0 where
            // the rhs is undefined
            for (int64_t j = 0; j < x.numel(); ++j) x[j] += dt * d[j];
        } else {
            Tensor x2(x.shape());
            for (int64_t j = 0; j < x.numel(); ++j) x2[j] = x[j] + dt * d[j];
            Tensor d2 = ode_rhs(x2, sigma_next, denoiser);
            for (int64_t j = 0; j < x.numel(); ++j)
                x[j] += dt * 0.5 * (d[j] + d2[j]);
        }
        check_finite(x, static_cast<int>(i), sigma);
        if (trajectory) trajectory->record(sigma_next, x);
    }
    return x;
}

}  // namespace

Tensor sample_full(const Denoiser& denoiser, const std::vector<int>& shape,
                   const SamplerConfig& config, Rng& rng, Trajectory* trajectory) {
    config.validate();
    if (config.start_step != config.schedule.num_steps)
        throw std::invalid_argument("sample_full: start_step must equal num_steps");
    Tensor x = Tensor::randn(shape, rng, config.schedule.sigma_max);
    return integrate(denoiser, std::move(x), step_sigmas(config.schedule), 0, config.solver,
                     trajectory);
}

Tensor sample_truncated(const Denoiser& denoiser, const Tensor& init, const SamplerConfig& config,
                        Trajectory* trajectory) {
    config.validate();
    const int t = config.start_step;
    if (t == 0) {
        std::fprintf(stderr, "[freecho] sample_truncated: t_i = 0, returning init unchanged\n");
        return init;
    }
    const auto sigmas  = step_sigmas(config.schedule);
    const size_t first = static_cast<size_t>(config.schedule.num_steps - t);
    return integrate(denoiser, init, sigmas, first, config.solver, trajectory);
}

GuidedDenoiser::GuidedDenoiser(const Denoiser& inner, Tensor condition, double guidance_scale)
    : inner_(&inner), condition_(std::move(condition)), scale_(guidance_scale) {}

Tensor GuidedDenoiser::denoise(const Tensor& x, double sigma, const Tensor* /*condition*/) const {
    if (scale_ == 1.0) return inner_->denoise(x, sigma, &condition_);
    Tensor uncond = inner_->denoise(x, sigma, nullptr);
    if (scale_ == 0.0) return uncond;
    Tensor cond     = inner_->denoise(x, sigma, &condition_);
    const int64_t n = x.numel();
    Tensor out(x.shape());
    for (int64_t i = 0; i < n; ++i) out[i] = uncond[i] + scale_ * (cond[i] - uncond[i]);
    return out;
}

}  // namespace freecho
