#include "freecho/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace freecho {

void NoiseSchedule::validate() const {
    if (!(sigma_data > 0.0)) throw std::invalid_argument("NoiseSchedule: sigma_data must be > 0");
    if (!(p_std >= 0.0)) throw std::invalid_argument("NoiseSchedule: p_std must be >= 0");
    if (!(sigma_min > 0.0)) throw std::invalid_argument("NoiseSchedule: sigma_min must be > 0");
    if (!(sigma_min < sigma_max))
        throw std::invalid_argument("NoiseSchedule: need 0 < sigma_min < sigma_max");
    if (!(rho > 0.0)) throw std::invalid_argument("NoiseSchedule: rho must be > 0");
    if (num_steps < 2) throw std::invalid_argument("NoiseSchedule: num_steps must be >= 2");
}

std::vector<double> sample_training_sigma(Rng& rng, int n, const NoiseSchedule& schedule) {
    if (n < 0) throw std::invalid_argument("sample_training_sigma: n must be >= 0");
    std::vector<double> sigmas;
    sigmas.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        sigmas.push_back(std::exp(rng.normal(schedule.p_mean, schedule.p_std)));
    return sigmas;
}

std::vector<double> step_sigmas(const NoiseSchedule& schedule) {
    schedule.validate();
    const int n          = schedule.num_steps;
    const double inv_rho = 1.0 / schedule.rho;
    const double max_r   = std::pow(schedule.sigma_max, inv_rho);
    const double min_r   = std::pow(schedule.sigma_min, inv_rho);

    std::vector<double> sigmas(static_cast<size_t>(n) + 1);
    for (int i = 0; i < n; ++i) {
        double t  = static_cast<double>(i) / static_cast<double>(n - 1);
        sigmas[static_cast<size_t>(i)] = std::pow(max_r + t * (min_r - max_r), schedule.rho);
    }
    // force exact endpoints; pow round-trips can drift in the last ulp
    sigmas[0]                        = schedule.sigma_max;
    sigmas[static_cast<size_t>(n - 1)] = schedule.sigma_min;
    sigmas[static_cast<size_t>(n)]     = 0.0;
    return sigmas;
}

Preconditioning precondition_coeffs(double sigma, double sigma_data, SkipForm form) {
    if (!(sigma > 0.0)) throw std::invalid_argument("precondition_coeffs: sigma must be > 0");
    if (!(sigma_data > 0.0))
        throw std::invalid_argument("precondition_coeffs: sigma_data must be > 0");
    const double star2 = sigma * sigma + sigma_data * sigma_data;
    const double star  = std::sqrt(star2);
    Preconditioning p;
    p.c_skip  = form == SkipForm::kPaper ? sigma_data / star : sigma_data * sigma_data / star2;
    p.c_out   = sigma * sigma_data / star;
    p.c_in    = 1.0 / star;
    p.c_noise = std::log(sigma) / 4.0;
    return p;
}

double loss_weight(double sigma, double sigma_data) {
    if (!(sigma > 0.0)) throw std::invalid_argument("loss_weight: sigma must be > 0");
    if (!(sigma_data > 0.0)) throw std::invalid_argument("loss_weight: sigma_data must be > 0");
    const double star = std::sqrt(sigma * sigma + sigma_data * sigma_data);
    const double r    = star / (sigma * sigma_data);
    return r * r;
}

}  // namespace freecho
