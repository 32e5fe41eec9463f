#pragma once

#include <vector>

#include "freecho/rng.hpp"

namespace freecho {

// Which skip coefficient the preconditioned denoiser uses.
//   kPaper:       c_skip = sigma_data / sqrt(sigma^2 + sigma_data^2)
//   kEdmStandard: c_skip = sigma_data^2 / (sigma^2 + sigma_data^2)
enum class SkipForm { kPaper, kEdmStandard };

// All noise-level logic: training-time sigma sampling, the discrete
// sampling ladder, preconditioning coefficients and the loss weight.
struct NoiseSchedule {
    double sigma_data = 0.5;
    double p_mean     = -1.2;
    double p_std      = 1.2;
    double sigma_min  = 0.002;
    double sigma_max  = 80.0;
    double rho        = 7.0;
    int num_steps     = 64;
    SkipForm skip_form = SkipForm::kPaper;

    void validate() const;
};

// Input/output scalings of the raw network at one noise level.
struct Preconditioning {
    double c_skip  = 0.0;
    double c_out   = 0.0;
    double c_in    = 0.0;
    double c_noise = 0.0;
};

// n independent draws of sigma = exp(z), z ~ Normal(p_mean, p_std^2).
std::vector<double> sample_training_sigma(Rng& rng, int n, const NoiseSchedule& schedule);

// Power-rho ladder sigma_0 > ... > sigma_{N-1} > sigma_N = 0 with
// sigma_0 = sigma_max and sigma_{N-1} = sigma_min. Returns N+1 entries.
std::vector<double> step_sigmas(const NoiseSchedule& schedule);

Preconditioning precondition_coeffs(double sigma, double sigma_data,
                                    SkipForm form = SkipForm::kPaper);

// w(sigma) = (sigma_star / (sigma * sigma_data))^2, the reciprocal of c_out^2.
double loss_weight(double sigma, double sigma_data);

}  // namespace freecho
