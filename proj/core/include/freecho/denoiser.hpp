#pragma once

#include <functional>
#include <memory>

#include "freecho/schedule.hpp"
#include "freecho/tensor.hpp"

namespace freecho {

// The denoiser contract: D(x, sigma[, condition]) -> estimate of the clean
// signal, same shape as x. Implementations must be safe for concurrent
// read-only evaluation.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Tensor denoise(const Tensor& x, double sigma,
                           const Tensor* condition = nullptr) const = 0;
};

// Raw network F(c_in * s, c_noise[, condition]) behind the preconditioning.
class RawNet {
public:
    virtual ~RawNet() = default;
    virtual Tensor forward(const Tensor& x_scaled, double c_noise,
                           const Tensor* condition = nullptr) const = 0;
};

// Adapts a plain callable to the RawNet interface (tests, toy denoisers).
class FunctionRawNet : public RawNet {
public:
    using Fn = std::function<Tensor(const Tensor&, double, const Tensor*)>;
    explicit FunctionRawNet(Fn fn) : fn_(std::move(fn)) {}
    Tensor forward(const Tensor& x, double c_noise, const Tensor* cond) const override {
        return fn_(x, c_noise, cond);
    }

private:
    Fn fn_;
};

// D_hat(s, sigma) = c_skip(sigma) * s + c_out(sigma) * F(c_in(sigma) * s, ln(sigma)/4).
// Throws if the raw network returns a different shape.
class PreconditionedDenoiser : public Denoiser {
public:
    PreconditionedDenoiser(const RawNet& net, NoiseSchedule schedule);
    Tensor denoise(const Tensor& x, double sigma, const Tensor* condition) const override;
    const NoiseSchedule& schedule() const { return schedule_; }

private:
    const RawNet* net_;
    NoiseSchedule schedule_;
};

inline std::unique_ptr<Denoiser> wrap_preconditioned(const RawNet& net, NoiseSchedule schedule) {
    return std::make_unique<PreconditionedDenoiser>(net, std::move(schedule));
}

// Gaussian data model for sampler verification. With mean mu and covariance
// Sigma, the exact posterior-mean denoiser is
//   D(x, sigma) = mu + Sigma (Sigma + sigma^2 I)^{-1} (x - mu)
// which reduces to mu + c^2/(c^2 + sigma^2) (x - mu) for Sigma = c^2 I.
struct GaussianOracle {
    Tensor mean;              // flat (d)
    double scalar_cov = 1.0;  // c^2, used when covariance is empty
    Tensor covariance;        // optional (d,d) symmetric PSD
};

class GaussianOracleDenoiser : public Denoiser {
public:
    explicit GaussianOracleDenoiser(GaussianOracle oracle);
    Tensor denoise(const Tensor& x, double sigma, const Tensor* condition) const override;
    const GaussianOracle& oracle() const { return oracle_; }

private:
    GaussianOracle oracle_;
};

inline std::unique_ptr<Denoiser> gaussian_oracle_denoiser(GaussianOracle oracle) {
    return std::make_unique<GaussianOracleDenoiser>(std::move(oracle));
}

}  // namespace freecho
