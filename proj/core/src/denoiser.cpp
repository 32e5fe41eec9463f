#include "freecho/denoiser.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace freecho {

PreconditionedDenoiser::PreconditionedDenoiser(const RawNet& net, NoiseSchedule schedule)
    : net_(&net), schedule_(std::move(schedule)) {
    schedule_.validate();
}

Tensor PreconditionedDenoiser::denoise(const Tensor& x, double sigma,
                                       const Tensor* condition) const {
    const Preconditioning c = precondition_coeffs(sigma, schedule_.sigma_data, schedule_.skip_form);
    Tensor scaled(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) scaled[i] = c.c_in * x[i];
    Tensor f = net_->forward(scaled, c.c_noise, condition);
    if (!f.same_shape(x))
        throw std::runtime_error("denoiser contract violation: raw net returned shape " +
                                 Tensor::shape_str(f.shape()) + " for input " +
                                 Tensor::shape_str(x.shape()));
    Tensor out(x.shape());
    for (int64_t i = 0; i < n; ++i) out[i] = c.c_skip * x[i] + c.c_out * f[i];
    return out;
}

GaussianOracleDenoiser::GaussianOracleDenoiser(GaussianOracle oracle)
    : oracle_(std::move(oracle)) {
    if (oracle_.mean.ndim() != 1)
        throw std::invalid_argument("GaussianOracleDenoiser: mean must be a flat vector");
    if (!oracle_.covariance.empty()) {
        const int d = oracle_.mean.dim(0);
        if (oracle_.covariance.ndim() != 2 || oracle_.covariance.dim(0) != d ||
            oracle_.covariance.dim(1) != d)
            throw std::invalid_argument("GaussianOracleDenoiser: covariance must be (d,d)");
        Eigen::Map<const Eigen::MatrixXd> cov(oracle_.covariance.data(), d, d);
        if (!cov.isApprox(cov.transpose(), 1e-10))
            throw std::invalid_argument("GaussianOracleDenoiser: covariance must be symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        if (es.eigenvalues().minCoeff() < -1e-10)
            throw std::invalid_argument("GaussianOracleDenoiser: covariance must be PSD");
    } else if (oracle_.scalar_cov < 0.0) {
        throw std::invalid_argument("GaussianOracleDenoiser: scalar covariance must be >= 0");
    }
}

Tensor GaussianOracleDenoiser::denoise(const Tensor& x, double sigma,
                                       const Tensor* /*condition*/) const {
    if (!(sigma > 0.0)) throw std::invalid_argument("GaussianOracleDenoiser: sigma must be > 0");
    const int d = oracle_.mean.dim(0);
    if (x.numel() != d)
        throw std::invalid_argument("GaussianOracleDenoiser: x has " + std::to_string(x.numel()) +
                                    " elements, oracle dimension is " + std::to_string(d));
    Tensor out(x.shape());
    if (oracle_.covariance.empty()) {
        const double f = oracle_.scalar_cov / (oracle_.scalar_cov + sigma * sigma);
        for (int i = 0; i < d; ++i)
            out[i] = oracle_.mean[i] + f * (x[i] - oracle_.mean[i]);
        return out;
    }
    Eigen::Map<const Eigen::MatrixXd> cov(oracle_.covariance.data(), d, d);
    Eigen::VectorXd delta(d);
    for (int i = 0; i < d; ++i) delta[i] = x[i] - oracle_.mean[i];
    Eigen::MatrixXd a = cov + sigma * sigma * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd y = cov * a.ldlt().solve(delta);
    for (int i = 0; i < d; ++i) out[i] = oracle_.mean[i] + y[i];
    return out;
}

}  // namespace freecho
