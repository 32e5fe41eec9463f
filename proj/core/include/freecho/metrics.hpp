#pragma once

#include <functional>
#include <string>
#include <vector>

#include "freecho/tensor.hpp"

namespace freecho {

inline constexpr double kPsnrCap = 100.0;  // dB, returned when MSE == 0

// Mean local SSIM with a Gaussian window over valid positions; inputs are
// (H,W) images sharing a value range of width data_range.
double ssim(const Tensor& a, const Tensor& b, int window = 11, double window_sigma = 1.5,
            double data_range = 2.0);

// Mean SSIM over frames of two (K,H,W) volumes.
double video_ssim(const Tensor& a, const Tensor& b, int window = 11, double window_sigma = 1.5,
                  double data_range = 2.0);

// 10 log10(max_value^2 / MSE); identical inputs return kPsnrCap (flagged).
double psnr(const Tensor& a, const Tensor& b, double max_value, bool* capped = nullptr);

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}); small negative
// eigenvalues from finite samples clip at 0 (total clipped magnitude
// reported through neg_clipped when given).
double frechet_distance(const std::vector<std::vector<double>>& features_a,
                        const std::vector<std::vector<double>>& features_b,
                        double* neg_clipped = nullptr);

// Deterministic feature map for FID/FVD at desk scale. The name records
// the construction and seed so reports cannot be confused with
// InceptionV3 / R(2+1)D numbers.
struct FeatureExtractor {
    std::string name;
    int dim = 0;
    std::function<std::vector<double>(const Tensor&)> extract;
};

// Fixed-seed random convolutional projection over an (H,W) image.
FeatureExtractor random_projection_image_extractor(uint64_t seed = 17, int dim = 64);
// Frame-stacked variant over a (K,H,W) volume.
FeatureExtractor random_projection_video_extractor(uint64_t seed = 17, int dim = 64);

}  // namespace freecho
