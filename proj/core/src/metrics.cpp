#include "freecho/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>

#include "freecho/rng.hpp"

namespace freecho {

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size) * size);
    const int r  = size / 2;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dy = y - r, dx = x - r;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w[static_cast<size_t>(y) * size + x] = v;
            total += v;
        }
    for (double& v : w) v /= total;
    return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, int window, double window_sigma,
            double data_range) {
    check_same_shape(a, b, "ssim");
    if (a.ndim() != 2) throw std::invalid_argument("ssim: inputs must be (H,W)");
    const int H = a.dim(0), W = a.dim(1);
    int win = window;
    if (win % 2 == 0) ++win;
    win = std::min({win, H % 2 ? H : H - 1, W % 2 ? W : W - 1});
    if (win < 3) throw std::invalid_argument("ssim: image too small for any window");

    const auto w = gaussian_window(win, window_sigma);
    const double C1 = (0.01 * data_range) * (0.01 * data_range);
    const double C2 = (0.03 * data_range) * (0.03 * data_range);

    const int r  = win / 2;
    double total = 0.0;
    int64_t count = 0;
    for (int y = r; y < H - r; ++y)
        for (int x = r; x < W - r; ++x) {
            double ma = 0.0, mb = 0.0, maa = 0.0, mbb = 0.0, mab = 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const double wv = w[static_cast<size_t>(dy + r) * win + (dx + r)];
                    const double av = a[static_cast<int64_t>(y + dy) * W + (x + dx)];
                    const double bv = b[static_cast<int64_t>(y + dy) * W + (x + dx)];
                    ma += wv * av;
                    mb += wv * bv;
                    maa += wv * av * av;
                    mbb += wv * bv * bv;
                    mab += wv * av * bv;
                }
            const double va  = maa - ma * ma;
            const double vb  = mbb - mb * mb;
            const double cab = mab - ma * mb;
            const double num = (2.0 * ma * mb + C1) * (2.0 * cab + C2);
            const double den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            total += num / den;
            ++count;
        }
    return total / static_cast<double>(count);
}

double video_ssim(const Tensor& a, const Tensor& b, int window, double window_sigma,
                  double data_range) {
    check_same_shape(a, b, "video_ssim");
    if (a.ndim() != 3) throw std::invalid_argument("video_ssim: inputs must be (K,H,W)");
    const int K = a.dim(0), H = a.dim(1), W = a.dim(2);
    const int64_t plane = static_cast<int64_t>(H) * W;
    double total        = 0.0;
    for (int f = 0; f < K; ++f) {
        Tensor fa({H, W}), fb({H, W});
        std::copy(a.data() + f * plane, a.data() + (f + 1) * plane, fa.data());
        std::copy(b.data() + f * plane, b.data() + (f + 1) * plane, fb.data());
        total += ssim(fa, fb, window, window_sigma, data_range);
    }
    return total / K;
}

double psnr(const Tensor& a, const Tensor& b, double max_value, bool* capped) {
    check_same_shape(a, b, "psnr");
    if (!(max_value > 0.0)) throw std::invalid_argument("psnr: max_value must be > 0");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (capped != nullptr) *capped = false;
    if (mse == 0.0) {
        if (capped != nullptr) *capped = true;
        return kPsnrCap;
    }
    const double v = 10.0 * std::log10(max_value * max_value / mse);
    if (v > kPsnrCap) {
        if (capped != nullptr) *capped = true;
        return kPsnrCap;
    }
    return v;
}

namespace {

// mean + unbiased covariance of row features
void gaussian_fit(const std::vector<std::vector<double>>& feats, Eigen::VectorXd& mu,
                  Eigen::MatrixXd& cov) {
    const int n = static_cast<int>(feats.size());
    const int d = static_cast<int>(feats[0].size());
    mu          = Eigen::VectorXd::Zero(d);
    for (const auto& f : feats)
        mu += Eigen::Map<const Eigen::VectorXd>(f.data(), d);
    mu /= n;
    cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : feats) {
        Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(f.data(), d) - mu;
        cov += c * c.transpose();
    }
    cov /= std::max(1, n - 1);
}

// PSD square root with negative-eigenvalue clipping
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double* neg_clipped) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < 0.0) {
            if (neg_clipped != nullptr) *neg_clipped += -ev[i];
            ev[i] = 0.0;
        }
        ev[i] = std::sqrt(ev[i]);
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& features_a,
                        const std::vector<std::vector<double>>& features_b,
                        double* neg_clipped) {
    if (features_a.size() < 2 || features_b.size() < 2)
        throw std::invalid_argument("frechet_distance: need at least 2 feature vectors per side");
    const size_t d = features_a[0].size();
    for (const auto& f : features_a)
        if (f.size() != d) throw std::invalid_argument("frechet_distance: dimension mismatch");
    for (const auto& f : features_b)
        if (f.size() != d) throw std::invalid_argument("frechet_distance: dimension mismatch");

    if (neg_clipped != nullptr) *neg_clipped = 0.0;
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    gaussian_fit(features_a, mu_a, cov_a);
    gaussian_fit(features_b, mu_b, cov_b);

    // tr((Sa Sb)^{1/2}) = tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})
    Eigen::MatrixXd sqrt_a = psd_sqrt(cov_a, neg_clipped);
    Eigen::MatrixXd inner  = sqrt_a * cov_b * sqrt_a;
    inner                  = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    double tr_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        double ev = es.eigenvalues()[i];
        if (ev < 0.0) {
            if (neg_clipped != nullptr) *neg_clipped += -ev;
            ev = 0.0;
        }
        tr_sqrt += std::sqrt(ev);
    }
    const double dist =
        (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, dist);
}

// ------------------------------------------------------- desk extractors

namespace {

struct RandomConvStack {
    // two 5x5 stride-2 conv layers with tanh, then 4x4 grid pooling
    std::vector<double> w1;  // (c1,1,5,5)
    std::vector<double> w2;  // (c2,c1,5,5)
    int c1 = 6, c2 = 12;

    explicit RandomConvStack(uint64_t seed) {
        Rng rng(Rng::mix(seed, 0x7ea7));
        w1.resize(static_cast<size_t>(c1) * 25);
        w2.resize(static_cast<size_t>(c2) * c1 * 25);
        for (auto& v : w1) v = rng.normal() / 5.0;
        for (auto& v : w2) v = rng.normal() / std::sqrt(25.0 * c1);
    }

    // returns c2 x 16 grid-pooled activations
    std::vector<double> features(const double* img, int H, int W) const {
        const int H1 = (H - 5) / 2 + 1, W1 = (W - 5) / 2 + 1;
        std::vector<double> a1(static_cast<size_t>(c1) * H1 * W1);
        for (int c = 0; c < c1; ++c)
            for (int y = 0; y < H1; ++y)
                for (int x = 0; x < W1; ++x) {
                    double acc = 0.0;
                    for (int dy = 0; dy < 5; ++dy)
                        for (int dx = 0; dx < 5; ++dx)
                            acc += w1[static_cast<size_t>(c) * 25 + dy * 5 + dx] *
                                   img[static_cast<int64_t>(2 * y + dy) * W + (2 * x + dx)];
                    a1[(static_cast<size_t>(c) * H1 + y) * W1 + x] = std::tanh(acc);
                }
        const int H2 = (H1 - 5) / 2 + 1, W2 = (W1 - 5) / 2 + 1;
        std::vector<double> a2(static_cast<size_t>(c2) * H2 * W2);
        for (int c = 0; c < c2; ++c)
            for (int y = 0; y < H2; ++y)
                for (int x = 0; x < W2; ++x) {
                    double acc = 0.0;
                    for (int ci = 0; ci < c1; ++ci)
                        for (int dy = 0; dy < 5; ++dy)
                            for (int dx = 0; dx < 5; ++dx)
                                acc += w2[(static_cast<size_t>(c) * c1 + ci) * 25 + dy * 5 + dx] *
                                       a1[(static_cast<size_t>(ci) * H1 + 2 * y + dy) * W1 +
                                          (2 * x + dx)];
                    a2[(static_cast<size_t>(c) * H2 + y) * W2 + x] = std::tanh(acc);
                }
        // 4x4 grid mean pool per channel
        std::vector<double> out(static_cast<size_t>(c2) * 16, 0.0);
        std::vector<int> cnt(static_cast<size_t>(c2) * 16, 0);
        for (int c = 0; c < c2; ++c)
            for (int y = 0; y < H2; ++y)
                for (int x = 0; x < W2; ++x) {
                    const int gy = std::min(3, y * 4 / std::max(1, H2));
                    const int gx = std::min(3, x * 4 / std::max(1, W2));
                    out[static_cast<size_t>(c) * 16 + gy * 4 + gx] +=
                        a2[(static_cast<size_t>(c) * H2 + y) * W2 + x];
                    ++cnt[static_cast<size_t>(c) * 16 + gy * 4 + gx];
                }
        for (size_t i = 0; i < out.size(); ++i)
            if (cnt[i] > 0) out[i] /= cnt[i];
        return out;
    }
};

std::vector<double> random_projection(const std::vector<double>& in, int dim, uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x9a0e));
    std::vector<double> out(static_cast<size_t>(dim), 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in.size()));
    for (int d = 0; d < dim; ++d)
        for (double v : in) out[static_cast<size_t>(d)] += scale * rng.normal() * v;
    return out;
}

}  // namespace

FeatureExtractor random_projection_image_extractor(uint64_t seed, int dim) {
    auto stack = std::make_shared<RandomConvStack>(seed);
    FeatureExtractor fe;
    fe.dim  = dim;
    fe.name = "randconv-image-v1(seed=" + std::to_string(seed) + ",dim=" + std::to_string(dim) +
              ")";
    fe.extract = [stack, dim, seed](const Tensor& img) {
        if (img.ndim() != 2)
            throw std::invalid_argument("image extractor: input must be (H,W)");
        auto grid = stack->features(img.data(), img.dim(0), img.dim(1));
        return random_projection(grid, dim, seed);
    };
    return fe;
}

FeatureExtractor random_projection_video_extractor(uint64_t seed, int dim) {
    auto stack = std::make_shared<RandomConvStack>(seed);
    FeatureExtractor fe;
    fe.dim  = dim;
    fe.name = "randconv-video-v1(seed=" + std::to_string(seed) + ",dim=" + std::to_string(dim) +
              ")";
    fe.extract = [stack, dim, seed](const Tensor& vid) {
        if (vid.ndim() != 3)
            throw std::invalid_argument("video extractor: input must be (K,H,W)");
        const int K = vid.dim(0), H = vid.dim(1), W = vid.dim(2);
        const int64_t plane = static_cast<int64_t>(H) * W;
        std::vector<double> mean_feat, diff_feat, prev;
        for (int f = 0; f < K; ++f) {
            auto g = stack->features(vid.data() + f * plane, H, W);
            if (mean_feat.empty()) {
                mean_feat.assign(g.size(), 0.0);
                diff_feat.assign(g.size(), 0.0);
            }
            for (size_t i = 0; i < g.size(); ++i) {
                mean_feat[i] += g[i] / K;
                if (f > 0) diff_feat[i] += std::abs(g[i] - prev[i]) / std::max(1, K - 1);
            }
            prev = std::move(g);
        }
        std::vector<double> both = mean_feat;
        both.insert(both.end(), diff_feat.begin(), diff_feat.end());
        return random_projection(both, dim, seed + 1);
    };
    return fe;
}

}  // namespace freecho
