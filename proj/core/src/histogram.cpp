#include "freecho/histogram.hpp"

#include <cmath>
#include <stdexcept>

namespace freecho {

void IntensityHistogram::validate() const {
    if (bin_edges.size() != masses.size() + 1 || masses.empty())
        throw std::invalid_argument("IntensityHistogram: edge/mass sizes inconsistent");
    for (size_t i = 0; i + 1 < bin_edges.size(); ++i)
        if (!(bin_edges[i] < bin_edges[i + 1]))
            throw std::invalid_argument("IntensityHistogram: edges must be strictly increasing");
    double sum = 0.0;
    for (double m : masses) {
        if (m < 0.0) throw std::invalid_argument("IntensityHistogram: negative mass");
        sum += m;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("IntensityHistogram: masses must sum to 1");
}

bool IntensityHistogram::same_support(const IntensityHistogram& o) const {
    if (bin_edges.size() != o.bin_edges.size()) return false;
    for (size_t i = 0; i < bin_edges.size(); ++i)
        if (std::abs(bin_edges[i] - o.bin_edges[i]) > 1e-12) return false;
    return true;
}

IntensityHistogram make_histogram(const double* values, int64_t count, int bins, double lo,
                                  double hi) {
    if (bins < 1) throw std::invalid_argument("make_histogram: bins must be >= 1");
    if (count < 1) throw std::invalid_argument("make_histogram: no values");
    if (!(lo < hi)) throw std::invalid_argument("make_histogram: lo must be < hi");
    IntensityHistogram h;
    h.bin_edges.resize(static_cast<size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i)
        h.bin_edges[static_cast<size_t>(i)] = lo + (hi - lo) * i / bins;
    h.masses.assign(static_cast<size_t>(bins), 0.0);
    const double scale = bins / (hi - lo);
    for (int64_t i = 0; i < count; ++i) {
        int b = static_cast<int>((values[i] - lo) * scale);
        b     = std::max(0, std::min(bins - 1, b));
        h.masses[static_cast<size_t>(b)] += 1.0;
    }
    for (double& m : h.masses) m /= static_cast<double>(count);
    return h;
}

IntensityHistogram histogram_of(const Tensor& t, int bins, double lo, double hi) {
    return make_histogram(t.data(), t.numel(), bins, lo, hi);
}

int bin_index(const IntensityHistogram& h, double value) {
    const double lo = h.bin_edges.front();
    const double hi = h.bin_edges.back();
    const int bins  = h.bins();
    int b           = static_cast<int>((value - lo) / (hi - lo) * bins);
    return std::max(0, std::min(bins - 1, b));
}

double wasserstein1(const IntensityHistogram& a, const IntensityHistogram& b) {
    if (!a.same_support(b))
        throw std::invalid_argument("wasserstein1: histograms must share bin support");
    double w1 = 0.0, cdf_diff = 0.0;
    for (int i = 0; i + 1 < a.bins(); ++i) {
        cdf_diff += a.masses[static_cast<size_t>(i)] - b.masses[static_cast<size_t>(i)];
        w1 += std::abs(cdf_diff) * (a.center(i + 1) - a.center(i));
    }
    return w1;
}

}  // namespace freecho
