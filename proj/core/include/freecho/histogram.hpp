#pragma once

#include <vector>

#include "freecho/tensor.hpp"

namespace freecho {

// Normalized 1-d histogram over [edges.front(), edges.back()].
struct IntensityHistogram {
    std::vector<double> bin_edges;  // B+1, strictly increasing
    std::vector<double> masses;     // B, nonnegative, sum 1

    int bins() const { return static_cast<int>(masses.size()); }
    double center(int i) const {
        return 0.5 * (bin_edges[static_cast<size_t>(i)] + bin_edges[static_cast<size_t>(i) + 1]);
    }
    void validate() const;
    bool same_support(const IntensityHistogram& o) const;
};

IntensityHistogram make_histogram(const double* values, int64_t count, int bins, double lo = -1.0,
                                  double hi = 1.0);
IntensityHistogram histogram_of(const Tensor& t, int bins, double lo = -1.0, double hi = 1.0);

// which bin a value falls in, clamped to [0, bins-1]
int bin_index(const IntensityHistogram& h, double value);

// Wasserstein-1 between two histograms on the same support, by CDF
// integration over bin centers.
double wasserstein1(const IntensityHistogram& a, const IntensityHistogram& b);

}  // namespace freecho
