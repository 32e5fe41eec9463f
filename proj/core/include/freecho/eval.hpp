#pragma once

#include <functional>
#include <string>
#include <vector>

#include "freecho/data.hpp"
#include "freecho/metrics.hpp"

namespace freecho {

struct MetricRow {
    std::string method;
    int step_t = -1;  // -1 renders as "-"
    double ssim = 0.0, psnr = 0.0, fid = 0.0, fvd = 0.0;
    double l2 = std::numeric_limits<double>::quiet_NaN();  // optional mean RMSE column
    int conditions            = 0;
    int samples_per_condition = 0;
    std::vector<std::string> failures;  // excluded conditions, annotated
};

// Table mirrors the columns Method | Step t | SSIM | PSNR | FID | FVD and
// is footnoted with the substitute extractor name; desk-scale FID/FVD are
// not comparable to InceptionV3 / R(2+1)D numbers.
struct MetricReport {
    std::vector<MetricRow> rows;
    std::string extractor_name;
    std::string to_table(bool include_l2 = false) const;
    std::string to_json() const;
};

using GeneratorFn = std::function<VideoVolume(const SegmentationMap&, uint64_t seed)>;

// The evaluation protocol: per condition, samples_per_condition samples
// with distinct derived seeds; SSIM/PSNR averaged over (sample, ground
// truth) pairs sharing the segmentation; FID over pooled frame features
// and FVD over pooled video features, generated vs real. Generator
// failures exclude the condition and are recorded on the row.
MetricRow evaluate_method(const GeneratorFn& generator, const std::string& method_name,
                          int step_t, const std::vector<LabeledVideo>& test_set,
                          int samples_per_condition, const FeatureExtractor& image_extractor,
                          const FeatureExtractor& video_extractor, uint64_t seed,
                          int threads = 1);

}  // namespace freecho
