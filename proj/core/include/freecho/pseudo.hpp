#pragma once

#include <map>
#include <optional>

#include "freecho/data.hpp"
#include "freecho/schedule.hpp"
#include "freecho/sinkhorn.hpp"

namespace freecho {

using LabelIntensityMap = std::map<int, double>;

// Evenly spaced intensities in [-1,1], darkest = background; for the
// CAMUS-style 4-label set the order is background < myocardium <
// la_endocardium < lv_endocardium, otherwise ascending label id.
LabelIntensityMap default_label_intensity_map(
    const std::vector<std::pair<int, std::string>>& label_set);

// Pixelwise label -> intensity substitution; unmapped labels are an error.
Tensor labels_to_intensity(const SegmentationMap& m, const LabelIntensityMap& mapping);

// Pooled pixel histogram over a subsample of training frames.
IntensityHistogram dataset_intensity_histogram(const std::vector<VideoVolume>& dataset, int bins,
                                               int max_frames_per_video = 4);

// Barycentric remap: pixels in source bin j move to T(j). Out-of-support
// values clamp to the nearest source bin (count reported).
Tensor transport_remap(const Tensor& image, const TransportPlan& plan,
                       int64_t* clamped = nullptr);

// Static K-frame replication of an intensity image.
struct PseudoVideo {
    Tensor frames;  // (K,H,W), all frames identical
};

struct PseudoInit {
    PseudoVideo pseudo;      // clean pseudo-video (post remap / palette)
    Tensor intensity_image;  // label -> intensity image before any remap
    Tensor noisy;            // (K,H,W) init for the truncated reverse process
    double sigma = 0.0;      // noise level sigma(t_i) used
    std::optional<TransportPlan> plan;  // free-echo only
};

// label intensities -> Sinkhorn against the dataset histogram ->
// barycentric remap -> K-frame replication -> noise at sigma(t_i).
PseudoInit make_free_echo_init(const SegmentationMap& m, const LabelIntensityMap& mapping,
                               const IntensityHistogram& dataset_hist, int K,
                               const NoiseSchedule& schedule, int t_i, Rng& rng,
                               const SinkhornOptions& sinkhorn_options = {});

// Same pipeline with a fixed colorization palette and no transport remap.
PseudoInit make_sdedit_init(const SegmentationMap& m, const LabelIntensityMap& palette, int K,
                            const NoiseSchedule& schedule, int t_i, Rng& rng);

}  // namespace freecho
