#include "freecho/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "freecho/sampler.hpp"

namespace freecho {

LabelIntensityMap default_label_intensity_map(
    const std::vector<std::pair<int, std::string>>& label_set) {
    if (label_set.empty())
        throw std::invalid_argument("default_label_intensity_map: empty label set");
    std::vector<int> order;
    auto has = [&](int id) {
        for (const auto& [l, _] : label_set)
            if (l == id) return true;
        return false;
    };
    if (label_set.size() == 4 && has(0) && has(1) && has(2) && has(3)) {
        order = {0, 2, 3, 1};  // background, myocardium, la, lv
    } else {
        for (const auto& [l, _] : label_set) order.push_back(l);
        std::sort(order.begin(), order.end());
    }
    LabelIntensityMap map;
    const int n = static_cast<int>(order.size());
    for (int i = 0; i < n; ++i)
        map[order[static_cast<size_t>(i)]] = -1.0 + 2.0 * (i + 0.5) / n;
    return map;
}

Tensor labels_to_intensity(const SegmentationMap& m, const LabelIntensityMap& mapping) {
    m.validate();
    for (const auto& [l, _] : m.label_set)
        if (mapping.find(l) == mapping.end())
            throw std::invalid_argument("labels_to_intensity: no intensity for label " +
                                        std::to_string(l));
    Tensor img({m.height, m.width});
    for (int64_t i = 0; i < img.numel(); ++i) {
        const double v = mapping.at(m.labels[static_cast<size_t>(i)]);
        if (v < -1.0 || v > 1.0)
            throw std::invalid_argument("labels_to_intensity: intensity outside [-1,1]");
        img[i] = v;
    }
    return img;
}

IntensityHistogram dataset_intensity_histogram(const std::vector<VideoVolume>& dataset, int bins,
                                               int max_frames_per_video) {
    if (dataset.empty())
        throw std::invalid_argument("dataset_intensity_histogram: empty dataset");
    if (max_frames_per_video < 1)
        throw std::invalid_argument("dataset_intensity_histogram: need at least one frame");
    std::vector<double> pool;
    for (const VideoVolume& v : dataset) {
        const int K     = v.frames();
        const int take  = std::min(K, max_frames_per_video);
        const int64_t n = static_cast<int64_t>(v.height()) * v.width();
        // evenly spaced frame subsample
        for (int i = 0; i < take; ++i) {
            const int f = static_cast<int>(static_cast<int64_t>(i) * K / take);
            const double* p = v.pixels.data() + static_cast<int64_t>(f) * n;
            pool.insert(pool.end(), p, p + n);
        }
    }
    return make_histogram(pool.data(), static_cast<int64_t>(pool.size()), bins);
}

Tensor transport_remap(const Tensor& image, const TransportPlan& plan, int64_t* clamped) {
    const auto bary = plan.barycentric_map();
    const int bins  = plan.source.bins();
    // nearest source bin with mass, for out-of-support pixels
    auto nearest_massive = [&](int b) {
        for (int d = 0; d < bins; ++d) {
            if (b - d >= 0 && !std::isnan(bary[static_cast<size_t>(b - d)])) return b - d;
            if (b + d < bins && !std::isnan(bary[static_cast<size_t>(b + d)])) return b + d;
        }
        throw std::runtime_error("transport_remap: plan has no mass at all");
    };
    int64_t clamp_count = 0;
    Tensor out(image.shape());
    for (int64_t i = 0; i < image.numel(); ++i) {
        int b = bin_index(plan.source, image[i]);
        if (std::isnan(bary[static_cast<size_t>(b)])) {
            b = nearest_massive(b);
            ++clamp_count;
        }
        out[i] = bary[static_cast<size_t>(b)];
    }
    if (clamped != nullptr) *clamped = clamp_count;
    if (clamp_count > 0)
        std::fprintf(stderr,
                     "[freecho] transport_remap: %lld pixels outside plan support, "
                     "clamped to nearest source bin\n",
                     static_cast<long long>(clamp_count));
    return out;
}

namespace {

PseudoInit replicate_and_noise(Tensor image, Tensor intensity_image, int K,
                               const NoiseSchedule& schedule, int t_i, Rng& rng) {
    if (K < 1) throw std::invalid_argument("pseudo init: K must be >= 1");
    // t_i = 0 means no reverse steps: the init stays noise-free
    const double sigma = t_i == 0 ? 0.0 : sigma_at_step(schedule, t_i);
    const int H = image.dim(0), W = image.dim(1);
    const int64_t plane = static_cast<int64_t>(H) * W;

    PseudoInit init;
    init.pseudo.frames = Tensor({K, H, W});
    for (int f = 0; f < K; ++f)
        std::copy(image.data(), image.data() + plane, init.pseudo.frames.data() + f * plane);

    init.noisy = Tensor({K, H, W});
    for (int64_t i = 0; i < init.noisy.numel(); ++i)
        init.noisy[i] = init.pseudo.frames[i] + sigma * rng.normal();

    init.intensity_image = std::move(intensity_image);
    init.sigma           = sigma;
    return init;
}

}  // namespace

PseudoInit make_free_echo_init(const SegmentationMap& m, const LabelIntensityMap& mapping,
                               const IntensityHistogram& dataset_hist, int K,
                               const NoiseSchedule& schedule, int t_i, Rng& rng,
                               const SinkhornOptions& sinkhorn_options) {
    Tensor intensity = labels_to_intensity(m, mapping);
    IntensityHistogram src =
        make_histogram(intensity.data(), intensity.numel(), dataset_hist.bins(),
                       dataset_hist.bin_edges.front(), dataset_hist.bin_edges.back());
    TransportPlan plan = sinkhorn(src, dataset_hist, sinkhorn_options);
    Tensor remapped    = transport_remap(intensity, plan);
    PseudoInit init = replicate_and_noise(std::move(remapped), std::move(intensity), K, schedule,
                                          t_i, rng);
    init.plan = std::move(plan);
    return init;
}

PseudoInit make_sdedit_init(const SegmentationMap& m, const LabelIntensityMap& palette, int K,
                            const NoiseSchedule& schedule, int t_i, Rng& rng) {
    Tensor colorized = labels_to_intensity(m, palette);
    Tensor copy      = colorized;
    return replicate_and_noise(std::move(colorized), std::move(copy), K, schedule, t_i, rng);
}

}  // namespace freecho
