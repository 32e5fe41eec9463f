#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "freecho/rng.hpp"
#include "freecho/tensor.hpp"

namespace freecho {

// K x H x W single-channel video in normalized range [-1, 1].
struct VideoVolume {
    Tensor pixels;  // (K,H,W)
    double frame_rate = 30.0;
    std::string id;

    int frames() const { return pixels.dim(0); }
    int height() const { return pixels.dim(1); }
    int width() const { return pixels.dim(2); }
    void validate() const;
};

// H x W integer label raster plus the ordered label set.
struct SegmentationMap {
    int height = 0, width = 0;
    std::vector<int> labels;  // row-major H*W
    std::vector<std::pair<int, std::string>> label_set;

    int at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
    bool has_label(int id) const;
    void validate() const;
};

using LabeledVideo = std::pair<VideoVolume, SegmentationMap>;

// Synthetic "toy echo": a bright deforming ellipse (LV) inside a darker
// scan cone, contracting and re-expanding sinusoidally over K frames with
// multiplicative speckle. Frame 0 is end-diastole (maximal LV area).
// num_labels: 2 = background+LV (EchoNet-like), 4 = CAMUS-like
// (background, LV endocardium, myocardium, LA endocardium).
struct ToyDatasetConfig {
    int num_videos = 64;
    int frames = 8, height = 32, width = 32;
    int num_labels          = 4;
    double motion_amplitude = 0.3;
    double speckle_scale    = 0.15;
    bool cone_mask          = true;
    uint64_t seed           = 0;

    void validate() const;
};

std::vector<LabeledVideo> generate_toy_dataset(const ToyDatasetConfig& config);

enum class DatasetFormat { kToyContainer, kCamusLayout, kEchonetLayout };
DatasetFormat dataset_format_from_string(const std::string& s);

struct Dataset {
    std::vector<LabeledVideo> items;
    std::vector<std::string> rejects;  // manifest of skipped entries
    std::vector<std::string> train_ids, val_ids, test_ids;
};

// Directory-convention loaders; see README for the expected layouts.
Dataset load_dataset(const std::string& path, DatasetFormat format);
void save_toy_container(const std::string& path, const std::vector<LabeledVideo>& items,
                        double train_fraction = 0.75, double val_fraction = 0.0);

// First k frames; shorter videos are rejected unless loop is set, in which
// case indices wrap around.
VideoVolume take_first_frames(const VideoVolume& video, int k, bool loop = false);

enum class InputRange { kU8, kUnit };

// Affine map into [-1,1]; out-of-range inputs clamp (count returned).
int64_t normalize(Tensor& pixels, InputRange range);
// Inverse of the u8 normalization, rounding to the 8-bit grid.
std::vector<uint8_t> denormalize_u8(const Tensor& pixels);

// (K,H,W) -> (1,K,H,W) network input view.
Tensor to_model_input(const VideoVolume& video);

}  // namespace freecho
