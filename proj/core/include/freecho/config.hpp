#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "freecho/data.hpp"
#include "freecho/nn/unet3d.hpp"
#include "freecho/sampler.hpp"
#include "freecho/schedule.hpp"
#include "freecho/sinkhorn.hpp"
#include "freecho/training.hpp"

namespace freecho {

// Invalid configuration: CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SamplerSection {
    std::string solver    = "heun";
    int start_step        = 15;  // t_i, counted from the clean end
    double guidance_scale = 7.0;
    uint64_t seed         = 0;
};

struct PseudoSection {
    int bins                  = 64;
    double epsilon            = 1e-3;
    int max_iters             = 20000;
    double tol                = 1e-6;
    int hist_frames_per_video = 4;

    SinkhornOptions sinkhorn_options() const {
        SinkhornOptions o;
        o.epsilon   = epsilon;
        o.max_iters = max_iters;
        o.tol       = tol;
        return o;
    }
};

struct DataSection {
    std::string format      = "toy-container";
    int frames              = 24;  // K, first frames taken per video
    int height              = 128;
    int width               = 128;
    int num_labels          = 4;
    double motion_amplitude = 0.3;
    double speckle_scale    = 0.15;
    bool cone_mask          = true;
    int toy_num_videos      = 80;
    uint64_t toy_seed       = 0;
    double train_fraction   = 0.8;
    bool loop_short_videos  = false;

    ToyDatasetConfig toy_config() const;
};

struct EvalSection {
    int samples_per_condition = 10;
    bool report_l2            = false;
    uint64_t extractor_seed   = 17;
    int extractor_dim         = 64;
    int threads               = 1;
    bool preview              = false;  // animated GIF next to frame dumps
};

// The single config tree governing all modules. Defaults echo the paper
// values; the desk preset shrinks shapes for CPU-scale runs.
struct Config {
    NoiseSchedule schedule;
    UNet3DConfig model;
    TrainConfig training;
    SamplerSection sampler;
    PseudoSection pseudo;
    DataSection data;
    EvalSection eval;

    static Config defaults();
    static Config desk_preset();
    static Config from_json_text(const std::string& text);
    // file (optional) -> preset (optional) -> dotted --set overrides
    static Config load(const std::string& path, const std::string& preset,
                       const std::vector<std::pair<std::string, std::string>>& overrides);

    std::string to_json_text() const;
    void validate() const;
    Solver solver() const;
};

}  // namespace freecho
