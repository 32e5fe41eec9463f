#pragma once

#include <string>
#include <vector>

#include "freecho/denoiser.hpp"
#include "freecho/nn/graph.hpp"
#include "freecho/rng.hpp"
#include "freecho/tensor.hpp"

namespace freecho {

struct UNet3DConfig {
    int base_channels = 32;
    // multiplier per resolution level: entry 0 is the stem width, each
    // following entry the output width of one down block
    std::vector<int> channel_multipliers = {1, 2, 4, 8};
    int num_down_blocks   = 3;
    int num_middle_blocks = 2;
    int num_up_blocks     = 3;
    int in_channels       = 1;
    int frames = 24, height = 128, width = 128;
    bool with_condition_channel = false;
    int emb_dim = 0;  // 0 -> 4 * base_channels

    void validate() const;
    int levels() const { return num_down_blocks; }
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // persistent accumulator, zeroed by the optimizer
};

class ParamStore {
public:
    int add(std::string name, Tensor init);
    Parameter& operator[](int i) { return params_[static_cast<size_t>(i)]; }
    const Parameter& operator[](int i) const { return params_[static_cast<size_t>(i)]; }
    int size() const { return static_cast<int>(params_.size()); }
    int64_t total_count() const;
    int find(const std::string& name) const;  // -1 when absent
    void zero_grads();

private:
    std::vector<Parameter> params_;
};

// Scaled-down 3D UNet: per block Conv3D residual stage, spatial linear
// attention, temporal attention over same pixel position across frames, and
// a Conv3D (transposed on the up path) resampler. Skip connections run from
// each down block to the matching up block; the noise-level embedding is
// injected per residual stage. Frames are halved in down blocks 2..D, not
// in block 1.
class UNet3D : public RawNet {
public:
    UNet3D(UNet3DConfig config, Rng& rng);

    // inference path, thread-safe for concurrent calls
    Tensor forward(const Tensor& x, double c_noise, const Tensor* condition) const override;

    // training path: caller owns the tape, binds parameters once per pass
    std::vector<nn::Var> bind_params(nn::Tape& tape, bool requires_grad = true) const;
    nn::Var build_forward(nn::Tape& tape, nn::Var x, double c_noise, const Tensor* condition,
                          const std::vector<nn::Var>& params) const;

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    int64_t parameter_count() const { return store_.total_count(); }
    const UNet3DConfig& config() const { return config_; }

    // expected raw-input channel count (data channels + optional condition)
    int input_channels() const;

private:
    struct ConvP {
        int w = -1, b = -1;
        nn::Conv3dSpec spec;
    };
    struct TransP {
        int w = -1, b = -1;
        int sk = 1, sh = 2, sw = 2;
    };
    struct NormP {
        int gamma = -1, beta = -1;
        int groups = 1;
    };
    struct LinP {
        int w = -1, b = -1;
    };
    struct ResBlockP {
        NormP n1;
        ConvP c1;
        LinP emb;
        NormP n2;
        ConvP c2;  // zero-init
        ConvP skip;
        bool has_skip = false;
    };
    struct AttnP {
        NormP norm;
        ConvP q, k, v, out;  // 1x1x1; out zero-init
        int channels = 0;
    };
    struct DownP {
        ResBlockP res;
        AttnP sla, ta;
        ConvP down;
    };
    struct UpP {
        TransP up;
        ResBlockP res;
        AttnP sla, ta;
    };

    ConvP make_conv(Rng& rng, const std::string& name, int cin, int cout, int k,
                    nn::Conv3dSpec spec, bool zero_init = false);
    ConvP make_down_conv(Rng& rng, const std::string& name, int channels, int stride_k);
    TransP make_transpose(Rng& rng, const std::string& name, int cin, int cout, int sk, int sh,
                          int sw);
    NormP make_norm(const std::string& name, int channels, int groups);
    LinP make_linear(Rng& rng, const std::string& name, int in, int out, bool zero_init = false);
    ResBlockP make_resblock(Rng& rng, const std::string& name, int cin, int cout);
    AttnP make_attention(Rng& rng, const std::string& name, int channels);

    nn::Var apply_conv(nn::Tape& t, const std::vector<nn::Var>& p, const ConvP& c,
                       nn::Var x) const;
    nn::Var apply_resblock(nn::Tape& t, const std::vector<nn::Var>& p, const ResBlockP& r,
                           nn::Var x, nn::Var emb) const;
    nn::Var apply_spatial_linear_attention(nn::Tape& t, const std::vector<nn::Var>& p,
                                           const AttnP& a, nn::Var x) const;
    nn::Var apply_temporal_attention(nn::Tape& t, const std::vector<nn::Var>& p, const AttnP& a,
                                     nn::Var x) const;

    UNet3DConfig config_;
    ParamStore store_;
    int emb_dim_ = 0;

    ConvP init_conv_;
    LinP emb_l1_, emb_l2_;
    std::vector<DownP> downs_;
    std::vector<ResBlockP> mid_res_;
    std::vector<AttnP> mid_sla_, mid_ta_;
    std::vector<UpP> ups_;
    NormP final_norm_;
    ConvP final_conv_;  // zero-init
};

// Sinusoidal features of a scalar (even dim).
Tensor sinusoidal_embedding(double v, int dim);

}  // namespace freecho
