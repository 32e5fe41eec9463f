#include "freecho/nn/unet3d.hpp"

#include <cmath>
#include <stdexcept>

namespace freecho {

using nn::Conv3dSpec;
using nn::Tape;
using nn::Var;

namespace {

int norm_groups(int channels) {
    for (int g = std::min(8, channels); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

}  // namespace

void UNet3DConfig::validate() const {
    if (base_channels < 1) throw std::invalid_argument("UNet3DConfig: base_channels must be >= 1");
    if (in_channels < 1) throw std::invalid_argument("UNet3DConfig: in_channels must be >= 1");
    if (channel_multipliers.size() < 2)
        throw std::invalid_argument("UNet3DConfig: need at least two channel multipliers");
    for (int m : channel_multipliers)
        if (m < 1) throw std::invalid_argument("UNet3DConfig: multipliers must be >= 1");
    const int d = static_cast<int>(channel_multipliers.size()) - 1;
    if (num_down_blocks != d)
        throw std::invalid_argument(
            "UNet3DConfig: num_down_blocks must equal channel_multipliers.size() - 1");
    if (num_up_blocks != num_down_blocks)
        throw std::invalid_argument("UNet3DConfig: num_up_blocks must equal num_down_blocks");
    if (num_middle_blocks < 1)
        throw std::invalid_argument("UNet3DConfig: num_middle_blocks must be >= 1");
    if (emb_dim < 0 || emb_dim % 2 != 0)
        throw std::invalid_argument("UNet3DConfig: emb_dim must be even");
    const int div_hw = 1 << num_down_blocks;
    const int div_k  = 1 << (num_down_blocks - 1);
    if (height % div_hw != 0 || width % div_hw != 0)
        throw std::invalid_argument("UNet3DConfig: height/width must be divisible by 2^depth");
    if (frames % div_k != 0)
        throw std::invalid_argument("UNet3DConfig: frames must be divisible by 2^(depth-1)");
    if (frames < 1) throw std::invalid_argument("UNet3DConfig: frames must be >= 1");
}

int ParamStore::add(std::string name, Tensor init) {
    Parameter p;
    p.name  = std::move(name);
    p.grad  = Tensor(init.shape());
    p.value = std::move(init);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

int64_t ParamStore::total_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

int ParamStore::find(const std::string& name) const {
    for (size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return static_cast<int>(i);
    return -1;
}

void ParamStore::zero_grads() {
    for (auto& p : params_)
        std::fill(p.grad.values().begin(), p.grad.values().end(), 0.0);
}

Tensor sinusoidal_embedding(double v, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embedding: dim must be even and >= 2");
    const int half = dim / 2;
    Tensor e({dim});
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / std::max(half - 1, 1));
        e[i]        = std::sin(v * freq);
        e[half + i] = std::cos(v * freq);
    }
    return e;
}

// ------------------------------------------------------------- construction

UNet3D::ConvP UNet3D::make_conv(Rng& rng, const std::string& name, int cin, int cout, int k,
                                Conv3dSpec spec, bool zero_init) {
    ConvP c;
    c.spec = spec;
    Tensor w({cout, cin, k, k, k});
    if (!zero_init) {
        const double std = 1.0 / std::sqrt(static_cast<double>(cin) * k * k * k);
        for (auto& v : w.values()) v = std * rng.normal();
    }
    c.w = store_.add(name + ".w", std::move(w));
    c.b = store_.add(name + ".b", Tensor({cout}));
    return c;
}

// strided resampling conv, kernel == stride per axis
UNet3D::ConvP UNet3D::make_down_conv(Rng& rng, const std::string& name, int channels,
                                     int stride_k) {
    ConvP c;
    c.spec = Conv3dSpec::down(stride_k, 2, 2);
    Tensor w({channels, channels, stride_k, 2, 2});
    const double std = 1.0 / std::sqrt(static_cast<double>(channels) * stride_k * 2 * 2);
    for (auto& v : w.values()) v = std * rng.normal();
    c.w = store_.add(name + ".w", std::move(w));
    c.b = store_.add(name + ".b", Tensor({channels}));
    return c;
}

UNet3D::TransP UNet3D::make_transpose(Rng& rng, const std::string& name, int cin, int cout, int sk,
                                      int sh, int sw) {
    TransP t;
    t.sk = sk;
    t.sh = sh;
    t.sw = sw;
    Tensor w({cin, cout, sk, sh, sw});
    const double std = 1.0 / std::sqrt(static_cast<double>(cin));
    for (auto& v : w.values()) v = std * rng.normal();
    t.w = store_.add(name + ".w", std::move(w));
    t.b = store_.add(name + ".b", Tensor({cout}));
    return t;
}

UNet3D::NormP UNet3D::make_norm(const std::string& name, int channels, int groups) {
    NormP n;
    n.groups = groups;
    n.gamma  = store_.add(name + ".gamma", Tensor({channels}, 1.0));
    n.beta   = store_.add(name + ".beta", Tensor({channels}));
    return n;
}

UNet3D::LinP UNet3D::make_linear(Rng& rng, const std::string& name, int in, int out,
                                 bool zero_init) {
    LinP l;
    Tensor w({out, in});
    if (!zero_init) {
        const double std = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& v : w.values()) v = std * rng.normal();
    }
    l.w = store_.add(name + ".w", std::move(w));
    l.b = store_.add(name + ".b", Tensor({out}));
    return l;
}

UNet3D::ResBlockP UNet3D::make_resblock(Rng& rng, const std::string& name, int cin, int cout) {
    ResBlockP r;
    r.n1  = make_norm(name + ".norm1", cin, norm_groups(cin));
    r.c1  = make_conv(rng, name + ".conv1", cin, cout, 3, Conv3dSpec::same3());
    r.emb = make_linear(rng, name + ".emb", emb_dim_, cout);
    r.n2  = make_norm(name + ".norm2", cout, norm_groups(cout));
    r.c2  = make_conv(rng, name + ".conv2", cout, cout, 3, Conv3dSpec::same3(), /*zero_init=*/true);
    if (cin != cout) {
        r.has_skip = true;
        r.skip     = make_conv(rng, name + ".skip", cin, cout, 1, Conv3dSpec{});
    }
    return r;
}

UNet3D::AttnP UNet3D::make_attention(Rng& rng, const std::string& name, int channels) {
    AttnP a;
    a.channels = channels;
    a.norm     = make_norm(name + ".norm", channels, 1);
    a.q        = make_conv(rng, name + ".q", channels, channels, 1, Conv3dSpec{});
    a.k        = make_conv(rng, name + ".k", channels, channels, 1, Conv3dSpec{});
    a.v        = make_conv(rng, name + ".v", channels, channels, 1, Conv3dSpec{});
    a.out      = make_conv(rng, name + ".out", channels, channels, 1, Conv3dSpec{}, true);
    return a;
}

UNet3D::UNet3D(UNet3DConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    emb_dim_ = config_.emb_dim > 0 ? config_.emb_dim : 4 * config_.base_channels;
    if (emb_dim_ % 2 != 0) ++emb_dim_;

    const int depth = config_.num_down_blocks;
    std::vector<int> ch(config_.channel_multipliers.size());
    for (size_t i = 0; i < ch.size(); ++i)
        ch[i] = config_.base_channels * config_.channel_multipliers[i];

    init_conv_ = make_conv(rng, "init_conv", input_channels(), ch[0], 3, Conv3dSpec::same3());
    emb_l1_    = make_linear(rng, "emb.l1", emb_dim_, emb_dim_);
    emb_l2_    = make_linear(rng, "emb.l2", emb_dim_, emb_dim_);

    for (int i = 1; i <= depth; ++i) {
        DownP d;
        const std::string base = "down" + std::to_string(i);
        d.res = make_resblock(rng, base + ".res", ch[static_cast<size_t>(i - 1)],
                              ch[static_cast<size_t>(i)]);
        d.sla = make_attention(rng, base + ".sla", ch[static_cast<size_t>(i)]);
        d.ta  = make_attention(rng, base + ".ta", ch[static_cast<size_t>(i)]);
        const int sk = i == 1 ? 1 : 2;  // frames halved from block 2 on
        d.down = make_down_conv(rng, base + ".down", ch[static_cast<size_t>(i)], sk);
        downs_.push_back(std::move(d));
    }

    for (int j = 0; j < config_.num_middle_blocks; ++j) {
        const std::string base = "mid" + std::to_string(j + 1);
        mid_res_.push_back(
            make_resblock(rng, base + ".res", ch.back(), ch.back()));
        mid_sla_.push_back(make_attention(rng, base + ".sla", ch.back()));
        mid_ta_.push_back(make_attention(rng, base + ".ta", ch.back()));
    }

    for (int i = depth; i >= 1; --i) {
        UpP u;
        const std::string base = "up" + std::to_string(depth - i + 1);
        const int sk           = i == 1 ? 1 : 2;
        u.up = make_transpose(rng, base + ".up", ch[static_cast<size_t>(i)],
                              ch[static_cast<size_t>(i)], sk, 2, 2);
        u.res = make_resblock(rng, base + ".res", 2 * ch[static_cast<size_t>(i)],
                              ch[static_cast<size_t>(i - 1)]);
        u.sla = make_attention(rng, base + ".sla", ch[static_cast<size_t>(i - 1)]);
        u.ta  = make_attention(rng, base + ".ta", ch[static_cast<size_t>(i - 1)]);
        ups_.push_back(std::move(u));
    }

    final_norm_ = make_norm("final.norm", ch[0], norm_groups(ch[0]));
    final_conv_ = make_conv(rng, "final.conv", ch[0], config_.in_channels, 3,
                            Conv3dSpec::same3(), /*zero_init=*/true);
}

int UNet3D::input_channels() const {
    return config_.in_channels + (config_.with_condition_channel ? 1 : 0);
}

// ------------------------------------------------------------------ forward

std::vector<Var> UNet3D::bind_params(Tape& tape, bool requires_grad) const {
    std::vector<Var> vars;
    vars.reserve(static_cast<size_t>(store_.size()));
    for (int i = 0; i < store_.size(); ++i)
        vars.push_back(tape.leaf(store_[i].value, requires_grad));
    return vars;
}

Var UNet3D::apply_conv(Tape& t, const std::vector<Var>& p, const ConvP& c, Var x) const {
    return t.conv3d(x, p[static_cast<size_t>(c.w)], p[static_cast<size_t>(c.b)], c.spec);
}

Var UNet3D::apply_resblock(Tape& t, const std::vector<Var>& p, const ResBlockP& r, Var x,
                           Var emb) const {
    Var h = t.group_norm(x, p[static_cast<size_t>(r.n1.gamma)], p[static_cast<size_t>(r.n1.beta)],
                         r.n1.groups);
    h = t.silu(h);
    h = apply_conv(t, p, r.c1, h);
    Var e = t.linear(emb, p[static_cast<size_t>(r.emb.w)], p[static_cast<size_t>(r.emb.b)]);
    h     = t.add_channel_bias(h, e);
    h = t.group_norm(h, p[static_cast<size_t>(r.n2.gamma)], p[static_cast<size_t>(r.n2.beta)],
                     r.n2.groups);
    h = t.silu(h);
    h = apply_conv(t, p, r.c2, h);
    Var skip = r.has_skip ? apply_conv(t, p, r.skip, x) : x;
    return t.add(h, skip);
}

Var UNet3D::apply_spatial_linear_attention(Tape& t, const std::vector<Var>& p, const AttnP& a,
                                           Var x) const {
    const auto& s = x.value().shape();
    const int C = s[0], K = s[1], H = s[2], W = s[3];
    Var xn = t.group_norm(x, p[static_cast<size_t>(a.norm.gamma)],
                          p[static_cast<size_t>(a.norm.beta)], a.norm.groups);
    Var q = apply_conv(t, p, a.q, xn);
    Var k = apply_conv(t, p, a.k, xn);
    Var v = apply_conv(t, p, a.v, xn);

    auto frames_first = [&](Var z) {
        return t.reshape(t.permute4(z, {1, 0, 2, 3}), {K, C, H * W});
    };
    q = frames_first(q);  // (K,C,N)
    k = frames_first(k);
    v = frames_first(v);

    // efficient attention: q soft over channels, k soft over positions
    q = t.transpose12(t.softmax_lastdim(t.transpose12(q)));
    q = t.scale(q, 1.0 / std::sqrt(static_cast<double>(C)));
    k = t.softmax_lastdim(k);

    Var context = t.bmm(k, t.transpose12(v));           // (K,C,C)
    Var out     = t.bmm(t.transpose12(context), q);     // (K,C,N)
    out = t.permute4(t.reshape(out, {K, C, H, W}), {1, 0, 2, 3});
    out = apply_conv(t, p, a.out, out);
    return t.add(x, out);
}

Var UNet3D::apply_temporal_attention(Tape& t, const std::vector<Var>& p, const AttnP& a,
                                     Var x) const {
    const auto& s = x.value().shape();
    const int C = s[0], K = s[1], H = s[2], W = s[3];
    Var xn = t.group_norm(x, p[static_cast<size_t>(a.norm.gamma)],
                          p[static_cast<size_t>(a.norm.beta)], a.norm.groups);
    Var q = apply_conv(t, p, a.q, xn);
    Var k = apply_conv(t, p, a.k, xn);
    Var v = apply_conv(t, p, a.v, xn);

    auto pixels_first = [&](Var z) {
        return t.reshape(t.permute4(z, {2, 3, 1, 0}), {H * W, K, C});
    };
    q = pixels_first(q);
    k = pixels_first(k);
    v = pixels_first(v);

    q        = t.scale(q, 1.0 / std::sqrt(static_cast<double>(C)));
    Var attn = t.softmax_lastdim(t.bmm(q, t.transpose12(k)));  // (N,K,K)
    Var out  = t.bmm(attn, v);                                 // (N,K,C)
    out      = t.permute4(t.reshape(out, {H, W, K, C}), {3, 2, 0, 1});
    out      = apply_conv(t, p, a.out, out);
    return t.add(x, out);
}

Var UNet3D::build_forward(Tape& t, Var x, double c_noise, const Tensor* condition,
                          const std::vector<Var>& p) const {
    const auto& xs = x.value().shape();
    if (xs.size() != 4 || xs[0] != config_.in_channels)
        throw std::invalid_argument("UNet3D: input must be (in_channels,K,H,W), got " +
                                    Tensor::shape_str(xs));
    if (xs[1] != config_.frames || xs[2] != config_.height || xs[3] != config_.width)
        throw std::invalid_argument("UNet3D: input dims " + Tensor::shape_str(xs) +
                                    " do not match configured frames/height/width");
    if (condition != nullptr && !config_.with_condition_channel)
        throw std::invalid_argument("UNet3D: condition passed to a model without condition channel");

    if (config_.with_condition_channel) {
        Tensor cond_ch({1, xs[1], xs[2], xs[3]});
        if (condition != nullptr) {
            if (condition->numel() != cond_ch.numel())
                throw std::invalid_argument("UNet3D: condition shape mismatch");
            std::copy(condition->data(), condition->data() + condition->numel(), cond_ch.data());
        }
        x = t.concat_channels(x, t.leaf(std::move(cond_ch)));
    }

    Var emb = t.leaf(sinusoidal_embedding(c_noise, emb_dim_));
    emb = t.linear(emb, p[static_cast<size_t>(emb_l1_.w)], p[static_cast<size_t>(emb_l1_.b)]);
    emb = t.silu(emb);
    emb = t.linear(emb, p[static_cast<size_t>(emb_l2_.w)], p[static_cast<size_t>(emb_l2_.b)]);

    Var h = apply_conv(t, p, init_conv_, x);

    std::vector<Var> skips;
    for (const auto& d : downs_) {
        h = apply_resblock(t, p, d.res, h, emb);
        h = apply_spatial_linear_attention(t, p, d.sla, h);
        h = apply_temporal_attention(t, p, d.ta, h);
        skips.push_back(h);
        h = apply_conv(t, p, d.down, h);
    }

    for (size_t j = 0; j < mid_res_.size(); ++j) {
        h = apply_resblock(t, p, mid_res_[j], h, emb);
        h = apply_spatial_linear_attention(t, p, mid_sla_[j], h);
        h = apply_temporal_attention(t, p, mid_ta_[j], h);
    }

    for (size_t i = 0; i < ups_.size(); ++i) {
        const UpP& u = ups_[i];
        h = t.conv_transpose3d(h, p[static_cast<size_t>(u.up.w)], p[static_cast<size_t>(u.up.b)],
                               u.up.sk, u.up.sh, u.up.sw);
        h = t.concat_channels(h, skips[skips.size() - 1 - i]);
        h = apply_resblock(t, p, u.res, h, emb);
        h = apply_spatial_linear_attention(t, p, u.sla, h);
        h = apply_temporal_attention(t, p, u.ta, h);
    }

    h = t.group_norm(h, p[static_cast<size_t>(final_norm_.gamma)],
                     p[static_cast<size_t>(final_norm_.beta)], final_norm_.groups);
    h = t.silu(h);
    h = apply_conv(t, p, final_conv_, h);
    return h;
}

Tensor UNet3D::forward(const Tensor& x, double c_noise, const Tensor* condition) const {
    Tape tape;
    tape.set_recording(false);
    auto params = bind_params(tape, /*requires_grad=*/false);
    Var out     = build_forward(tape, tape.leaf(x), c_noise, condition, params);
    return out.value();
}

}  // namespace freecho
