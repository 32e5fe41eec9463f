#include "freecho/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace freecho::nn {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.value         = std::move(value);
    n.requires_grad = requires_grad && recording_;
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::add_grad(int id, const Tensor& g) {
    Tensor& buf = grad_buf(id);
    check_same_shape(buf, g, "Tape::add_grad");
    double* d       = buf.data();
    const double* s = g.data();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

void Tape::backward(Var loss, double seed) {
    if (!recording_) throw std::logic_error("Tape::backward: tape is not recording");
    if (loss.value().numel() != 1)
        throw std::invalid_argument("Tape::backward: loss must be a scalar");
    grad_buf(loss.id)[0] += seed;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.requires_grad && n.backprop && !n.grad.empty()) n.backprop(*this);
    }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad, {});
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "add");
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po       = out.data();
    const int64_t n  = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    bool rg = requires_grad(a.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [aid, bid, oid](Tape& t) {
            const Tensor& g = t.grad(oid);
            if (t.requires_grad(aid)) t.add_grad(aid, g);
            if (t.requires_grad(bid)) t.add_grad(bid, g);
        };
    }
    return v;
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po       = out.data();
    const int64_t n  = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    bool rg = requires_grad(a.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [aid, bid, oid](Tape& t) {
            const Tensor& g = t.grad(oid);
            if (t.requires_grad(aid)) t.add_grad(aid, g);
            if (t.requires_grad(bid)) {
                Tensor neg(g.shape());
                const double* s = g.data();
                double* d       = neg.data();
                for (int64_t i = 0; i < g.numel(); ++i) d[i] = -s[i];
                t.add_grad(bid, neg);
            }
        };
    }
    return v;
}

Var Tape::scale(Var a, double s) {
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po       = out.data();
    const int64_t n  = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = s * pa[i];
    Var v = push(std::move(out), requires_grad(a.id), {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, oid = v.id;
        nodes_.back().backprop = [aid, oid, s](Tape& t) {
            const Tensor& g = t.grad(oid);
            Tensor gs(g.shape());
            const double* src = g.data();
            double* dst       = gs.data();
            for (int64_t i = 0; i < g.numel(); ++i) dst[i] = s * src[i];
            t.add_grad(aid, gs);
        };
    }
    return v;
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po       = out.data();
    const int64_t n  = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    bool rg = requires_grad(a.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [aid, bid, oid](Tape& t) {
            const Tensor& g  = t.grad(oid);
            const Tensor& va = t.value(aid);
            const Tensor& vb = t.value(bid);
            const int64_t m  = g.numel();
            if (t.requires_grad(aid)) {
                Tensor ga(g.shape());
                for (int64_t i = 0; i < m; ++i) ga[i] = g[i] * vb[i];
                t.add_grad(aid, ga);
            }
            if (t.requires_grad(bid)) {
                Tensor gb(g.shape());
                for (int64_t i = 0; i < m; ++i) gb[i] = g[i] * va[i];
                t.add_grad(bid, gb);
            }
        };
    }
    return v;
}

Var Tape::silu(Var a) {
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po       = out.data();
    const int64_t n  = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-pa[i]));
        po[i]    = pa[i] * s;
    }
    Var v = push(std::move(out), requires_grad(a.id), {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, oid = v.id;
        nodes_.back().backprop = [aid, oid](Tape& t) {
            const Tensor& g = t.grad(oid);
            const Tensor& x = t.value(aid);
            Tensor gx(g.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
                double s = 1.0 / (1.0 + std::exp(-x[i]));
                gx[i]    = g[i] * s * (1.0 + x[i] * (1.0 - s));
            }
            t.add_grad(aid, gx);
        };
    }
    return v;
}

Var Tape::add_channel_bias(Var x, Var bias) {
    const auto& xs = x.value().shape();
    if (xs.size() != 4) throw std::invalid_argument("add_channel_bias: x must be 4-d");
    if (bias.value().ndim() != 1 || bias.value().dim(0) != xs[0])
        throw std::invalid_argument("add_channel_bias: bias must be (C)");
    const int C        = xs[0];
    const int64_t plane = static_cast<int64_t>(xs[1]) * xs[2] * xs[3];
    Tensor out(xs);
    const double* px = x.value().data();
    const double* pb = bias.value().data();
    double* po       = out.data();
    for (int c = 0; c < C; ++c) {
        double bc = pb[c];
        for (int64_t i = 0; i < plane; ++i) po[c * plane + i] = px[c * plane + i] + bc;
    }
    bool rg = requires_grad(x.id) || requires_grad(bias.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int xid = x.id, bid = bias.id, oid = v.id;
        nodes_.back().backprop = [xid, bid, oid, C, plane](Tape& t) {
            const Tensor& g = t.grad(oid);
            if (t.requires_grad(xid)) t.add_grad(xid, g);
            if (t.requires_grad(bid)) {
                Tensor gb({C});
                for (int c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (int64_t i = 0; i < plane; ++i) s += g[c * plane + i];
                    gb[c] = s;
                }
                t.add_grad(bid, gb);
            }
        };
    }
    return v;
}

// -------------------------------------------------------------------- shape

Var Tape::reshape(Var a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(shape);
    Var v      = push(std::move(out), requires_grad(a.id), {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, oid = v.id;
        nodes_.back().backprop = [aid, oid](Tape& t) {
            t.add_grad(aid, t.grad(oid).reshaped(t.value(aid).shape()));
        };
    }
    return v;
}

namespace {

Tensor permute4_apply(const Tensor& x, const std::array<int, 4>& order) {
    const auto& s = x.shape();
    std::vector<int> os = {s[static_cast<size_t>(order[0])], s[static_cast<size_t>(order[1])],
                           s[static_cast<size_t>(order[2])], s[static_cast<size_t>(order[3])]};
    Tensor out(os);
    int64_t stride[4];
    stride[3] = 1;
    stride[2] = s[3];
    stride[1] = static_cast<int64_t>(s[2]) * s[3];
    stride[0] = static_cast<int64_t>(s[1]) * s[2] * s[3];
    int64_t src_stride[4] = {stride[order[0]], stride[order[1]], stride[order[2]],
                             stride[order[3]]};
    const double* px = x.data();
    double* po       = out.data();
    int64_t idx      = 0;
    for (int i0 = 0; i0 < os[0]; ++i0)
        for (int i1 = 0; i1 < os[1]; ++i1)
            for (int i2 = 0; i2 < os[2]; ++i2) {
                int64_t base = i0 * src_stride[0] + i1 * src_stride[1] + i2 * src_stride[2];
                for (int i3 = 0; i3 < os[3]; ++i3)
                    po[idx++] = px[base + i3 * src_stride[3]];
            }
    return out;
}

std::array<int, 4> inverse_order(const std::array<int, 4>& order) {
    std::array<int, 4> inv{};
    for (int i = 0; i < 4; ++i) inv[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;
    return inv;
}

}  // namespace

Var Tape::permute4(Var a, std::array<int, 4> order) {
    if (a.value().ndim() != 4) throw std::invalid_argument("permute4: tensor must be 4-d");
    Tensor out = permute4_apply(a.value(), order);
    Var v      = push(std::move(out), requires_grad(a.id), {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, oid = v.id;
        auto inv               = inverse_order(order);
        nodes_.back().backprop = [aid, oid, inv](Tape& t) {
            t.add_grad(aid, permute4_apply(t.grad(oid), inv));
        };
    }
    return v;
}

Var Tape::concat_channels(Var a, Var b) {
    const auto& sa = a.value().shape();
    const auto& sb = b.value().shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[1] != sb[1] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: incompatible shapes");
    Tensor out({sa[0] + sb[0], sa[1], sa[2], sa[3]});
    const int64_t na = a.value().numel();
    const int64_t nb = b.value().numel();
    std::copy(a.value().data(), a.value().data() + na, out.data());
    std::copy(b.value().data(), b.value().data() + nb, out.data() + na);
    bool rg = requires_grad(a.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [aid, bid, oid, na, nb](Tape& t) {
            const Tensor& g = t.grad(oid);
            if (t.requires_grad(aid)) {
                Tensor ga(t.value(aid).shape());
                std::copy(g.data(), g.data() + na, ga.data());
                t.add_grad(aid, ga);
            }
            if (t.requires_grad(bid)) {
                Tensor gb(t.value(bid).shape());
                std::copy(g.data() + na, g.data() + na + nb, gb.data());
                t.add_grad(bid, gb);
            }
        };
    }
    return v;
}

// -------------------------------------------------------------------- dense

Var Tape::linear(Var x, Var w, Var b) {
    const auto& xs = x.value().shape();
    const auto& ws = w.value().shape();
    if (xs.size() != 1 || ws.size() != 2 || ws[1] != xs[0] || b.value().dim(0) != ws[0])
        throw std::invalid_argument("linear: expected x (N), w (M,N), b (M)");
    const int M = ws[0], N = ws[1];
    Tensor out({M});
    const double* px = x.value().data();
    const double* pw = w.value().data();
    const double* pb = b.value().data();
    for (int m = 0; m < M; ++m) {
        double s = pb[m];
        for (int n = 0; n < N; ++n) s += pw[m * N + n] * px[n];
        out[m] = s;
    }
    bool rg = requires_grad(x.id) || requires_grad(w.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int xid = x.id, wid = w.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [xid, wid, bid, oid, M, N](Tape& t) {
            const Tensor& g  = t.grad(oid);
            const Tensor& xv = t.value(xid);
            const Tensor& wv = t.value(wid);
            if (t.requires_grad(xid)) {
                Tensor gx({N});
                for (int n = 0; n < N; ++n) {
                    double s = 0.0;
                    for (int m = 0; m < M; ++m) s += wv[m * N + n] * g[m];
                    gx[n] = s;
                }
                t.add_grad(xid, gx);
            }
            if (t.requires_grad(wid)) {
                Tensor gw({M, N});
                for (int m = 0; m < M; ++m)
                    for (int n = 0; n < N; ++n) gw[m * N + n] = g[m] * xv[n];
                t.add_grad(wid, gw);
            }
            if (t.requires_grad(bid)) t.add_grad(bid, g);
        };
    }
    return v;
}

// ----------------------------------------------------------- batched matrices

Var Tape::bmm(Var a, Var b) {
    const auto& sa = a.value().shape();
    const auto& sb = b.value().shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
        throw std::invalid_argument("bmm: expected (B,M,K)x(B,K,N)");
    const int B = sa[0], M = sa[1], K = sa[2], N = sb[2];
    Tensor out({B, M, N});
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po       = out.data();
    for (int bb = 0; bb < B; ++bb) {
        const double* A = pa + static_cast<int64_t>(bb) * M * K;
        const double* Bm = pb + static_cast<int64_t>(bb) * K * N;
        double* O        = po + static_cast<int64_t>(bb) * M * N;
        for (int m = 0; m < M; ++m) {
            for (int n = 0; n < N; ++n) O[m * N + n] = 0.0;
            for (int k = 0; k < K; ++k) {
                double av = A[m * K + k];
                if (av == 0.0) continue;
                const double* Br = Bm + k * N;
                double* Orow     = O + m * N;
                for (int n = 0; n < N; ++n) Orow[n] += av * Br[n];
            }
        }
    }
    bool rg = requires_grad(a.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [aid, bid, oid, B, M, K, N](Tape& t) {
            const Tensor& g  = t.grad(oid);
            const Tensor& av = t.value(aid);
            const Tensor& bv = t.value(bid);
            if (t.requires_grad(aid)) {
                // dA = dC * B^T
                Tensor ga({B, M, K});
                for (int bb = 0; bb < B; ++bb) {
                    const double* G  = g.data() + static_cast<int64_t>(bb) * M * N;
                    const double* Bm = bv.data() + static_cast<int64_t>(bb) * K * N;
                    double* GA       = ga.data() + static_cast<int64_t>(bb) * M * K;
                    for (int m = 0; m < M; ++m)
                        for (int k = 0; k < K; ++k) {
                            double s = 0.0;
                            for (int n = 0; n < N; ++n) s += G[m * N + n] * Bm[k * N + n];
                            GA[m * K + k] = s;
                        }
                }
                t.add_grad(aid, ga);
            }
            if (t.requires_grad(bid)) {
                // dB = A^T * dC
                Tensor gb({B, K, N});
                for (int bb = 0; bb < B; ++bb) {
                    const double* G = g.data() + static_cast<int64_t>(bb) * M * N;
                    const double* A = av.data() + static_cast<int64_t>(bb) * M * K;
                    double* GB      = gb.data() + static_cast<int64_t>(bb) * K * N;
                    for (int k = 0; k < K; ++k)
                        for (int n = 0; n < N; ++n) {
                            double s = 0.0;
                            for (int m = 0; m < M; ++m) s += A[m * K + k] * G[m * N + n];
                            GB[k * N + n] = s;
                        }
                }
                t.add_grad(bid, gb);
            }
        };
    }
    return v;
}

namespace {

Tensor transpose12_apply(const Tensor& x) {
    const auto& s = x.shape();
    Tensor out({s[0], s[2], s[1]});
    const int B = s[0], M = s[1], N = s[2];
    const double* px = x.data();
    double* po       = out.data();
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m)
            for (int n = 0; n < N; ++n)
                po[static_cast<int64_t>(b) * N * M + static_cast<int64_t>(n) * M + m] =
                    px[static_cast<int64_t>(b) * M * N + static_cast<int64_t>(m) * N + n];
    return out;
}

}  // namespace

Var Tape::transpose12(Var a) {
    if (a.value().ndim() != 3) throw std::invalid_argument("transpose12: tensor must be 3-d");
    Tensor out = transpose12_apply(a.value());
    Var v      = push(std::move(out), requires_grad(a.id), {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, oid = v.id;
        nodes_.back().backprop = [aid, oid](Tape& t) {
            t.add_grad(aid, transpose12_apply(t.grad(oid)));
        };
    }
    return v;
}

Var Tape::softmax_lastdim(Var a) {
    if (a.value().ndim() != 3) throw std::invalid_argument("softmax_lastdim: tensor must be 3-d");
    const auto& s = a.value().shape();
    const int64_t rows = static_cast<int64_t>(s[0]) * s[1];
    const int N        = s[2];
    Tensor out(s);
    const double* px = a.value().data();
    double* po       = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * N;
        double* yr       = po + r * N;
        double mx        = xr[0];
        for (int n = 1; n < N; ++n) mx = std::max(mx, xr[n]);
        double sum = 0.0;
        for (int n = 0; n < N; ++n) {
            yr[n] = std::exp(xr[n] - mx);
            sum += yr[n];
        }
        double inv = 1.0 / sum;
        for (int n = 0; n < N; ++n) yr[n] *= inv;
    }
    Var v = push(std::move(out), requires_grad(a.id), {});
    if (v.tape->requires_grad(v.id)) {
        int aid = a.id, oid = v.id;
        nodes_.back().backprop = [aid, oid, rows, N](Tape& t) {
            const Tensor& g = t.grad(oid);
            const Tensor& y = t.value(oid);
            Tensor gx(y.shape());
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * N;
                const double* yr = y.data() + r * N;
                double dot       = 0.0;
                for (int n = 0; n < N; ++n) dot += gr[n] * yr[n];
                double* gxr = gx.data() + r * N;
                for (int n = 0; n < N; ++n) gxr[n] = yr[n] * (gr[n] - dot);
            }
            t.add_grad(aid, gx);
        };
    }
    return v;
}

// -------------------------------------------------------------- convolution

namespace kernels {

std::vector<int> conv3d_out_shape(const std::vector<int>& xs, const std::vector<int>& ws,
                                  const Conv3dSpec& spec) {
    auto out_dim = [](int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; };
    return {ws[0], out_dim(xs[1], ws[2], spec.stride_k, spec.pad_k),
            out_dim(xs[2], ws[3], spec.stride_h, spec.pad_h),
            out_dim(xs[3], ws[4], spec.stride_w, spec.pad_w)};
}

void conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& b, const Conv3dSpec& spec,
                    Tensor& out) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const int Cin = xs[0], K = xs[1], H = xs[2], W = xs[3];
    const int Cout = ws[0], kk = ws[2], kh = ws[3], kw = ws[4];
    const auto os = conv3d_out_shape(xs, ws, spec);
    const int OK = os[1], OH = os[2], OW = os[3];
    if (OK <= 0 || OH <= 0 || OW <= 0)
        throw std::invalid_argument("conv3d: output would be empty for input " +
                                    Tensor::shape_str(xs));
    out = Tensor(os);

    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.data();
    double* po       = out.data();

#pragma omp parallel for schedule(static)
    for (int co = 0; co < Cout; ++co) {
        const double* wc = pw + static_cast<int64_t>(co) * Cin * kk * kh * kw;
        double* oc       = po + static_cast<int64_t>(co) * OK * OH * OW;
        for (int ok = 0; ok < OK; ++ok)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc   = pb[co];
                    const int ik0 = ok * spec.stride_k - spec.pad_k;
                    const int ih0 = oh * spec.stride_h - spec.pad_h;
                    const int iw0 = ow * spec.stride_w - spec.pad_w;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double* xc = px + static_cast<int64_t>(ci) * K * H * W;
                        const double* wk = wc + static_cast<int64_t>(ci) * kk * kh * kw;
                        for (int dk = 0; dk < kk; ++dk) {
                            const int ik = ik0 + dk;
                            if (ik < 0 || ik >= K) continue;
                            for (int dh = 0; dh < kh; ++dh) {
                                const int ih = ih0 + dh;
                                if (ih < 0 || ih >= H) continue;
                                const double* xrow = xc + (static_cast<int64_t>(ik) * H + ih) * W;
                                const double* wrow = wk + (static_cast<int64_t>(dk) * kh + dh) * kw;
                                for (int dw = 0; dw < kw; ++dw) {
                                    const int iw = iw0 + dw;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += xrow[iw] * wrow[dw];
                                }
                            }
                        }
                    }
                    oc[(static_cast<int64_t>(ok) * OH + oh) * OW + ow] = acc;
                }
    }
}

void conv3d_backward(const Tensor& x, const Tensor& w, const Conv3dSpec& spec, const Tensor& gout,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const int Cin = xs[0], K = xs[1], H = xs[2], W = xs[3];
    const int Cout = ws[0], kk = ws[2], kh = ws[3], kw = ws[4];
    const auto& os = gout.shape();
    const int OK = os[1], OH = os[2], OW = os[3];
    const double* pg = gout.data();
    const double* px = x.data();
    const double* pw = w.data();

    if (gx) {
        *gx = Tensor(xs);
        double* pgx = gx->data();
        // gather form: every input voxel collects from the outputs it fed
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < Cin; ++ci) {
            double* gc = pgx + static_cast<int64_t>(ci) * K * H * W;
            for (int ik = 0; ik < K; ++ik)
                for (int ih = 0; ih < H; ++ih)
                    for (int iw = 0; iw < W; ++iw) {
                        double acc = 0.0;
                        for (int dk = 0; dk < kk; ++dk) {
                            const int t = ik + spec.pad_k - dk;
                            if (t % spec.stride_k != 0) continue;
                            const int ok = t / spec.stride_k;
                            if (ok < 0 || ok >= OK) continue;
                            for (int dh = 0; dh < kh; ++dh) {
                                const int u = ih + spec.pad_h - dh;
                                if (u % spec.stride_h != 0) continue;
                                const int oh = u / spec.stride_h;
                                if (oh < 0 || oh >= OH) continue;
                                for (int dw = 0; dw < kw; ++dw) {
                                    const int v = iw + spec.pad_w - dw;
                                    if (v % spec.stride_w != 0) continue;
                                    const int ow = v / spec.stride_w;
                                    if (ow < 0 || ow >= OW) continue;
                                    for (int co = 0; co < Cout; ++co) {
                                        const double gv =
                                            pg[((static_cast<int64_t>(co) * OK + ok) * OH + oh) *
                                                   OW +
                                               ow];
                                        const double wv =
                                            pw[(((static_cast<int64_t>(co) * Cin + ci) * kk + dk) *
                                                    kh +
                                                dh) *
                                                   kw +
                                               dw];
                                        acc += gv * wv;
                                    }
                                }
                            }
                        }
                        gc[(static_cast<int64_t>(ik) * H + ih) * W + iw] = acc;
                    }
        }
    }

    if (gw) {
        *gw = Tensor(ws);
        double* pgw = gw->data();
#pragma omp parallel for schedule(static)
        for (int co = 0; co < Cout; ++co) {
            const double* gc = pg + static_cast<int64_t>(co) * OK * OH * OW;
            for (int ci = 0; ci < Cin; ++ci) {
                const double* xc = px + static_cast<int64_t>(ci) * K * H * W;
                for (int dk = 0; dk < kk; ++dk)
                    for (int dh = 0; dh < kh; ++dh)
                        for (int dw = 0; dw < kw; ++dw) {
                            double acc = 0.0;
                            for (int ok = 0; ok < OK; ++ok) {
                                const int ik = ok * spec.stride_k - spec.pad_k + dk;
                                if (ik < 0 || ik >= K) continue;
                                for (int oh = 0; oh < OH; ++oh) {
                                    const int ih = oh * spec.stride_h - spec.pad_h + dh;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int ow = 0; ow < OW; ++ow) {
                                        const int iw = ow * spec.stride_w - spec.pad_w + dw;
                                        if (iw < 0 || iw >= W) continue;
                                        acc += gc[(static_cast<int64_t>(ok) * OH + oh) * OW + ow] *
                                               xc[(static_cast<int64_t>(ik) * H + ih) * W + iw];
                                    }
                                }
                            }
                            pgw[(((static_cast<int64_t>(co) * Cin + ci) * kk + dk) * kh + dh) *
                                    kw +
                                dw] = acc;
                        }
            }
        }
    }

    if (gb) {
        *gb = Tensor({Cout});
        double* pgb = gb->data();
        for (int co = 0; co < Cout; ++co) {
            const double* gc = pg + static_cast<int64_t>(co) * OK * OH * OW;
            double acc       = 0.0;
            const int64_t n  = static_cast<int64_t>(OK) * OH * OW;
            for (int64_t i = 0; i < n; ++i) acc += gc[i];
            pgb[co] = acc;
        }
    }
}

void conv_transpose3d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int sk, int sh,
                              int sw, Tensor& out) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const int Cin = xs[0], K = xs[1], H = xs[2], W = xs[3];
    const int Cout = ws[1];
    if (ws[0] != Cin || ws[2] != sk || ws[3] != sh || ws[4] != sw)
        throw std::invalid_argument("conv_transpose3d: weight must be (Cin,Cout,sk,sh,sw)");
    const int OK = K * sk, OH = H * sh, OW = W * sw;
    out = Tensor({Cout, OK, OH, OW});
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.data();
    double* po       = out.data();

    // kernel == stride, so each output voxel reads exactly one input voxel
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Cout; ++co) {
        double* oc = po + static_cast<int64_t>(co) * OK * OH * OW;
        for (int ok = 0; ok < OK; ++ok) {
            const int ik = ok / sk, dk = ok % sk;
            for (int oh = 0; oh < OH; ++oh) {
                const int ih = oh / sh, dh = oh % sh;
                for (int ow = 0; ow < OW; ++ow) {
                    const int iw = ow / sw, dw = ow % sw;
                    double acc = pb[co];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double xv =
                            px[((static_cast<int64_t>(ci) * K + ik) * H + ih) * W + iw];
                        const double wv =
                            pw[(((static_cast<int64_t>(ci) * Cout + co) * sk + dk) * sh + dh) *
                                   sw +
                               dw];
                        acc += xv * wv;
                    }
                    oc[(static_cast<int64_t>(ok) * OH + oh) * OW + ow] = acc;
                }
            }
        }
    }
}

void conv_transpose3d_backward(const Tensor& x, const Tensor& w, int sk, int sh, int sw,
                               const Tensor& gout, Tensor* gx, Tensor* gw, Tensor* gb) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const int Cin = xs[0], K = xs[1], H = xs[2], W = xs[3];
    const int Cout = ws[1];
    const int OH = H * sh, OW = W * sw;
    const double* pg = gout.data();
    const double* px = x.data();
    const double* pw = w.data();

    if (gx) {
        *gx = Tensor(xs);
        double* pgx = gx->data();
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < Cin; ++ci) {
            double* gc = pgx + static_cast<int64_t>(ci) * K * H * W;
            for (int ik = 0; ik < K; ++ik)
                for (int ih = 0; ih < H; ++ih)
                    for (int iw = 0; iw < W; ++iw) {
                        double acc = 0.0;
                        for (int co = 0; co < Cout; ++co)
                            for (int dk = 0; dk < sk; ++dk)
                                for (int dh = 0; dh < sh; ++dh)
                                    for (int dw = 0; dw < sw; ++dw) {
                                        const int ok = ik * sk + dk;
                                        const int oh = ih * sh + dh;
                                        const int ow = iw * sw + dw;
                                        acc +=
                                            pg[((static_cast<int64_t>(co) * (K * sk) + ok) * OH +
                                                oh) *
                                                   OW +
                                               ow] *
                                            pw[(((static_cast<int64_t>(ci) * Cout + co) * sk +
                                                 dk) *
                                                    sh +
                                                dh) *
                                                   sw +
                                               dw];
                                    }
                        gc[(static_cast<int64_t>(ik) * H + ih) * W + iw] = acc;
                    }
        }
    }

    if (gw) {
        *gw = Tensor(ws);
        double* pgw = gw->data();
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < Cin; ++ci) {
            const double* xc = px + static_cast<int64_t>(ci) * K * H * W;
            for (int co = 0; co < Cout; ++co)
                for (int dk = 0; dk < sk; ++dk)
                    for (int dh = 0; dh < sh; ++dh)
                        for (int dw = 0; dw < sw; ++dw) {
                            double acc = 0.0;
                            for (int ik = 0; ik < K; ++ik)
                                for (int ih = 0; ih < H; ++ih)
                                    for (int iw = 0; iw < W; ++iw) {
                                        const int ok = ik * sk + dk;
                                        const int oh = ih * sh + dh;
                                        const int ow = iw * sw + dw;
                                        acc +=
                                            pg[((static_cast<int64_t>(co) * (K * sk) + ok) * OH +
                                                oh) *
                                                   OW +
                                               ow] *
                                            xc[(static_cast<int64_t>(ik) * H + ih) * W + iw];
                                    }
                            pgw[(((static_cast<int64_t>(ci) * Cout + co) * sk + dk) * sh + dh) *
                                    sw +
                                dw] = acc;
                        }
        }
    }

    if (gb) {
        *gb = Tensor({Cout});
        const int64_t n = static_cast<int64_t>(K * sk) * OH * OW;
        for (int co = 0; co < Cout; ++co) {
            const double* gc = pg + static_cast<int64_t>(co) * n;
            double acc       = 0.0;
            for (int64_t i = 0; i < n; ++i) acc += gc[i];
            (*gb)[co] = acc;
        }
    }
}

}  // namespace kernels

Var Tape::conv3d(Var x, Var w, Var b, const Conv3dSpec& spec) {
    const auto& xs = x.value().shape();
    const auto& ws = w.value().shape();
    if (xs.size() != 4 || ws.size() != 5 || ws[1] != xs[0] || b.value().dim(0) != ws[0])
        throw std::invalid_argument("conv3d: expected x (Cin,K,H,W), w (Cout,Cin,kk,kh,kw), b (Cout)");
    Tensor out;
    kernels::conv3d_forward(x.value(), w.value(), b.value(), spec, out);
    bool rg = requires_grad(x.id) || requires_grad(w.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int xid = x.id, wid = w.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [xid, wid, bid, oid, spec](Tape& t) {
            const Tensor& g = t.grad(oid);
            Tensor gx, gw, gb;
            kernels::conv3d_backward(t.value(xid), t.value(wid), spec, g,
                                     t.requires_grad(xid) ? &gx : nullptr,
                                     t.requires_grad(wid) ? &gw : nullptr,
                                     t.requires_grad(bid) ? &gb : nullptr);
            if (t.requires_grad(xid)) t.add_grad(xid, gx);
            if (t.requires_grad(wid)) t.add_grad(wid, gw);
            if (t.requires_grad(bid)) t.add_grad(bid, gb);
        };
    }
    return v;
}

Var Tape::conv_transpose3d(Var x, Var w, Var b, int sk, int sh, int sw) {
    Tensor out;
    kernels::conv_transpose3d_forward(x.value(), w.value(), b.value(), sk, sh, sw, out);
    bool rg = requires_grad(x.id) || requires_grad(w.id) || requires_grad(b.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int xid = x.id, wid = w.id, bid = b.id, oid = v.id;
        nodes_.back().backprop = [xid, wid, bid, oid, sk, sh, sw](Tape& t) {
            const Tensor& g = t.grad(oid);
            Tensor gx, gw, gb;
            kernels::conv_transpose3d_backward(t.value(xid), t.value(wid), sk, sh, sw, g,
                                               t.requires_grad(xid) ? &gx : nullptr,
                                               t.requires_grad(wid) ? &gw : nullptr,
                                               t.requires_grad(bid) ? &gb : nullptr);
            if (t.requires_grad(xid)) t.add_grad(xid, gx);
            if (t.requires_grad(wid)) t.add_grad(wid, gw);
            if (t.requires_grad(bid)) t.add_grad(bid, gb);
        };
    }
    return v;
}

// ------------------------------------------------------------- normalization

Var Tape::group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
    const auto& xs = x.value().shape();
    if (xs.size() != 4) throw std::invalid_argument("group_norm: x must be 4-d");
    const int C = xs[0];
    if (groups < 1 || C % groups != 0)
        throw std::invalid_argument("group_norm: groups must divide channel count");
    if (gamma.value().dim(0) != C || beta.value().dim(0) != C)
        throw std::invalid_argument("group_norm: gamma/beta must be (C)");
    const int cpg       = C / groups;
    const int64_t plane = static_cast<int64_t>(xs[1]) * xs[2] * xs[3];
    const int64_t gsize = cpg * plane;

    Tensor out(xs);
    std::vector<double> mean(static_cast<size_t>(groups)), inv_std(static_cast<size_t>(groups));
    const double* px = x.value().data();
    const double* pgm = gamma.value().data();
    const double* pbt = beta.value().data();
    double* po        = out.data();
    for (int g = 0; g < groups; ++g) {
        const double* xg = px + static_cast<int64_t>(g) * gsize;
        double m = 0.0;
        for (int64_t i = 0; i < gsize; ++i) m += xg[i];
        m /= static_cast<double>(gsize);
        double v = 0.0;
        for (int64_t i = 0; i < gsize; ++i) {
            double d = xg[i] - m;
            v += d * d;
        }
        v /= static_cast<double>(gsize);
        mean[static_cast<size_t>(g)]    = m;
        inv_std[static_cast<size_t>(g)] = 1.0 / std::sqrt(v + eps);
        for (int cc = 0; cc < cpg; ++cc) {
            const int c     = g * cpg + cc;
            const double gm = pgm[c], bt = pbt[c];
            const double* xrow = px + static_cast<int64_t>(c) * plane;
            double* yrow       = po + static_cast<int64_t>(c) * plane;
            for (int64_t i = 0; i < plane; ++i)
                yrow[i] = gm * (xrow[i] - m) * inv_std[static_cast<size_t>(g)] + bt;
        }
    }

    bool rg = requires_grad(x.id) || requires_grad(gamma.id) || requires_grad(beta.id);
    Var v   = push(std::move(out), rg, {});
    if (v.tape->requires_grad(v.id)) {
        int xid = x.id, gid = gamma.id, bid = beta.id, oid = v.id;
        nodes_.back().backprop = [xid, gid, bid, oid, groups, cpg, plane, gsize, mean,
                                  inv_std](Tape& t) {
            const Tensor& g  = t.grad(oid);
            const Tensor& xv = t.value(xid);
            const Tensor& gm = t.value(gid);
            const int C      = groups * cpg;
            Tensor gx(xv.shape());
            Tensor ggamma({C});
            Tensor gbeta({C});
            for (int gr = 0; gr < groups; ++gr) {
                const double m  = mean[static_cast<size_t>(gr)];
                const double is = inv_std[static_cast<size_t>(gr)];
                // u = dy * gamma (per element), reduce over the group
                double sum_u = 0.0, sum_ux = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c        = gr * cpg + cc;
                    const double gmc   = gm[c];
                    const double* grow = g.data() + static_cast<int64_t>(c) * plane;
                    const double* xrow = xv.data() + static_cast<int64_t>(c) * plane;
                    double sg = 0.0, sgx = 0.0;
                    for (int64_t i = 0; i < plane; ++i) {
                        const double u  = grow[i] * gmc;
                        const double xh = (xrow[i] - m) * is;
                        sum_u += u;
                        sum_ux += u * xh;
                        sg += grow[i];
                        sgx += grow[i] * xh;
                    }
                    ggamma[c] = sgx;
                    gbeta[c]  = sg;
                }
                const double mu  = sum_u / static_cast<double>(gsize);
                const double mux = sum_ux / static_cast<double>(gsize);
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c        = gr * cpg + cc;
                    const double gmc   = gm[c];
                    const double* grow = g.data() + static_cast<int64_t>(c) * plane;
                    const double* xrow = xv.data() + static_cast<int64_t>(c) * plane;
                    double* gxr        = gx.data() + static_cast<int64_t>(c) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        const double u  = grow[i] * gmc;
                        const double xh = (xrow[i] - m) * is;
                        gxr[i]          = is * (u - mu - xh * mux);
                    }
                }
            }
            if (t.requires_grad(xid)) t.add_grad(xid, gx);
            if (t.requires_grad(gid)) t.add_grad(gid, ggamma);
            if (t.requires_grad(bid)) t.add_grad(bid, gbeta);
        };
    }
    return v;
}

// ---------------------------------------------------------------- reduction

Var Tape::weighted_sse(Var x, const Tensor& target, double weight) {
    check_same_shape(x.value(), target, "weighted_sse");
    double acc       = 0.0;
    const double* px = x.value().data();
    const double* pt = target.data();
    const int64_t n  = target.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double d = px[i] - pt[i];
        acc += d * d;
    }
    Tensor out({1});
    out[0] = weight * acc;
    Var v  = push(std::move(out), requires_grad(x.id), {});
    if (v.tape->requires_grad(v.id)) {
        int xid = x.id, oid = v.id;
        Tensor tcopy           = target;
        nodes_.back().backprop = [xid, oid, tcopy, weight](Tape& t) {
            const double gl  = t.grad(oid)[0];
            const Tensor& xv = t.value(xid);
            Tensor gx(xv.shape());
            const int64_t n = xv.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] = 2.0 * weight * gl * (xv[i] - tcopy[i]);
            t.add_grad(xid, gx);
        };
    }
    return v;
}

}  // namespace freecho::nn
