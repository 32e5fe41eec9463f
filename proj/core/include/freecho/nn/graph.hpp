#pragma once

#include <array>
#include <deque>
#include <functional>
#include <vector>

#include "freecho/tensor.hpp"

namespace freecho::nn {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int id     = -1;

    const Tensor& value() const;
    const Tensor& grad() const;
    bool valid() const { return tape != nullptr && id >= 0; }
};

struct Conv3dSpec {
    int stride_k = 1, stride_h = 1, stride_w = 1;
    int pad_k = 0, pad_h = 0, pad_w = 0;

    static Conv3dSpec same3() { return {1, 1, 1, 1, 1, 1}; }  // 3x3x3, stride 1
    static Conv3dSpec down(int sk, int sh, int sw) { return {sk, sh, sw, 0, 0, 0}; }
};

// Reverse-mode autodiff tape. Each op records its backward closure; values
// are computed eagerly. A tape holds one forward pass; parameters enter as
// leaves and their gradients are read back after backward().
class Tape {
public:
    Var leaf(Tensor value, bool requires_grad = false);

    // ---- elementwise ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double s);
    Var mul(Var a, Var b);
    Var silu(Var a);

    // x: (C,K,H,W) plus per-channel bias (C)
    Var add_channel_bias(Var x, Var bias);

    // ---- shape ----
    Var reshape(Var a, std::vector<int> shape);
    // permutes a 4-d tensor; order[i] names the source axis placed at i
    Var permute4(Var a, std::array<int, 4> order);
    Var concat_channels(Var a, Var b);  // along axis 0 of (C,K,H,W)

    // ---- dense ----
    // x: (N), w: (M,N), b: (M) -> (M)
    Var linear(Var x, Var w, Var b);

    // ---- batched matrices (B,M,N) ----
    Var bmm(Var a, Var b);        // (B,M,K)x(B,K,N) -> (B,M,N)
    Var transpose12(Var a);       // (B,M,N) -> (B,N,M)
    Var softmax_lastdim(Var a);

    // ---- convolution ----
    // x: (Cin,K,H,W), w: (Cout,Cin,kk,kh,kw), b: (Cout)
    Var conv3d(Var x, Var w, Var b, const Conv3dSpec& spec);
    // kernel size equals stride, zero padding; w: (Cin,Cout,sk,sh,sw)
    Var conv_transpose3d(Var x, Var w, Var b, int sk, int sh, int sw);

    // ---- normalization ----
    // x: (C,K,H,W); gamma,beta: (C); groups must divide C
    Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);

    // ---- reduction ----
    // weight * sum((x - target)^2), scalar output of shape (1)
    Var weighted_sse(Var x, const Tensor& target, double weight);

    // Runs the reverse sweep from `loss` (shape (1)) with the given seed.
    void backward(Var loss, double seed = 1.0);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    // When off, ops compute values only; backward() is unavailable.
    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;  // empty for leaves / no-grad nodes
    };

    Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop);
    Tensor& grad_buf(int id);
    void add_grad(int id, const Tensor& g);

    std::deque<Node> nodes_;
    bool recording_ = true;
};

// ---- stateless kernels (shared by tape ops and inference paths) ----
namespace kernels {

void conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& b, const Conv3dSpec& spec,
                    Tensor& out);
void conv3d_backward(const Tensor& x, const Tensor& w, const Conv3dSpec& spec, const Tensor& gout,
                     Tensor* gx, Tensor* gw, Tensor* gb);
void conv_transpose3d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int sk, int sh,
                              int sw, Tensor& out);
void conv_transpose3d_backward(const Tensor& x, const Tensor& w, int sk, int sh, int sw,
                               const Tensor& gout, Tensor* gx, Tensor* gw, Tensor* gb);

std::vector<int> conv3d_out_shape(const std::vector<int>& xs, const std::vector<int>& ws,
                                  const Conv3dSpec& spec);

}  // namespace kernels

}  // namespace freecho::nn
