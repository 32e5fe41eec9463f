#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "freecho/checkpoint.hpp"
#include "freecho/denoiser.hpp"
#include "freecho/nn/unet3d.hpp"
#include "freecho/schedule.hpp"

namespace freecho {

struct TrainConfig {
    double learning_rate          = 1e-3;
    int batch_size                = 16;
    int total_iterations          = 100000;
    double condition_dropout_prob = 0.1;  // classifier-free baseline only
    uint64_t seed                 = 0;
    int checkpoint_every          = 1000;
    int log_every                 = 50;
    bool ema                      = false;
    double ema_decay              = 0.999;
    double adam_beta1             = 0.9;
    double adam_beta2             = 0.999;
    double adam_eps               = 1e-8;

    void validate() const;
};

// Running statistics of a training run; sigma buckets split ln(sigma) at
// p_mean - p_std, p_mean, p_mean + p_std.
struct TrainState {
    int64_t step        = 0;
    double last_loss    = 0.0;
    double running_loss = 0.0;  // mean since start
    std::array<double, 4> bucket_loss_sum{};
    std::array<int64_t, 4> bucket_count{};
};

struct TrainResult {
    TrainState state;
    std::vector<std::pair<int64_t, double>> loss_curve;  // (step, batch loss)
    std::string last_checkpoint;                         // empty when out_dir empty
    bool aborted = false;
    std::string abort_reason;
};

class AdamOptimizer {
public:
    AdamOptimizer(const ParamStore& params, double lr, double beta1, double beta2, double eps);
    void step(ParamStore& params);
    int64_t steps_taken() const { return t_; }

    // exposed for checkpoint round-trips
    Tensor& first_moment(int i) { return m_[static_cast<size_t>(i)]; }
    Tensor& second_moment(int i) { return v_[static_cast<size_t>(i)]; }
    void restore(int64_t t) { t_ = t; }

private:
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// One dataset element. condition (1,K,H,W) is only consulted by the
// classifier-free loop.
struct TrainItem {
    Tensor video;  // (C,K,H,W), normalized range
    Tensor condition;
    bool has_condition = false;
};

// Mean over the batch of w(sigma) * ||D(x + sigma n, sigma) - x||^2 with
// fresh sigma ~ exp(Normal(p_mean, p_std^2)) and n ~ Normal(0, I) per
// element. Value only; works for any denoiser contract.
double denoising_loss(const Denoiser& denoiser, const std::vector<Tensor>& batch,
                      const NoiseSchedule& schedule, Rng& rng);

// Deterministic single-sample loss for fixed (sigma, noise); the _grad
// variant accumulates parameter gradients scaled by grad_seed.
double denoising_loss_sample(const UNet3D& model, const Tensor& video, double sigma,
                             const Tensor& noise, const Tensor* condition,
                             const NoiseSchedule& schedule);
double denoising_loss_sample_grad(UNet3D& model, const Tensor& video, double sigma,
                                  const Tensor& noise, const Tensor* condition,
                                  const NoiseSchedule& schedule, double grad_seed);

// Adam training loop; deterministic given config.seed. Writes checkpoints
// and a JSONL loss log under out_dir unless it is empty. A non-finite loss
// aborts the run, retaining the last checkpoint on disk.
TrainResult train(UNet3D& model, const std::vector<TrainItem>& dataset, const TrainConfig& config,
                  const NoiseSchedule& schedule, const std::string& out_dir = "",
                  const std::string& config_echo_json = "{}");

// As train, but each sample's condition channel is replaced by the null
// (all-zeros) condition with probability condition_dropout_prob.
TrainResult train_classifier_free(UNet3D& model, const std::vector<TrainItem>& dataset,
                                  const TrainConfig& config, const NoiseSchedule& schedule,
                                  const std::string& out_dir = "",
                                  const std::string& config_echo_json = "{}");

// Checkpoint payload helpers shared by the loop and the CLI.
Checkpoint make_training_checkpoint(const UNet3D& model, const AdamOptimizer* opt,
                                    const std::vector<Tensor>* ema, int64_t step,
                                    const std::string& config_json);
void restore_model_params(UNet3D& model, const Checkpoint& ckpt);
void restore_optimizer(AdamOptimizer& opt, const UNet3D& model, const Checkpoint& ckpt);

}  // namespace freecho
