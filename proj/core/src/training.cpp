#include "freecho/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace freecho {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate < 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (total_iterations < 0) throw std::invalid_argument("TrainConfig: total_iterations < 0");
    if (condition_dropout_prob < 0.0 || condition_dropout_prob > 1.0)
        throw std::invalid_argument("TrainConfig: condition_dropout_prob must lie in [0,1]");
    if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every < 1");
    if (log_every < 1) throw std::invalid_argument("TrainConfig: log_every < 1");
    if (ema_decay <= 0.0 || ema_decay >= 1.0)
        throw std::invalid_argument("TrainConfig: ema_decay must lie in (0,1)");
}

AdamOptimizer::AdamOptimizer(const ParamStore& params, double lr, double beta1, double beta2,
                             double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (int i = 0; i < params.size(); ++i) {
        m_.emplace_back(params[i].value.shape());
        v_.emplace_back(params[i].value.shape());
    }
}

void AdamOptimizer::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (int i = 0; i < params.size(); ++i) {
        Parameter& p    = params[i];
        Tensor& m       = m_[static_cast<size_t>(i)];
        Tensor& v       = v_[static_cast<size_t>(i)];
        const int64_t n = p.value.numel();
        for (int64_t j = 0; j < n; ++j) {
            const double g = p.grad[j];
            m[j]           = b1_ * m[j] + (1.0 - b1_) * g;
            v[j]           = b2_ * v[j] + (1.0 - b2_) * g * g;
            p.value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
        }
    }
}

double denoising_loss(const Denoiser& denoiser, const std::vector<Tensor>& batch,
                      const NoiseSchedule& schedule, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("denoising_loss: batch must be nonempty");
    for (size_t i = 1; i < batch.size(); ++i)
        check_same_shape(batch[0], batch[i], "denoising_loss");
    double total = 0.0;
    for (const Tensor& x : batch) {
        const double sigma = std::exp(rng.normal(schedule.p_mean, schedule.p_std));
        const double w     = loss_weight(sigma, schedule.sigma_data);
        Tensor noisy(x.shape());
        for (int64_t j = 0; j < x.numel(); ++j) noisy[j] = x[j] + sigma * rng.normal();
        Tensor d     = denoiser.denoise(noisy, sigma);
        double sse   = 0.0;
        for (int64_t j = 0; j < x.numel(); ++j) {
            const double e = d[j] - x[j];
            sse += e * e;
        }
        const double l = w * sse;
        if (!std::isfinite(l))
            throw std::runtime_error("denoising_loss: non-finite loss at sigma = " +
                                     std::to_string(sigma));
        total += l;
    }
    return total / static_cast<double>(batch.size());
}

namespace {

// Builds w(sigma) * || c_skip s + c_out F(c_in s, c_noise) - x ||^2 on a tape.
nn::Var build_sample_loss(const UNet3D& model, nn::Tape& tape, const std::vector<nn::Var>& params,
                          const Tensor& video, double sigma, const Tensor& noise,
                          const Tensor* condition, const NoiseSchedule& schedule) {
    check_same_shape(video, noise, "denoising_loss_sample");
    const Preconditioning c = precondition_coeffs(sigma, schedule.sigma_data, schedule.skip_form);
    const double w          = loss_weight(sigma, schedule.sigma_data);

    Tensor scaled_in(video.shape());
    Tensor target(video.shape());
    for (int64_t j = 0; j < video.numel(); ++j) {
        const double s = video[j] + sigma * noise[j];
        scaled_in[j]   = c.c_in * s;
        target[j]      = video[j] - c.c_skip * s;
    }
    nn::Var f = model.build_forward(tape, tape.leaf(std::move(scaled_in)), c.c_noise, condition,
                                    params);
    nn::Var scaled = tape.scale(f, c.c_out);
    return tape.weighted_sse(scaled, target, w);
}

}  // namespace

double denoising_loss_sample(const UNet3D& model, const Tensor& video, double sigma,
                             const Tensor& noise, const Tensor* condition,
                             const NoiseSchedule& schedule) {
    nn::Tape tape;
    tape.set_recording(false);
    auto params = model.bind_params(tape, false);
    nn::Var l   = build_sample_loss(model, tape, params, video, sigma, noise, condition, schedule);
    return l.value()[0];
}

double denoising_loss_sample_grad(UNet3D& model, const Tensor& video, double sigma,
                                  const Tensor& noise, const Tensor* condition,
                                  const NoiseSchedule& schedule, double grad_seed) {
    nn::Tape tape;
    auto params = model.bind_params(tape, true);
    nn::Var l   = build_sample_loss(model, tape, params, video, sigma, noise, condition, schedule);
    tape.backward(l, grad_seed);
    ParamStore& store = model.params();
    for (int i = 0; i < store.size(); ++i) {
        const Tensor& g = params[static_cast<size_t>(i)].grad();
        if (g.empty()) continue;
        Tensor& acc = store[i].grad;
        for (int64_t j = 0; j < acc.numel(); ++j) acc[j] += g[j];
    }
    return l.value()[0];
}

Checkpoint make_training_checkpoint(const UNet3D& model, const AdamOptimizer* opt,
                                    const std::vector<Tensor>* ema, int64_t step,
                                    const std::string& config_json) {
    Checkpoint ckpt;
    ckpt.step        = step;
    ckpt.config_json = config_json;
    const ParamStore& store = model.params();
    for (int i = 0; i < store.size(); ++i)
        ckpt.tensors.emplace_back("param." + store[i].name, store[i].value);
    if (opt != nullptr) {
        auto* mut = const_cast<AdamOptimizer*>(opt);
        for (int i = 0; i < store.size(); ++i) {
            ckpt.tensors.emplace_back("adam.m." + store[i].name, mut->first_moment(i));
            ckpt.tensors.emplace_back("adam.v." + store[i].name, mut->second_moment(i));
        }
    }
    if (ema != nullptr)
        for (int i = 0; i < store.size(); ++i)
            ckpt.tensors.emplace_back("ema." + store[i].name, (*ema)[static_cast<size_t>(i)]);
    return ckpt;
}

void restore_model_params(UNet3D& model, const Checkpoint& ckpt) {
    ParamStore& store = model.params();
    for (int i = 0; i < store.size(); ++i) {
        const Tensor* t = ckpt.find("param." + store[i].name);
        if (t == nullptr)
            throw std::runtime_error("checkpoint missing parameter " + store[i].name);
        if (!t->same_shape(store[i].value))
            throw std::runtime_error("checkpoint shape mismatch for " + store[i].name);
        store[i].value = *t;
    }
}

void restore_optimizer(AdamOptimizer& opt, const UNet3D& model, const Checkpoint& ckpt) {
    const ParamStore& store = model.params();
    for (int i = 0; i < store.size(); ++i) {
        const Tensor* m = ckpt.find("adam.m." + store[i].name);
        const Tensor* v = ckpt.find("adam.v." + store[i].name);
        if (m == nullptr || v == nullptr)
            throw std::runtime_error("checkpoint missing optimizer state for " + store[i].name);
        opt.first_moment(i)  = *m;
        opt.second_moment(i) = *v;
    }
    opt.restore(ckpt.step);
}

namespace {

int sigma_bucket(double sigma, const NoiseSchedule& s) {
    const double z = std::log(sigma);
    if (z < s.p_mean - s.p_std) return 0;
    if (z < s.p_mean) return 1;
    if (z < s.p_mean + s.p_std) return 2;
    return 3;
}

TrainResult train_impl(UNet3D& model, const std::vector<TrainItem>& dataset,
                       const TrainConfig& config, const NoiseSchedule& schedule,
                       const std::string& out_dir, const std::string& config_echo,
                       bool classifier_free) {
    config.validate();
    schedule.validate();
    if (dataset.empty()) throw std::invalid_argument("train: dataset must be nonempty");
    if (classifier_free && !model.config().with_condition_channel)
        throw std::invalid_argument(
            "train_classifier_free: model was built without a condition channel");

    const bool to_disk = !out_dir.empty();
    std::ofstream log_file;
    if (to_disk) {
        std::filesystem::create_directories(out_dir);
        log_file.open(out_dir + "/train_log.jsonl", std::ios::app);
    }

    AdamOptimizer opt(model.params(), config.learning_rate, config.adam_beta1, config.adam_beta2,
                      config.adam_eps);
    std::vector<Tensor> ema;
    if (config.ema)
        for (int i = 0; i < model.params().size(); ++i) ema.push_back(model.params()[i].value);

    int64_t start_step = 0;
    if (to_disk) {
        const std::string latest = out_dir + "/checkpoint_latest.ckpt";
        if (std::filesystem::exists(latest)) {
            Checkpoint ckpt = load_checkpoint(latest);
            restore_model_params(model, ckpt);
            restore_optimizer(opt, model, ckpt);
            start_step = ckpt.step;
            std::fprintf(stderr, "[freecho] resuming training at step %lld\n",
                         static_cast<long long>(start_step));
        }
    }

    TrainResult result;
    TrainState& state = result.state;
    state.step        = start_step;

    auto write_checkpoint = [&](int64_t step) {
        if (!to_disk) return;
        Checkpoint ckpt = make_training_checkpoint(model, &opt, config.ema ? &ema : nullptr, step,
                                                   config_echo);
        const std::string tmp = out_dir + "/checkpoint_latest.ckpt.tmp";
        save_checkpoint(tmp, ckpt);
        std::filesystem::rename(tmp, out_dir + "/checkpoint_latest.ckpt");
        result.last_checkpoint = out_dir + "/checkpoint_latest.ckpt";
    };

    const auto t0 = std::chrono::steady_clock::now();
    std::array<double, 4> window_bucket_sum{};
    std::array<int64_t, 4> window_bucket_count{};
    double window_loss_sum = 0.0;
    int64_t window_count   = 0;

    for (int64_t step = start_step; step < config.total_iterations; ++step) {
        // independent per-purpose streams keep sigma/noise draws identical
        // whether or not dropout decisions are consumed
        Rng rng_batch   = Rng::fork(config.seed, static_cast<uint64_t>(step) * 4 + 0);
        Rng rng_sigma   = Rng::fork(config.seed, static_cast<uint64_t>(step) * 4 + 1);
        Rng rng_noise   = Rng::fork(config.seed, static_cast<uint64_t>(step) * 4 + 2);
        Rng rng_dropout = Rng::fork(config.seed, static_cast<uint64_t>(step) * 4 + 3);

        model.params().zero_grads();
        double batch_loss = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            const TrainItem& item =
                dataset[static_cast<size_t>(rng_batch.below(dataset.size()))];
            const double sigma = std::exp(rng_sigma.normal(schedule.p_mean, schedule.p_std));
            Tensor noise       = Tensor::randn(item.video.shape(), rng_noise);

            const Tensor* cond = nullptr;
            if (classifier_free && item.has_condition) {
                const bool drop = rng_dropout.uniform() < config.condition_dropout_prob;
                if (!drop) cond = &item.condition;
            }
            const double l = denoising_loss_sample_grad(model, item.video, sigma, noise, cond,
                                                        schedule,
                                                        1.0 / config.batch_size);
            if (!std::isfinite(l)) {
                result.aborted      = true;
                result.abort_reason = "non-finite loss at step " + std::to_string(step) +
                                      ", sigma " + std::to_string(sigma);
                std::fprintf(stderr, "[freecho] training aborted: %s\n",
                             result.abort_reason.c_str());
                return result;
            }
            batch_loss += l / config.batch_size;
            const int bucket = sigma_bucket(sigma, schedule);
            state.bucket_loss_sum[static_cast<size_t>(bucket)] += l;
            ++state.bucket_count[static_cast<size_t>(bucket)];
            window_bucket_sum[static_cast<size_t>(bucket)] += l;
            ++window_bucket_count[static_cast<size_t>(bucket)];
        }

        opt.step(model.params());
        if (config.ema)
            for (int i = 0; i < model.params().size(); ++i) {
                Tensor& e       = ema[static_cast<size_t>(i)];
                const Tensor& p = model.params()[i].value;
                for (int64_t j = 0; j < e.numel(); ++j)
                    e[j] = config.ema_decay * e[j] + (1.0 - config.ema_decay) * p[j];
            }

        state.step      = step + 1;
        state.last_loss = batch_loss;
        state.running_loss =
            (state.running_loss * static_cast<double>(step - start_step) + batch_loss) /
            static_cast<double>(step - start_step + 1);
        result.loss_curve.emplace_back(step + 1, batch_loss);
        window_loss_sum += batch_loss;
        ++window_count;

        if ((step + 1) % config.log_every == 0 || step + 1 == config.total_iterations) {
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            if (log_file) {
                json rec;
                rec["step"]    = step + 1;
                rec["loss"]    = window_loss_sum / static_cast<double>(window_count);
                rec["wall_ms"] = wall_ms;
                json buckets   = json::array();
                for (int k = 0; k < 4; ++k)
                    buckets.push_back(window_bucket_count[static_cast<size_t>(k)] > 0
                                          ? window_bucket_sum[static_cast<size_t>(k)] /
                                                window_bucket_count[static_cast<size_t>(k)]
                                          : 0.0);
                rec["bucket_loss"] = buckets;
                log_file << rec.dump() << "\n";
                log_file.flush();
            }
            window_bucket_sum.fill(0.0);
            window_bucket_count.fill(0);
            window_loss_sum = 0.0;
            window_count    = 0;
        }
        if ((step + 1) % config.checkpoint_every == 0) write_checkpoint(step + 1);
    }

    write_checkpoint(state.step);
    return result;
}

}  // namespace

TrainResult train(UNet3D& model, const std::vector<TrainItem>& dataset, const TrainConfig& config,
                  const NoiseSchedule& schedule, const std::string& out_dir,
                  const std::string& config_echo_json) {
    return train_impl(model, dataset, config, schedule, out_dir, config_echo_json, false);
}

TrainResult train_classifier_free(UNet3D& model, const std::vector<TrainItem>& dataset,
                                  const TrainConfig& config, const NoiseSchedule& schedule,
                                  const std::string& out_dir,
                                  const std::string& config_echo_json) {
    return train_impl(model, dataset, config, schedule, out_dir, config_echo_json, true);
}

}  // namespace freecho
