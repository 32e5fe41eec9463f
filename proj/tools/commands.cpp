#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "freecho/data.hpp"
#include "freecho/eval.hpp"
#include "freecho/image_io.hpp"
#include "freecho/metrics.hpp"
#include "freecho/pseudo.hpp"
#include "freecho/sampler.hpp"
#include "freecho/training.hpp"

namespace freecho::cli {

namespace fs = std::filesystem;
using nlohmann::json;

Config load_config(const CommonArgs& args) {
    Config cfg = Config::load(args.config_path, args.preset, args.overrides);
    if (args.has_seed) {
        cfg.training.seed = args.seed;
        cfg.sampler.seed  = args.seed;
    }
    for (const auto& [k, v] : args.overrides)
        std::fprintf(stderr, "[freecho] config override: %s = %s\n", k.c_str(), v.c_str());
    return cfg;
}

namespace {

void write_run_records(const CommonArgs& args, const Config& cfg, const std::string& command,
                       const json& extra) {
    fs::create_directories(args.out_dir);
    std::ofstream cf(fs::path(args.out_dir) / "config.json");
    cf << cfg.to_json_text() << "\n";

    json run;
    run["command"]       = command;
    run["training_seed"] = cfg.training.seed;
    run["sampler_seed"]  = cfg.sampler.seed;
    json ov              = json::array();
    for (const auto& [k, v] : args.overrides) ov.push_back(k + "=" + v);
    run["overrides"] = ov;
    run["extra"]     = extra;
    std::ofstream rf(fs::path(args.out_dir) / "run.json");
    rf << run.dump(2) << "\n";
}

// Test-split (or all) items resized to the configured frame count.
std::vector<LabeledVideo> load_items(const std::string& path, const Config& cfg,
                                     const std::string& split) {
    Dataset ds = load_dataset(path, dataset_format_from_string(cfg.data.format));
    const std::vector<std::string>* ids = nullptr;
    if (split == "train" && !ds.train_ids.empty()) ids = &ds.train_ids;
    if (split == "test" && !ds.test_ids.empty()) ids = &ds.test_ids;

    std::vector<LabeledVideo> out;
    for (auto& item : ds.items) {
        if (ids != nullptr &&
            std::find(ids->begin(), ids->end(), item.first.id) == ids->end())
            continue;
        if (item.first.height() != cfg.data.height || item.first.width() != cfg.data.width)
            throw std::invalid_argument("dataset video " + item.first.id + " is " +
                                        std::to_string(item.first.width()) + "x" +
                                        std::to_string(item.first.height()) +
                                        ", config expects " + std::to_string(cfg.data.width) +
                                        "x" + std::to_string(cfg.data.height));
        VideoVolume v = take_first_frames(item.first, cfg.data.frames,
                                          cfg.data.loop_short_videos);
        out.emplace_back(std::move(v), std::move(item.second));
    }
    if (out.empty())
        throw std::invalid_argument("no usable items in " + path + " (split: " + split + ")");
    return out;
}

Tensor render_condition_channel(const SegmentationMap& seg, int K) {
    Tensor img          = labels_to_intensity(seg, default_label_intensity_map(seg.label_set));
    const int64_t plane = img.numel();
    Tensor cond({1, K, seg.height, seg.width});
    for (int f = 0; f < K; ++f)
        std::copy(img.data(), img.data() + plane, cond.data() + f * plane);
    return cond;
}

json histogram_to_json(const IntensityHistogram& h) {
    return json{{"edges", h.bin_edges}, {"masses", h.masses}};
}

IntensityHistogram histogram_from_json(const json& j) {
    IntensityHistogram h;
    h.bin_edges = j.at("edges").get<std::vector<double>>();
    h.masses    = j.at("masses").get<std::vector<double>>();
    h.validate();
    return h;
}

struct LoadedModel {
    std::unique_ptr<UNet3D> model;
    Checkpoint ckpt;
    IntensityHistogram dataset_hist;
    bool has_hist = false;
};

LoadedModel load_model(const std::string& checkpoint_path, const Config& cfg) {
    LoadedModel lm;
    lm.ckpt = load_checkpoint(checkpoint_path);

    // model compatibility: the checkpoint echoes the config it was trained
    // with; reject a mismatched model section instead of crashing later
    json echo = json::parse(lm.ckpt.config_json);
    if (echo.contains("config") && echo["config"].contains("model")) {
        json ours = json::parse(cfg.to_json_text())["model"];
        if (echo["config"]["model"] != ours)
            throw std::invalid_argument(
                "checkpoint model config does not match the requested config; trained with: " +
                echo["config"]["model"].dump());
    }
    if (echo.contains("dataset_intensity_histogram")) {
        lm.dataset_hist = histogram_from_json(echo["dataset_intensity_histogram"]);
        lm.has_hist     = true;
    }

    Rng rng(0);
    lm.model = std::make_unique<UNet3D>(cfg.model, rng);
    restore_model_params(*lm.model, lm.ckpt);
    return lm;
}

SegmentationMap read_segmentation(const std::string& path) {
    int w = 0, h = 0;
    auto raw = read_pgm(path, w, h);
    SegmentationMap seg;
    seg.height = h;
    seg.width  = w;
    seg.labels.assign(raw.begin(), raw.end());
    std::set<int> distinct(seg.labels.begin(), seg.labels.end());
    int max_label = *distinct.rbegin();
    if (max_label <= 1) {
        seg.label_set = {{0, "background"}, {1, "lv_endocardium"}};
    } else if (max_label <= 3) {
        seg.label_set = {{0, "background"},
                         {1, "lv_endocardium"},
                         {2, "myocardium"},
                         {3, "la_endocardium"}};
    } else {
        for (int l : distinct) seg.label_set.emplace_back(l, "label_" + std::to_string(l));
    }
    seg.validate();
    return seg;
}

void write_video_dir(const fs::path& dir, const Tensor& video, bool preview) {
    fs::create_directories(dir);
    const int K = video.dim(0), H = video.dim(1), W = video.dim(2);
    const int64_t plane = static_cast<int64_t>(H) * W;
    std::vector<std::vector<uint8_t>> all;
    for (int f = 0; f < K; ++f) {
        Tensor frame({H, W});
        std::copy(video.data() + f * plane, video.data() + (f + 1) * plane, frame.data());
        auto u8 = denormalize_u8(frame);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.pgm", f);
        write_pgm((dir / name).string(), u8, W, H);
        all.push_back(std::move(u8));
    }
    if (preview) write_gif_grayscale((dir / "preview.gif").string(), all, W, H);
}

GeneratorFn make_generator(const std::string& method, const UNet3D& model, const Config& cfg,
                           const IntensityHistogram& hist, int t_i) {
    const NoiseSchedule schedule = cfg.schedule;
    const int K                  = cfg.data.frames;
    const Solver solver          = cfg.solver();
    const double guidance        = cfg.sampler.guidance_scale;
    const auto sink_opts         = cfg.pseudo.sinkhorn_options();

    if (method == "free-echo" || method == "sdedit") {
        const bool use_ot = method == "free-echo";
        return [&model, schedule, K, solver, t_i, use_ot, hist,
                sink_opts](const SegmentationMap& seg, uint64_t seed) {
            Rng rng(seed);
            const auto mapping = default_label_intensity_map(seg.label_set);
            PseudoInit init =
                use_ot ? make_free_echo_init(seg, mapping, hist, K, schedule, t_i, rng, sink_opts)
                       : make_sdedit_init(seg, mapping, K, schedule, t_i, rng);
            VideoVolume out;
            out.id = "gen";
            if (t_i == 0) {
                out.pixels = init.pseudo.frames;
                return out;
            }
            PreconditionedDenoiser den(model, schedule);
            SamplerConfig sc{solver, schedule, t_i, 0.0, seed};
            Tensor x = sample_truncated(
                den, init.noisy.reshaped({1, K, seg.height, seg.width}), sc);
            out.pixels = x.reshaped({K, seg.height, seg.width});
            return out;
        };
    }
    if (method == "cls-free") {
        if (!model.config().with_condition_channel)
            throw std::invalid_argument(
                "method cls-free requires a checkpoint trained with a condition channel");
        return [&model, schedule, K, solver, guidance](const SegmentationMap& seg,
                                                       uint64_t seed) {
            Rng rng(seed);
            PreconditionedDenoiser den(model, schedule);
            GuidedDenoiser guided(den, render_condition_channel(seg, K), guidance);
            SamplerConfig sc{solver, schedule, schedule.num_steps, guidance, seed};
            Tensor x = sample_full(guided, {1, K, seg.height, seg.width}, sc, rng);
            VideoVolume out;
            out.id     = "gen";
            out.pixels = x.reshaped({K, seg.height, seg.width});
            return out;
        };
    }
    if (method == "unconditional") {
        return [&model, schedule, K, solver](const SegmentationMap& seg, uint64_t seed) {
            Rng rng(seed);
            PreconditionedDenoiser den(model, schedule);
            SamplerConfig sc{solver, schedule, schedule.num_steps, 0.0, seed};
            Tensor x = sample_full(den, {1, K, seg.height, seg.width}, sc, rng);
            VideoVolume out;
            out.id     = "gen";
            out.pixels = x.reshaped({K, seg.height, seg.width});
            return out;
        };
    }
    throw std::invalid_argument("unknown method \"" + method +
                                "\" (free-echo|sdedit|cls-free|unconditional)");
}

}  // namespace

int cmd_make_data(const CommonArgs& args) {
    Config cfg = load_config(args);
    auto items = generate_toy_dataset(cfg.data.toy_config());
    save_toy_container(args.out_dir, items, cfg.data.train_fraction);
    write_run_records(args, cfg, "make-data",
                      json{{"num_videos", items.size()}, {"out", args.out_dir}});
    std::fprintf(stderr, "[freecho] wrote %zu toy videos to %s\n", items.size(),
                 args.out_dir.c_str());
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& dataset_path) {
    Config cfg = load_config(args);
    auto items = load_items(dataset_path, cfg, "train");

    std::vector<VideoVolume> videos;
    videos.reserve(items.size());
    for (const auto& [v, s] : items) videos.push_back(v);
    IntensityHistogram hist =
        dataset_intensity_histogram(videos, cfg.pseudo.bins, cfg.pseudo.hist_frames_per_video);

    std::vector<TrainItem> train_items;
    for (const auto& [video, seg] : items) {
        TrainItem it;
        it.video = to_model_input(video);
        if (cfg.model.with_condition_channel) {
            it.condition     = render_condition_channel(seg, cfg.data.frames);
            it.has_condition = true;
        }
        train_items.push_back(std::move(it));
    }

    // the echo carries the pooled training histogram so sampling does not
    // need the dataset again
    json echo;
    echo["config"]                       = json::parse(cfg.to_json_text());
    echo["dataset_intensity_histogram"] = histogram_to_json(hist);

    write_run_records(args, cfg, "train",
                      json{{"dataset", dataset_path}, {"items", train_items.size()}});

    Rng rng(cfg.training.seed);
    UNet3D model(cfg.model, rng);
    std::fprintf(stderr, "[freecho] model parameters: %lld\n",
                 static_cast<long long>(model.parameter_count()));

    TrainResult res =
        cfg.model.with_condition_channel
            ? train_classifier_free(model, train_items, cfg.training, cfg.schedule, args.out_dir,
                                    echo.dump())
            : train(model, train_items, cfg.training, cfg.schedule, args.out_dir, echo.dump());
    if (res.aborted) {
        std::fprintf(stderr, "[freecho] training aborted: %s\n", res.abort_reason.c_str());
        return 2;
    }
    std::fprintf(stderr, "[freecho] done: %lld steps, final loss %.6f, checkpoint %s\n",
                 static_cast<long long>(res.state.step), res.state.last_loss,
                 res.last_checkpoint.c_str());
    return 0;
}

int cmd_sample(const CommonArgs& args, const std::string& checkpoint_path,
               const std::string& segmentation_path, const std::string& method) {
    Config cfg = load_config(args);
    if (method == "unconditional" && !segmentation_path.empty())
        std::fprintf(stderr,
                     "[freecho] warning: unconditional sampling ignores --segmentation\n");
    if (method != "unconditional" && segmentation_path.empty())
        throw std::invalid_argument("method " + method + " requires --segmentation");

    LoadedModel lm = load_model(checkpoint_path, cfg);
    const int t_i  = cfg.sampler.start_step;

    SegmentationMap seg;
    if (!segmentation_path.empty()) {
        seg = read_segmentation(segmentation_path);
        if (seg.height != cfg.data.height || seg.width != cfg.data.width)
            throw std::invalid_argument("segmentation dims do not match config");
    }
    if (method == "free-echo" && !lm.has_hist)
        throw std::invalid_argument(
            "checkpoint carries no dataset intensity histogram; retrain with this build");

    write_run_records(args, cfg, "sample",
                      json{{"checkpoint", checkpoint_path},
                           {"segmentation", segmentation_path},
                           {"method", method},
                           {"t_i", t_i}});

    if (t_i == 0 && (method == "free-echo" || method == "sdedit"))
        std::fprintf(stderr, "[freecho] t_i = 0: output equals the pseudo-video (no-op)\n");

    // pseudo-video intermediate, written once per segmentation
    if (method == "free-echo" || method == "sdedit") {
        Rng rng(cfg.sampler.seed);
        const auto mapping = default_label_intensity_map(seg.label_set);
        PseudoInit init =
            method == "free-echo"
                ? make_free_echo_init(seg, mapping, lm.dataset_hist, cfg.data.frames,
                                      cfg.schedule, t_i, rng, cfg.pseudo.sinkhorn_options())
                : make_sdedit_init(seg, mapping, cfg.data.frames, cfg.schedule, t_i, rng);
        write_video_dir(fs::path(args.out_dir) / "pseudo_video", init.pseudo.frames,
                        cfg.eval.preview);
    }

    GeneratorFn gen = make_generator(method, *lm.model, cfg, lm.dataset_hist, t_i);
    VideoVolume out = gen(seg, cfg.sampler.seed);
    write_video_dir(fs::path(args.out_dir) / "sample_000", out.pixels, cfg.eval.preview);

    std::fprintf(stderr, "[freecho] wrote sample to %s\n",
                 (fs::path(args.out_dir) / "sample_000").c_str());
    return 0;
}

namespace {

MetricReport run_rows(const Config& cfg, const LoadedModel& lm,
                      const std::vector<LabeledVideo>& test_items,
                      const std::vector<std::pair<std::string, int>>& method_ts,
                      bool oracle_generator) {
    const auto image_ex =
        random_projection_image_extractor(cfg.eval.extractor_seed, cfg.eval.extractor_dim);
    const auto video_ex =
        random_projection_video_extractor(cfg.eval.extractor_seed, cfg.eval.extractor_dim);

    MetricReport report;
    report.extractor_name = image_ex.name + " / " + video_ex.name;
    for (const auto& [method, t] : method_ts) {
        GeneratorFn gen;
        if (oracle_generator) {
            // testing hook: the generator returns the ground truth itself
            const auto* items = &test_items;
            gen = [items](const SegmentationMap& seg, uint64_t) {
                for (const auto& [v, s] : *items)
                    if (s.labels == seg.labels) return v;
                throw std::runtime_error("oracle generator: unknown segmentation");
            };
        } else {
            gen = make_generator(method, *lm.model, cfg, lm.dataset_hist, t);
        }
        const int shown_t = (method == "free-echo") ? t : -1;
        MetricRow row = evaluate_method(gen, method, shown_t, test_items,
                                        cfg.eval.samples_per_condition, image_ex, video_ex,
                                        cfg.sampler.seed, cfg.eval.threads);
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_report(const CommonArgs& args, const Config& cfg, const MetricReport& report) {
    fs::create_directories(args.out_dir);
    const std::string table = report.to_table(cfg.eval.report_l2);
    std::ofstream tf(fs::path(args.out_dir) / "report.txt");
    tf << table;
    std::ofstream jf(fs::path(args.out_dir) / "report.json");
    jf << report.to_json() << "\n";
    std::fputs(table.c_str(), stdout);
}

}  // namespace

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint_path,
                 const std::string& test_path, const std::vector<std::string>& methods,
                 bool oracle_generator) {
    Config cfg     = load_config(args);
    LoadedModel lm = load_model(checkpoint_path, cfg);
    auto items     = load_items(test_path, cfg, "test");

    std::vector<std::pair<std::string, int>> method_ts;
    for (const std::string& m : methods) {
        if (m == "free-echo" && !lm.has_hist && !oracle_generator)
            throw std::invalid_argument("checkpoint carries no dataset intensity histogram");
        method_ts.emplace_back(m, cfg.sampler.start_step);
    }

    write_run_records(args, cfg, "evaluate",
                      json{{"checkpoint", checkpoint_path},
                           {"data", test_path},
                           {"methods", methods},
                           {"conditions", items.size()}});

    MetricReport report = run_rows(cfg, lm, items, method_ts, oracle_generator);
    write_report(args, cfg, report);
    return 0;
}

int cmd_sweep_t(const CommonArgs& args, const std::string& checkpoint_path,
                const std::string& test_path, const std::vector<int>& t_values) {
    Config cfg = load_config(args);
    if (t_values.empty()) throw std::invalid_argument("sweep-t: need at least one t value");
    for (int t : t_values)
        if (t < 1 || t > cfg.schedule.num_steps)
            throw std::invalid_argument("sweep-t: t = " + std::to_string(t) +
                                        " outside [1, num_steps]");
    LoadedModel lm = load_model(checkpoint_path, cfg);
    if (!lm.has_hist)
        throw std::invalid_argument("checkpoint carries no dataset intensity histogram");
    auto items = load_items(test_path, cfg, "test");

    std::vector<int> ts = t_values;
    std::sort(ts.begin(), ts.end());
    std::vector<std::pair<std::string, int>> method_ts;
    for (int t : ts) method_ts.emplace_back("free-echo", t);

    write_run_records(args, cfg, "sweep-t",
                      json{{"checkpoint", checkpoint_path},
                           {"data", test_path},
                           {"t_values", ts},
                           {"conditions", items.size()}});

    MetricReport report = run_rows(cfg, lm, items, method_ts, false);
    write_report(args, cfg, report);
    return 0;
}

}  // namespace freecho::cli
