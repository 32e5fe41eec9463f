#include "freecho/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "freecho/image_io.hpp"

namespace freecho {

namespace fs = std::filesystem;
using nlohmann::json;

void VideoVolume::validate() const {
    if (pixels.ndim() != 3) throw std::invalid_argument("VideoVolume: pixels must be (K,H,W)");
    for (double v : pixels.values())
        if (!std::isfinite(v) || v < -1.0 || v > 1.0)
            throw std::invalid_argument("VideoVolume: pixel outside [-1,1] in " + id);
}

bool SegmentationMap::has_label(int id_) const {
    for (const auto& [l, _] : label_set)
        if (l == id_) return true;
    return false;
}

void SegmentationMap::validate() const {
    if (height <= 0 || width <= 0 ||
        labels.size() != static_cast<size_t>(height) * static_cast<size_t>(width))
        throw std::invalid_argument("SegmentationMap: bad raster dimensions");
    for (int l : labels)
        if (!has_label(l))
            throw std::invalid_argument("SegmentationMap: pixel label " + std::to_string(l) +
                                        " not in label set");
}

void ToyDatasetConfig::validate() const {
    if (num_videos < 1) throw std::invalid_argument("ToyDatasetConfig: num_videos must be >= 1");
    if (frames < 1 || height < 8 || width < 8)
        throw std::invalid_argument("ToyDatasetConfig: shapes too small");
    if (num_labels != 2 && num_labels != 4)
        throw std::invalid_argument("ToyDatasetConfig: num_labels must be 2 or 4");
    if (motion_amplitude < 0.0 || motion_amplitude >= 1.0)
        throw std::invalid_argument("ToyDatasetConfig: motion_amplitude must lie in [0,1)");
    if (speckle_scale < 0.0) throw std::invalid_argument("ToyDatasetConfig: speckle_scale < 0");
}

namespace {

struct ToyGeometry {
    double lv_cx, lv_cy, lv_a, lv_b;      // LV ellipse, relative units
    double myo_scale;                     // outer/inner axis ratio of the ring
    double la_cx, la_cy, la_a, la_b;      // LA ellipse
    double cone_apex_y, cone_tan, cone_r;
};

// Geometry is a pure function of the video index so that the dataset seed
// only affects speckle.
ToyGeometry toy_geometry(int index) {
    ToyGeometry g;
    const double t  = static_cast<double>(index);
    const double j1 = 0.10 * std::sin(2.399963 * t);
    const double j2 = 0.06 * std::cos(1.713724 * t);
    g.lv_cx      = 0.5 + 0.04 * std::sin(0.911 * t);
    g.lv_cy      = 0.40 + 0.02 * j2;
    g.lv_a       = 0.140 * (1.0 + j1);
    g.lv_b       = 0.190 * (1.0 + 0.7 * j1);
    g.myo_scale  = 1.38;
    g.la_cx      = g.lv_cx;
    g.la_cy      = 0.76 + 0.02 * j2;
    g.la_a       = 0.105 * (1.0 + 0.5 * j1);
    g.la_b       = 0.085 * (1.0 + 0.5 * j1);
    g.cone_apex_y = 0.02;
    g.cone_tan    = std::tan(0.62);
    g.cone_r      = 0.93;
    return g;
}

bool in_ellipse(double u, double v, double cx, double cy, double a, double b) {
    const double du = (u - cx) / a;
    const double dv = (v - cy) / b;
    return du * du + dv * dv <= 1.0;
}

bool in_cone(double u, double v, const ToyGeometry& g) {
    const double dy = v - g.cone_apex_y;
    if (dy <= 0.0) return false;
    const double dx = std::abs(u - 0.5);
    if (dx > dy * g.cone_tan) return false;
    return std::sqrt(dx * dx + dy * dy) <= g.cone_r;
}

// label ids
constexpr int kBackground = 0;
constexpr int kLvEndo     = 1;
constexpr int kMyo        = 2;
constexpr int kLaEndo     = 3;

int label_at(double u, double v, const ToyGeometry& g, double scale, double la_scale,
             int num_labels, bool cone) {
    if (cone && !in_cone(u, v, g)) return kBackground;
    if (in_ellipse(u, v, g.lv_cx, g.lv_cy, g.lv_a * scale, g.lv_b * scale)) return kLvEndo;
    if (num_labels == 4) {
        if (in_ellipse(u, v, g.lv_cx, g.lv_cy, g.lv_a * scale * g.myo_scale,
                       g.lv_b * scale * g.myo_scale))
            return kMyo;
        if (in_ellipse(u, v, g.la_cx, g.la_cy, g.la_a * la_scale, g.la_b * la_scale))
            return kLaEndo;
    }
    return kBackground;
}

// luminance per structure, before speckle
double luminance_at(double u, double v, const ToyGeometry& g, double scale, double la_scale,
                    bool cone) {
    if (cone && !in_cone(u, v, g)) return 0.02;
    if (in_ellipse(u, v, g.lv_cx, g.lv_cy, g.lv_a * scale, g.lv_b * scale)) return 0.72;
    if (in_ellipse(u, v, g.lv_cx, g.lv_cy, g.lv_a * scale * g.myo_scale,
                   g.lv_b * scale * g.myo_scale))
        return 0.48;
    if (in_ellipse(u, v, g.la_cx, g.la_cy, g.la_a * la_scale, g.la_b * la_scale)) return 0.60;
    return 0.32;
}

}  // namespace

std::vector<LabeledVideo> generate_toy_dataset(const ToyDatasetConfig& config) {
    config.validate();
    std::vector<LabeledVideo> out;
    out.reserve(static_cast<size_t>(config.num_videos));

    for (int idx = 0; idx < config.num_videos; ++idx) {
        const ToyGeometry g = toy_geometry(idx);
        // reject geometry that would leave the frame
        const double max_a = g.lv_a * g.myo_scale, max_b = g.lv_b * g.myo_scale;
        if (g.lv_cx - max_a < 0.0 || g.lv_cx + max_a > 1.0 || g.lv_cy - max_b < 0.0 ||
            g.lv_cy + max_b > 1.0 || g.la_cy + g.la_b > 1.0)
            throw std::invalid_argument("generate_toy_dataset: ellipse exceeds frame at index " +
                                        std::to_string(idx));

        Rng speckle_rng = Rng::fork(config.seed, static_cast<uint64_t>(idx));
        const int K = config.frames, H = config.height, W = config.width;
        Tensor pixels({K, H, W});

        for (int f = 0; f < K; ++f) {
            const double phase = 2.0 * 3.14159265358979323846 * f / K;
            const double scale = 1.0 - config.motion_amplitude * 0.5 * (1.0 - std::cos(phase));
            // atrium roughly in antiphase with the ventricle
            const double la_scale =
                1.0 - config.motion_amplitude * 0.25 * (1.0 + std::cos(phase));
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double u = (x + 0.5) / W;
                    const double v = (y + 0.5) / H;
                    double lum = luminance_at(u, v, g, scale, la_scale, config.cone_mask);
                    lum *= 1.0 + config.speckle_scale * speckle_rng.normal();
                    lum = std::clamp(lum, 0.0, 1.0);
                    // quantize to the 8-bit grid so container round-trips are exact
                    const double q = std::round(lum * 255.0);
                    pixels[(static_cast<int64_t>(f) * H + y) * W + x] = q / 127.5 - 1.0;
                }
        }

        SegmentationMap seg;
        seg.height = H;
        seg.width  = W;
        seg.labels.resize(static_cast<size_t>(H) * W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double u = (x + 0.5) / W;
                const double v = (y + 0.5) / H;
                seg.labels[static_cast<size_t>(y) * W + x] =
                    label_at(u, v, g, 1.0, 1.0 - config.motion_amplitude * 0.5,
                             config.num_labels, config.cone_mask);
            }
        if (config.num_labels == 2) {
            seg.label_set = {{0, "background"}, {1, "lv_endocardium"}};
        } else {
            seg.label_set = {{0, "background"},
                             {1, "lv_endocardium"},
                             {2, "myocardium"},
                             {3, "la_endocardium"}};
        }

        VideoVolume video;
        video.pixels     = std::move(pixels);
        video.frame_rate = 25.0;
        video.id         = "toy_" + std::to_string(idx);
        out.emplace_back(std::move(video), std::move(seg));
    }
    return out;
}

DatasetFormat dataset_format_from_string(const std::string& s) {
    if (s == "toy-container") return DatasetFormat::kToyContainer;
    if (s == "camus-layout") return DatasetFormat::kCamusLayout;
    if (s == "echonet-layout") return DatasetFormat::kEchonetLayout;
    throw std::invalid_argument("unknown dataset format: " + s);
}

namespace {

std::vector<std::pair<int, std::string>> label_set_for(DatasetFormat format, const json* meta) {
    switch (format) {
        case DatasetFormat::kEchonetLayout:
            return {{0, "background"}, {1, "lv_endocardium"}};
        case DatasetFormat::kCamusLayout:
            return {{0, "background"},
                    {1, "lv_endocardium"},
                    {2, "myocardium"},
                    {3, "la_endocardium"}};
        case DatasetFormat::kToyContainer: {
            std::vector<std::pair<int, std::string>> ls;
            if (meta != nullptr && meta->contains("labels"))
                for (const auto& [k, v] : meta->at("labels").items())
                    ls.emplace_back(std::stoi(k), v.get<std::string>());
            if (ls.empty()) ls = {{0, "background"}, {1, "lv_endocardium"}};
            std::sort(ls.begin(), ls.end());
            return ls;
        }
    }
    return {};
}

std::string segmentation_filename(DatasetFormat format) {
    switch (format) {
        case DatasetFormat::kCamusLayout: return "segmentation_ED.pgm";
        case DatasetFormat::kEchonetLayout: return "lv_mask_ED.pgm";
        case DatasetFormat::kToyContainer: return "segmentation.pgm";
    }
    return "segmentation.pgm";
}

}  // namespace

Dataset load_dataset(const std::string& path, DatasetFormat format) {
    if (!fs::exists(path)) throw std::invalid_argument("load_dataset: no such path: " + path);
    Dataset ds;

    json manifest;
    const fs::path manifest_path = fs::path(path) / "manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream mf(manifest_path);
        mf >> manifest;
        if (manifest.contains("splits")) {
            const auto& sp = manifest["splits"];
            if (sp.contains("train")) ds.train_ids = sp["train"].get<std::vector<std::string>>();
            if (sp.contains("val")) ds.val_ids = sp["val"].get<std::vector<std::string>>();
            if (sp.contains("test")) ds.test_ids = sp["test"].get<std::vector<std::string>>();
        }
    }

    std::vector<std::string> entries;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory()) entries.push_back(e.path().filename().string());
    std::sort(entries.begin(), entries.end());
    if (entries.empty())
        std::fprintf(stderr, "[freecho] load_dataset: %s contains no entries\n", path.c_str());

    for (const std::string& id : entries) {
        const fs::path dir = fs::path(path) / id;
        try {
            json meta;
            const fs::path meta_path = dir / "meta.json";
            if (fs::exists(meta_path)) {
                std::ifstream mf(meta_path);
                mf >> meta;
            }

            std::vector<fs::path> frame_files;
            for (const auto& e : fs::directory_iterator(dir)) {
                const std::string name = e.path().filename().string();
                if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".pgm")
                    frame_files.push_back(e.path());
            }
            if (frame_files.empty()) throw std::runtime_error("no frames");
            std::sort(frame_files.begin(), frame_files.end());

            int W = 0, H = 0;
            std::vector<std::vector<uint8_t>> raw;
            for (const auto& fp : frame_files) {
                int w = 0, h = 0;
                auto px = read_pgm(fp.string(), w, h);
                if (W == 0) {
                    W = w;
                    H = h;
                } else if (w != W || h != H) {
                    throw std::runtime_error("inconsistent frame dimensions");
                }
                raw.push_back(std::move(px));
            }

            const int K = static_cast<int>(raw.size());
            VideoVolume video;
            video.pixels = Tensor({K, H, W});
            for (int f = 0; f < K; ++f)
                for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
                    video.pixels[static_cast<int64_t>(f) * H * W + i] =
                        raw[static_cast<size_t>(f)][static_cast<size_t>(i)] / 127.5 - 1.0;
            video.id = id;
            if (meta.contains("frame_rate")) video.frame_rate = meta["frame_rate"].get<double>();
            video.validate();

            int sw = 0, sh = 0;
            auto seg_raw = read_pgm((dir / segmentation_filename(format)).string(), sw, sh);
            if (sw != W || sh != H) throw std::runtime_error("segmentation dimensions mismatch");
            SegmentationMap seg;
            seg.height = H;
            seg.width  = W;
            seg.labels.assign(seg_raw.begin(), seg_raw.end());
            seg.label_set = label_set_for(format, meta.is_null() ? nullptr : &meta);
            seg.validate();

            ds.items.emplace_back(std::move(video), std::move(seg));
        } catch (const std::exception& e) {
            ds.rejects.push_back(id + ": " + e.what());
            std::fprintf(stderr, "[freecho] load_dataset: skipping %s (%s)\n", id.c_str(),
                         e.what());
        }
    }
    return ds;
}

void save_toy_container(const std::string& path, const std::vector<LabeledVideo>& items,
                        double train_fraction, double val_fraction) {
    fs::create_directories(path);
    json manifest;
    manifest["format"] = "toy-container";
    json ids           = json::array();

    for (const auto& [video, seg] : items) {
        const fs::path dir = fs::path(path) / video.id;
        fs::create_directories(dir);
        const int K = video.frames(), H = video.height(), W = video.width();
        for (int f = 0; f < K; ++f) {
            Tensor frame({H, W});
            std::copy(video.pixels.data() + static_cast<int64_t>(f) * H * W,
                      video.pixels.data() + static_cast<int64_t>(f + 1) * H * W, frame.data());
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%03d.pgm", f);
            write_pgm((dir / name).string(), denormalize_u8(frame), W, H);
        }
        std::vector<uint8_t> seg_raw(seg.labels.begin(), seg.labels.end());
        write_pgm((dir / "segmentation.pgm").string(), seg_raw, W, H);

        json meta;
        meta["id"]         = video.id;
        meta["frame_rate"] = video.frame_rate;
        meta["num_frames"] = K;
        json labels        = json::object();
        for (const auto& [l, n] : seg.label_set) labels[std::to_string(l)] = n;
        meta["labels"] = labels;
        std::ofstream mf(dir / "meta.json");
        mf << meta.dump(2) << "\n";

        ids.push_back(video.id);
    }

    manifest["videos"] = ids;
    const size_t n       = items.size();
    const size_t n_train = static_cast<size_t>(std::round(train_fraction * n));
    const size_t n_val   = static_cast<size_t>(std::round(val_fraction * n));
    json splits;
    json train = json::array(), val = json::array(), test = json::array();
    for (size_t i = 0; i < n; ++i) {
        if (i < n_train)
            train.push_back(items[i].first.id);
        else if (i < n_train + n_val)
            val.push_back(items[i].first.id);
        else
            test.push_back(items[i].first.id);
    }
    splits["train"]    = train;
    splits["val"]      = val;
    splits["test"]     = test;
    manifest["splits"] = splits;
    std::ofstream mf(fs::path(path) / "manifest.json");
    mf << manifest.dump(2) << "\n";
}

VideoVolume take_first_frames(const VideoVolume& video, int k, bool loop) {
    if (k < 1) throw std::invalid_argument("take_first_frames: k must be >= 1");
    const int K = video.frames(), H = video.height(), W = video.width();
    if (K < k && !loop)
        throw std::invalid_argument("take_first_frames: video " + video.id + " has " +
                                    std::to_string(K) + " frames, need " + std::to_string(k));
    if (K < k)
        std::fprintf(stderr, "[freecho] take_first_frames: looping %s (%d -> %d frames)\n",
                     video.id.c_str(), K, k);
    VideoVolume out;
    out.pixels     = Tensor({k, H, W});
    out.frame_rate = video.frame_rate;
    out.id         = video.id;
    const int64_t plane = static_cast<int64_t>(H) * W;
    for (int f = 0; f < k; ++f) {
        const int src = f % K;
        std::copy(video.pixels.data() + src * plane, video.pixels.data() + (src + 1) * plane,
                  out.pixels.data() + f * plane);
    }
    return out;
}

int64_t normalize(Tensor& pixels, InputRange range) {
    int64_t clamped  = 0;
    const double lo  = 0.0;
    const double hi  = range == InputRange::kU8 ? 255.0 : 1.0;
    const double div = range == InputRange::kU8 ? 127.5 : 0.5;
    for (auto& v : pixels.values()) {
        if (v < lo || v > hi) {
            v = std::clamp(v, lo, hi);
            ++clamped;
        }
        v = v / div - 1.0;
    }
    if (clamped > 0)
        std::fprintf(stderr, "[freecho] normalize: clamped %lld out-of-range values\n",
                     static_cast<long long>(clamped));
    return clamped;
}

std::vector<uint8_t> denormalize_u8(const Tensor& pixels) {
    std::vector<uint8_t> out(static_cast<size_t>(pixels.numel()));
    for (int64_t i = 0; i < pixels.numel(); ++i) {
        const double v = std::clamp((pixels[i] + 1.0) * 127.5, 0.0, 255.0);
        out[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v));
    }
    return out;
}

Tensor to_model_input(const VideoVolume& video) {
    return video.pixels.reshaped({1, video.frames(), video.height(), video.width()});
}

}  // namespace freecho
