#include "freecho/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace freecho {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::string MetricReport::to_table(bool include_l2) const {
    std::ostringstream os;
    os << "| Method        | Step t | SSIM    | PSNR    | FID      | FVD      |";
    if (include_l2) os << " L2      |";
    os << "\n|---------------|--------|---------|---------|----------|----------|";
    if (include_l2) os << "---------|";
    os << "\n";
    for (const MetricRow& r : rows) {
        os << "| " << r.method;
        for (size_t i = r.method.size(); i < 13; ++i) os << ' ';
        os << " | ";
        std::string t = r.step_t < 0 ? "-" : std::to_string(r.step_t);
        os << t;
        for (size_t i = t.size(); i < 6; ++i) os << ' ';
        os << " | " << fmt(r.ssim) << "  | " << fmt(r.psnr) << (r.psnr < 10 ? "  " : " ")
           << "| " << fmt(r.fid) << (r.fid < 10 ? "   " : "  ") << "| " << fmt(r.fvd)
           << (r.fvd < 10 ? "   " : "  ") << "|";
        if (include_l2) os << " " << fmt(r.l2) << " |";
        os << "\n";
    }
    os << "feature extractor: " << extractor_name
       << " (desk-scale substitute; FID/FVD not comparable to InceptionV3 / R(2+1)D values)\n";
    for (const MetricRow& r : rows)
        for (const std::string& f : r.failures)
            os << "note: " << r.method << ": excluded " << f << "\n";
    return os.str();
}

std::string MetricReport::to_json() const {
    json j;
    j["extractor"] = extractor_name;
    json rs        = json::array();
    for (const MetricRow& r : rows) {
        json e;
        e["method"]                = r.method;
        e["step_t"]                = r.step_t;
        e["ssim"]                  = r.ssim;
        e["psnr"]                  = r.psnr;
        e["fid"]                   = r.fid;
        e["fvd"]                   = r.fvd;
        if (!std::isnan(r.l2)) e["l2"] = r.l2;
        e["conditions"]            = r.conditions;
        e["samples_per_condition"] = r.samples_per_condition;
        e["failures"]              = r.failures;
        rs.push_back(e);
    }
    j["rows"] = rs;
    return j.dump(2);
}

namespace {

struct ConditionResult {
    bool failed = false;
    std::string failure;
    double ssim_sum = 0.0, psnr_sum = 0.0, l2_sum = 0.0;
    int pairs = 0;
    std::vector<std::vector<double>> gen_frame_feats, gen_video_feats;
    std::vector<std::vector<double>> real_frame_feats, real_video_feats;
};

ConditionResult evaluate_condition(const GeneratorFn& generator, const LabeledVideo& item,
                                   int samples, const FeatureExtractor& image_extractor,
                                   const FeatureExtractor& video_extractor, uint64_t cond_seed) {
    ConditionResult res;
    const VideoVolume& gt     = item.first;
    const SegmentationMap& sm = item.second;
    const int K = gt.frames(), H = gt.height(), W = gt.width();
    const int64_t plane = static_cast<int64_t>(H) * W;

    try {
        for (int s = 0; s < samples; ++s) {
            const uint64_t sample_seed = Rng::mix(cond_seed, static_cast<uint64_t>(s));
            VideoVolume gen            = generator(sm, sample_seed);
            if (!gen.pixels.same_shape(gt.pixels))
                throw std::runtime_error("generator returned mismatched shape");

            res.ssim_sum += video_ssim(gen.pixels, gt.pixels);
            res.psnr_sum += psnr(gen.pixels, gt.pixels, 2.0);
            double mse = 0.0;
            for (int64_t i = 0; i < gen.pixels.numel(); ++i) {
                const double d = gen.pixels[i] - gt.pixels[i];
                mse += d * d;
            }
            res.l2_sum += std::sqrt(mse / static_cast<double>(gen.pixels.numel()));
            ++res.pairs;

            for (int f = 0; f < K; ++f) {
                Tensor frame({H, W});
                std::copy(gen.pixels.data() + f * plane, gen.pixels.data() + (f + 1) * plane,
                          frame.data());
                res.gen_frame_feats.push_back(image_extractor.extract(frame));
            }
            res.gen_video_feats.push_back(video_extractor.extract(gen.pixels));
        }
        for (int f = 0; f < K; ++f) {
            Tensor frame({H, W});
            std::copy(gt.pixels.data() + f * plane, gt.pixels.data() + (f + 1) * plane,
                      frame.data());
            res.real_frame_feats.push_back(image_extractor.extract(frame));
        }
        res.real_video_feats.push_back(video_extractor.extract(gt.pixels));
    } catch (const std::exception& e) {
        res.failed  = true;
        res.failure = std::string("condition ") + gt.id + ": " + e.what();
    }
    return res;
}

}  // namespace

MetricRow evaluate_method(const GeneratorFn& generator, const std::string& method_name,
                          int step_t, const std::vector<LabeledVideo>& test_set,
                          int samples_per_condition, const FeatureExtractor& image_extractor,
                          const FeatureExtractor& video_extractor, uint64_t seed, int threads) {
    if (test_set.empty()) throw std::invalid_argument("evaluate_method: empty test set");
    if (samples_per_condition < 1)
        throw std::invalid_argument("evaluate_method: samples_per_condition must be >= 1");

    const int n = static_cast<int>(test_set.size());
    std::vector<ConditionResult> results(static_cast<size_t>(n));

    auto work = [&](int begin, int end) {
        for (int i = begin; i < end; ++i)
            results[static_cast<size_t>(i)] = evaluate_condition(
                generator, test_set[static_cast<size_t>(i)], samples_per_condition,
                image_extractor, video_extractor, Rng::mix(seed, static_cast<uint64_t>(i)));
    };

    const int nthreads = std::max(1, std::min(threads, n));
    if (nthreads == 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&]() {
                while (true) {
                    const int i = next.fetch_add(1);
                    if (i >= n) break;
                    work(i, i + 1);
                }
            });
        for (auto& th : pool) th.join();
    }

    // deterministic merge in condition order
    MetricRow row;
    row.method                = method_name;
    row.step_t                = step_t;
    row.samples_per_condition = samples_per_condition;
    double ssim_sum = 0.0, psnr_sum = 0.0, l2_sum = 0.0;
    int64_t pairs = 0;
    std::vector<std::vector<double>> gen_frames, gen_videos, real_frames, real_videos;
    for (const ConditionResult& r : results) {
        if (r.failed) {
            row.failures.push_back(r.failure);
            continue;
        }
        ++row.conditions;
        ssim_sum += r.ssim_sum;
        psnr_sum += r.psnr_sum;
        l2_sum += r.l2_sum;
        pairs += r.pairs;
        gen_frames.insert(gen_frames.end(), r.gen_frame_feats.begin(), r.gen_frame_feats.end());
        gen_videos.insert(gen_videos.end(), r.gen_video_feats.begin(), r.gen_video_feats.end());
        real_frames.insert(real_frames.end(), r.real_frame_feats.begin(),
                           r.real_frame_feats.end());
        real_videos.insert(real_videos.end(), r.real_video_feats.begin(),
                           r.real_video_feats.end());
    }
    if (pairs == 0) throw std::runtime_error("evaluate_method: every condition failed");
    row.ssim = ssim_sum / static_cast<double>(pairs);
    row.psnr = psnr_sum / static_cast<double>(pairs);
    row.l2   = l2_sum / static_cast<double>(pairs);
    row.fid  = frechet_distance(gen_frames, real_frames);
    row.fvd  = frechet_distance(gen_videos, real_videos);
    return row;
}

}  // namespace freecho
