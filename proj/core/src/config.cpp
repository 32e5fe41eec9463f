#include "freecho/config.hpp"

#include <fstream>

#include <json.hpp>

#include "freecho/sampler.hpp"

namespace freecho {

using nlohmann::json;

ToyDatasetConfig DataSection::toy_config() const {
    ToyDatasetConfig t;
    t.num_videos       = toy_num_videos;
    t.frames           = frames;
    t.height           = height;
    t.width            = width;
    t.num_labels       = num_labels;
    t.motion_amplitude = motion_amplitude;
    t.speckle_scale    = speckle_scale;
    t.cone_mask        = cone_mask;
    t.seed             = toy_seed;
    return t;
}

Config Config::defaults() {
    Config c;
    // paper values: sigma_data 0.5, P_mean -1.2, P_std 1.2, 64 steps,
    // lr 1e-3, batch 16, 100k iterations, t_i 15, guidance 7.0,
    // epsilon 1e-3, K 24 at 128x128, 10 samples per segmentation
    c.model.frames = c.data.frames;
    c.model.height = c.data.height;
    c.model.width  = c.data.width;
    return c;
}

Config Config::desk_preset() {
    Config c;
    c.schedule.num_steps = 32;

    c.model.base_channels       = 8;
    c.model.channel_multipliers = {1, 2};
    c.model.num_down_blocks     = 1;
    c.model.num_up_blocks       = 1;
    c.model.num_middle_blocks   = 2;

    c.data.frames         = 8;
    c.data.height         = 32;
    c.data.width          = 32;
    c.data.toy_num_videos = 80;
    c.data.train_fraction = 0.8;

    c.model.frames = c.data.frames;
    c.model.height = c.data.height;
    c.model.width  = c.data.width;

    c.training.batch_size       = 4;
    c.training.total_iterations = 2000;
    c.training.checkpoint_every = 500;
    c.training.log_every        = 25;

    c.sampler.solver     = "euler";
    c.sampler.start_step = 8;  // 25% of 32

    c.eval.threads = 2;
    return c;
}

namespace {

void check_keys(const json& j, const std::string& section,
                const std::vector<std::string>& known) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const auto& k : known)
            if (k == key) ok = true;
        if (!ok)
            throw ConfigError("config: unknown key \"" + (section.empty() ? key
                                                                          : section + "." + key) +
                              "\"");
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: bad value for \"") + key + "\": " + e.what());
        }
    }
}

}  // namespace

Config Config::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    check_keys(j, "",
               {"schedule", "model", "training", "sampler", "pseudo", "data", "eval"});

    Config c = Config::defaults();

    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        check_keys(s, "schedule",
                   {"sigma_data", "p_mean", "p_std", "sigma_min", "sigma_max", "rho", "num_steps",
                    "edm_standard_skip"});
        get_if(s, "sigma_data", c.schedule.sigma_data);
        get_if(s, "p_mean", c.schedule.p_mean);
        get_if(s, "p_std", c.schedule.p_std);
        get_if(s, "sigma_min", c.schedule.sigma_min);
        get_if(s, "sigma_max", c.schedule.sigma_max);
        get_if(s, "rho", c.schedule.rho);
        get_if(s, "num_steps", c.schedule.num_steps);
        bool std_skip = c.schedule.skip_form == SkipForm::kEdmStandard;
        get_if(s, "edm_standard_skip", std_skip);
        c.schedule.skip_form = std_skip ? SkipForm::kEdmStandard : SkipForm::kPaper;
    }

    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m, "model",
                   {"base_channels", "channel_multipliers", "num_middle_blocks", "in_channels",
                    "with_condition_channel", "emb_dim"});
        get_if(m, "base_channels", c.model.base_channels);
        get_if(m, "channel_multipliers", c.model.channel_multipliers);
        get_if(m, "num_middle_blocks", c.model.num_middle_blocks);
        get_if(m, "in_channels", c.model.in_channels);
        get_if(m, "with_condition_channel", c.model.with_condition_channel);
        get_if(m, "emb_dim", c.model.emb_dim);
        c.model.num_down_blocks = static_cast<int>(c.model.channel_multipliers.size()) - 1;
        c.model.num_up_blocks   = c.model.num_down_blocks;
    }

    if (j.contains("training")) {
        const json& t = j["training"];
        check_keys(t, "training",
                   {"learning_rate", "batch_size", "total_iterations", "condition_dropout_prob",
                    "seed", "checkpoint_every", "log_every", "ema", "ema_decay"});
        get_if(t, "learning_rate", c.training.learning_rate);
        get_if(t, "batch_size", c.training.batch_size);
        get_if(t, "total_iterations", c.training.total_iterations);
        get_if(t, "condition_dropout_prob", c.training.condition_dropout_prob);
        get_if(t, "seed", c.training.seed);
        get_if(t, "checkpoint_every", c.training.checkpoint_every);
        get_if(t, "log_every", c.training.log_every);
        get_if(t, "ema", c.training.ema);
        get_if(t, "ema_decay", c.training.ema_decay);
    }

    if (j.contains("sampler")) {
        const json& s = j["sampler"];
        check_keys(s, "sampler", {"solver", "start_step", "guidance_scale", "seed"});
        get_if(s, "solver", c.sampler.solver);
        get_if(s, "start_step", c.sampler.start_step);
        get_if(s, "guidance_scale", c.sampler.guidance_scale);
        get_if(s, "seed", c.sampler.seed);
    }

    if (j.contains("pseudo")) {
        const json& p = j["pseudo"];
        check_keys(p, "pseudo", {"bins", "epsilon", "max_iters", "tol", "hist_frames_per_video"});
        get_if(p, "bins", c.pseudo.bins);
        get_if(p, "epsilon", c.pseudo.epsilon);
        get_if(p, "max_iters", c.pseudo.max_iters);
        get_if(p, "tol", c.pseudo.tol);
        get_if(p, "hist_frames_per_video", c.pseudo.hist_frames_per_video);
    }

    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, "data",
                   {"format", "frames", "height", "width", "num_labels", "motion_amplitude",
                    "speckle_scale", "cone_mask", "toy_num_videos", "toy_seed", "train_fraction",
                    "loop_short_videos"});
        get_if(d, "format", c.data.format);
        get_if(d, "frames", c.data.frames);
        get_if(d, "height", c.data.height);
        get_if(d, "width", c.data.width);
        get_if(d, "num_labels", c.data.num_labels);
        get_if(d, "motion_amplitude", c.data.motion_amplitude);
        get_if(d, "speckle_scale", c.data.speckle_scale);
        get_if(d, "cone_mask", c.data.cone_mask);
        get_if(d, "toy_num_videos", c.data.toy_num_videos);
        get_if(d, "toy_seed", c.data.toy_seed);
        get_if(d, "train_fraction", c.data.train_fraction);
        get_if(d, "loop_short_videos", c.data.loop_short_videos);
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, "eval",
                   {"samples_per_condition", "report_l2", "extractor_seed", "extractor_dim",
                    "threads", "preview"});
        get_if(e, "samples_per_condition", c.eval.samples_per_condition);
        get_if(e, "report_l2", c.eval.report_l2);
        get_if(e, "extractor_seed", c.eval.extractor_seed);
        get_if(e, "extractor_dim", c.eval.extractor_dim);
        get_if(e, "threads", c.eval.threads);
        get_if(e, "preview", c.eval.preview);
    }

    c.model.frames = c.data.frames;
    c.model.height = c.data.height;
    c.model.width  = c.data.width;
    return c;
}

std::string Config::to_json_text() const {
    json j;
    j["schedule"] = {{"sigma_data", schedule.sigma_data},
                     {"p_mean", schedule.p_mean},
                     {"p_std", schedule.p_std},
                     {"sigma_min", schedule.sigma_min},
                     {"sigma_max", schedule.sigma_max},
                     {"rho", schedule.rho},
                     {"num_steps", schedule.num_steps},
                     {"edm_standard_skip", schedule.skip_form == SkipForm::kEdmStandard}};
    j["model"]    = {{"base_channels", model.base_channels},
                     {"channel_multipliers", model.channel_multipliers},
                     {"num_middle_blocks", model.num_middle_blocks},
                     {"in_channels", model.in_channels},
                     {"with_condition_channel", model.with_condition_channel},
                     {"emb_dim", model.emb_dim}};
    j["training"] = {{"learning_rate", training.learning_rate},
                     {"batch_size", training.batch_size},
                     {"total_iterations", training.total_iterations},
                     {"condition_dropout_prob", training.condition_dropout_prob},
                     {"seed", training.seed},
                     {"checkpoint_every", training.checkpoint_every},
                     {"log_every", training.log_every},
                     {"ema", training.ema},
                     {"ema_decay", training.ema_decay}};
    j["sampler"]  = {{"solver", sampler.solver},
                     {"start_step", sampler.start_step},
                     {"guidance_scale", sampler.guidance_scale},
                     {"seed", sampler.seed}};
    j["pseudo"]   = {{"bins", pseudo.bins},
                     {"epsilon", pseudo.epsilon},
                     {"max_iters", pseudo.max_iters},
                     {"tol", pseudo.tol},
                     {"hist_frames_per_video", pseudo.hist_frames_per_video}};
    j["data"]     = {{"format", data.format},
                     {"frames", data.frames},
                     {"height", data.height},
                     {"width", data.width},
                     {"num_labels", data.num_labels},
                     {"motion_amplitude", data.motion_amplitude},
                     {"speckle_scale", data.speckle_scale},
                     {"cone_mask", data.cone_mask},
                     {"toy_num_videos", data.toy_num_videos},
                     {"toy_seed", data.toy_seed},
                     {"train_fraction", data.train_fraction},
                     {"loop_short_videos", data.loop_short_videos}};
    j["eval"]     = {{"samples_per_condition", eval.samples_per_condition},
                     {"report_l2", eval.report_l2},
                     {"extractor_seed", eval.extractor_seed},
                     {"extractor_dim", eval.extractor_dim},
                     {"threads", eval.threads},
                     {"preview", eval.preview}};
    return j.dump(2);
}

Config Config::load(const std::string& path, const std::string& preset,
                    const std::vector<std::pair<std::string, std::string>>& overrides) {
    json base;
    if (!preset.empty()) {
        if (preset == "paper")
            base = json::parse(Config::defaults().to_json_text());
        else if (preset == "desk")
            base = json::parse(Config::desk_preset().to_json_text());
        else
            throw ConfigError("config: unknown preset \"" + preset + "\" (paper|desk)");
    } else {
        base = json::parse(Config::defaults().to_json_text());
    }

    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("config: cannot open " + path);
        json file_json;
        try {
            f >> file_json;
        } catch (const json::exception& e) {
            throw ConfigError("config: parse error in " + path + ": " + e.what());
        }
        base.merge_patch(file_json);
    }

    for (const auto& [key, value] : overrides) {
        std::string pointer_str = "/";
        for (char ch : key) pointer_str += ch == '.' ? '/' : ch;
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // plain string
        }
        try {
            base[json::json_pointer(pointer_str)] = parsed;
        } catch (const json::exception& e) {
            throw ConfigError("config: bad override key \"" + key + "\": " + e.what());
        }
    }

    Config c = from_json_text(base.dump());
    c.validate();
    return c;
}

void Config::validate() const {
    try {
        schedule.validate();
        model.validate();
        training.validate();
        solver();
        if (sampler.start_step < 0 || sampler.start_step > schedule.num_steps)
            throw std::invalid_argument("sampler.start_step must lie in [0, num_steps]");
        if (sampler.guidance_scale < 0.0)
            throw std::invalid_argument("sampler.guidance_scale must be >= 0");
        if (pseudo.bins < 2) throw std::invalid_argument("pseudo.bins must be >= 2");
        if (!(pseudo.epsilon > 0.0)) throw std::invalid_argument("pseudo.epsilon must be > 0");
        if (pseudo.hist_frames_per_video < 1)
            throw std::invalid_argument("pseudo.hist_frames_per_video must be >= 1");
        if (data.frames < 1 || data.height < 8 || data.width < 8)
            throw std::invalid_argument("data dims too small");
        if (data.train_fraction <= 0.0 || data.train_fraction > 1.0)
            throw std::invalid_argument("data.train_fraction must lie in (0,1]");
        dataset_format_from_string(data.format);
        if (eval.samples_per_condition < 1)
            throw std::invalid_argument("eval.samples_per_condition must be >= 1");
        if (eval.threads < 1) throw std::invalid_argument("eval.threads must be >= 1");
        if (eval.extractor_dim < 2) throw std::invalid_argument("eval.extractor_dim must be >= 2");
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

Solver Config::solver() const {
    if (sampler.solver == "euler") return Solver::kEuler;
    if (sampler.solver == "heun") return Solver::kHeun;
    throw std::invalid_argument("sampler.solver must be \"euler\" or \"heun\"");
}

}  // namespace freecho
