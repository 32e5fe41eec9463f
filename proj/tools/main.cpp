#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"

using freecho::ConfigError;
using freecho::cli::CommonArgs;

int main(int argc, char** argv) {
    CLI::App app{"freecho: training-free conditioning of a video diffusion model on a single "
                 "end-diastolic segmentation map"};
    app.require_subcommand(1);

    CommonArgs common;
    std::vector<std::string> set_args;
    app.add_option("--config", common.config_path, "JSON config file");
    app.add_option("--preset", common.preset, "built-in preset: paper | desk");
    app.add_option("--set", set_args, "dotted config override, e.g. sampler.start_step=15")
        ->take_all();
    auto* seed_opt = app.add_option("--seed", common.seed, "override training and sampler seeds");
    app.add_option("--out", common.out_dir, "output directory")->required();

    auto* make_data = app.add_subcommand("make-data", "generate a toy echo dataset container");

    std::string dataset_path;
    auto* train = app.add_subcommand("train", "train the denoiser");
    train->add_option("--data", dataset_path, "dataset container path")->required();

    std::string checkpoint_path, segmentation_path, method = "free-echo";
    auto* sample = app.add_subcommand("sample", "generate videos from a checkpoint");
    sample->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    sample->add_option("--segmentation", segmentation_path,
                       "end-diastolic segmentation raster (8-bit PGM, label ids as pixels)");
    sample->add_option("--method", method, "free-echo | sdedit | cls-free | unconditional");

    std::string eval_checkpoint, eval_data;
    std::vector<std::string> methods{"free-echo"};
    bool oracle_generator = false;
    auto* evaluate = app.add_subcommand("evaluate", "run the evaluation protocol");
    evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    evaluate->add_option("--data", eval_data, "dataset container path")->required();
    evaluate->add_option("--methods", methods, "methods to evaluate")->delimiter(',');
    evaluate->add_flag("--oracle-generator", oracle_generator,
                       "testing hook: the generator returns the ground truth");

    std::string sweep_checkpoint, sweep_data;
    std::vector<int> t_values;
    auto* sweep = app.add_subcommand("sweep-t", "evaluate free-echo over several start steps");
    sweep->add_option("--checkpoint", sweep_checkpoint, "checkpoint file")->required();
    sweep->add_option("--data", sweep_data, "dataset container path")->required();
    sweep->add_option("--t", t_values, "start steps, e.g. 15,35,55")
        ->delimiter(',')
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // bad flags are validation errors
    }

    common.has_seed = seed_opt->count() > 0;
    for (const std::string& s : set_args) {
        const auto pos = s.find('=');
        if (pos == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got \"%s\"\n", s.c_str());
            return 1;
        }
        common.overrides.emplace_back(s.substr(0, pos), s.substr(pos + 1));
    }

    try {
        if (make_data->parsed()) return freecho::cli::cmd_make_data(common);
        if (train->parsed()) return freecho::cli::cmd_train(common, dataset_path);
        if (sample->parsed())
            return freecho::cli::cmd_sample(common, checkpoint_path, segmentation_path, method);
        if (evaluate->parsed())
            return freecho::cli::cmd_evaluate(common, eval_checkpoint, eval_data, methods,
                                              oracle_generator);
        if (sweep->parsed())
            return freecho::cli::cmd_sweep_t(common, sweep_checkpoint, sweep_data, t_values);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return 2;
    }
    return 1;
}
