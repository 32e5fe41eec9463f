#pragma once

#include <string>
#include <vector>

#include "freecho/config.hpp"

namespace freecho::cli {

// Shared invocation context: config file, preset, dotted overrides, and the
// output directory. Every command echoes the effective config and a seed
// record into out_dir.
struct CommonArgs {
    std::string config_path;
    std::string preset;  // "", "paper", "desk"
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string out_dir;
    bool has_seed = false;
    uint64_t seed = 0;
};

Config load_config(const CommonArgs& args);

int cmd_make_data(const CommonArgs& args);
int cmd_train(const CommonArgs& args, const std::string& dataset_path);
int cmd_sample(const CommonArgs& args, const std::string& checkpoint_path,
               const std::string& segmentation_path, const std::string& method);
int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint_path,
                 const std::string& test_path, const std::vector<std::string>& methods,
                 bool oracle_generator = false);
int cmd_sweep_t(const CommonArgs& args, const std::string& checkpoint_path,
                const std::string& test_path, const std::vector<int>& t_values);

}  // namespace freecho::cli
