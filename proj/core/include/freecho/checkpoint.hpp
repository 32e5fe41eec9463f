#pragma once

#include <string>
#include <utility>
#include <vector>

#include "freecho/tensor.hpp"

namespace freecho {

// Named-parameter container. Serialized as a magic + JSON header
// (version, step, config echo, tensor index) followed by raw
// little-endian float64 payloads.
struct Checkpoint {
    int version = 1;
    int64_t step = 0;
    std::string config_json;  // effective config echo, may be "{}"
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace freecho
