#include "freecho/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace freecho {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'F', 'E', 'C', 'K', 'P', 'T', '0', '1'};
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["version"] = ckpt.version;
    header["step"]    = ckpt.step;
    header["config"]  = ckpt.config_json.empty() ? json::object()
                                                 : json::parse(ckpt.config_json);
    json index        = json::array();
    uint64_t offset   = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        json e;
        e["name"]   = name;
        e["shape"]  = t.shape();
        e["dtype"]  = "f64";
        e["offset"] = offset;
        index.push_back(e);
        offset += static_cast<uint64_t>(t.numel()) * sizeof(double);
    }
    header["tensors"] = index;

    const std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : ckpt.tensors)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("load_checkpoint: truncated header in " + path);

    json header = json::parse(hs);
    Checkpoint ckpt;
    ckpt.version     = header.at("version").get<int>();
    ckpt.step        = header.at("step").get<int64_t>();
    ckpt.config_json = header.at("config").dump();
    for (const auto& e : header.at("tensors")) {
        if (e.at("dtype").get<std::string>() != "f64")
            throw std::runtime_error("load_checkpoint: unsupported dtype");
        Tensor t(e.at("shape").get<std::vector<int>>());
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!f) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
        ckpt.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

}  // namespace freecho
