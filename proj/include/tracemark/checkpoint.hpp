#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "tracemark/nn.hpp"

namespace tracemark {

// Checkpoint directory layout:
//   manifest.json  -- architecture name, hyperparameters, tensor index
//   weights.bin    -- concatenated raw little-endian f32 blobs, offsets in
//                     the manifest index
// Save followed by load is bit-exact.

inline void save_checkpoint(const nn::ParamStore& ps, const std::filesystem::path& dir,
                            const std::string& architecture,
                            const nlohmann::json& extras = {}) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["architecture"] = architecture;
    if (!extras.is_null()) manifest["config"] = extras;

    std::ofstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("save_checkpoint: cannot open weights.bin");
    std::uint64_t offset = 0;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, v] : ps.entries()) {
        nlohmann::json rec;
        rec["name"] = name;
        rec["dtype"] = "f32";
        rec["shape"] = v->value.shape();
        rec["offset"] = offset;
        const std::uint64_t bytes = static_cast<std::uint64_t>(v->value.numel()) * sizeof(float);
        rec["bytes"] = bytes;
        tensors.push_back(rec);
        bin.write(reinterpret_cast<const char*>(v->value.data()),
                  static_cast<std::streamsize>(bytes));
        offset += bytes;
    }
    manifest["tensors"] = tensors;

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("save_checkpoint: cannot open manifest.json");
    mf << manifest.dump(2) << "\n";
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("read_manifest: cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    mf >> manifest;
    return manifest;
}

// Loads blobs into an already-constructed network; names and shapes must
// match the manifest exactly.
inline void load_checkpoint(nn::ParamStore& ps, const std::filesystem::path& dir,
                            const std::string& expected_architecture = "") {
    nlohmann::json manifest = read_manifest(dir);
    if (!expected_architecture.empty() &&
        manifest.at("architecture").get<std::string>() != expected_architecture)
        throw std::runtime_error("load_checkpoint: architecture mismatch, found " +
                                 manifest.at("architecture").get<std::string>());
    std::ifstream bin(dir / "weights.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("load_checkpoint: cannot open weights.bin");
    for (const auto& rec : manifest.at("tensors")) {
        const std::string name = rec.at("name").get<std::string>();
        nn::Var v = ps.get(name);
        const auto shape = rec.at("shape").get<std::vector<std::int64_t>>();
        if (shape != v->value.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        if (rec.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("load_checkpoint: unsupported dtype for " + name);
        bin.seekg(static_cast<std::streamoff>(rec.at("offset").get<std::uint64_t>()));
        bin.read(reinterpret_cast<char*>(v->value.data()),
                 static_cast<std::streamsize>(v->value.numel() * sizeof(float)));
        if (!bin) throw std::runtime_error("load_checkpoint: truncated blob for " + name);
    }
}

}  // namespace tracemark
