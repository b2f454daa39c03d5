#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracemark/image_io.hpp"
#include "tracemark/rng.hpp"

namespace tracemark {

namespace fs = std::filesystem;

inline std::uint32_t crc32_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("crc32_file: cannot open " + path.string());
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        crc = crc32(crc, reinterpret_cast<const Bytef*>(buf),
                    static_cast<uInt>(in.gcount()));
    return crc;
}

enum class Split { Train, Test };

struct DatasetEntry {
    std::string file;  // relative to manifest root
    std::uint32_t checksum = 0;
    Split split = Split::Train;
};

struct DatasetManifest {
    fs::path root;
    std::int64_t resolution = 64;
    std::map<std::string, std::vector<DatasetEntry>> identities;
    std::vector<std::string> skipped;  // undecodable source files

    void save(const fs::path& path) const {
        nlohmann::json j;
        j["resolution"] = resolution;
        j["root"] = root.string();
        nlohmann::json ids = nlohmann::json::object();
        for (const auto& [id, entries] : identities) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& e : entries)
                arr.push_back({{"file", e.file},
                               {"crc32", e.checksum},
                               {"split", e.split == Split::Train ? "train" : "test"}});
            ids[id] = arr;
        }
        j["identities"] = ids;
        j["skipped"] = skipped;
        std::ofstream out(path);
        if (!out) throw std::runtime_error("DatasetManifest::save: cannot open " + path.string());
        out << j.dump(2) << "\n";
    }

    static DatasetManifest load(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("DatasetManifest::load: cannot open " + path.string());
        nlohmann::json j;
        in >> j;
        DatasetManifest m;
        m.resolution = j.at("resolution").get<std::int64_t>();
        m.root = j.at("root").get<std::string>();
        for (const auto& [id, arr] : j.at("identities").items()) {
            std::vector<DatasetEntry> entries;
            for (const auto& e : arr)
                entries.push_back({e.at("file").get<std::string>(),
                                   e.at("crc32").get<std::uint32_t>(),
                                   e.at("split").get<std::string>() == "train" ? Split::Train
                                                                               : Split::Test});
            m.identities[id] = std::move(entries);
        }
        m.skipped = j.at("skipped").get<std::vector<std::string>>();
        return m;
    }

    // Loads images for one identity and split, verifying checksums.
    std::vector<Image> load_split(const std::string& identity, Split split) const {
        auto it = identities.find(identity);
        if (it == identities.end())
            throw std::invalid_argument("DatasetManifest: unknown identity '" + identity + "'");
        std::vector<Image> out;
        for (const auto& e : it->second) {
            if (e.split != split) continue;
            const fs::path p = root / e.file;
            if (crc32_file(p) != e.checksum)
                throw std::runtime_error("DatasetManifest: checksum mismatch for " + p.string());
            out.push_back(load_image(p));
        }
        return out;
    }
};

// Validates, resizes and re-encodes a directory of per-identity image
// folders into a normalized PNG tree plus a manifest with checksums and a
// seeded disjoint train/test split. Undecodable files are listed and
// skipped.
inline DatasetManifest ingest(const fs::path& source_root, std::int64_t resolution,
                              const fs::path& out_root, double train_ratio = 0.5,
                              std::uint64_t seed = 0) {
    if (!fs::is_directory(source_root))
        throw std::invalid_argument("ingest: not a directory: " + source_root.string());
    if (resolution < 16) throw std::invalid_argument("ingest: resolution too small");

    DatasetManifest manifest;
    manifest.root = out_root;
    manifest.resolution = resolution;
    fs::create_directories(out_root);

    std::vector<fs::path> identity_dirs;
    for (const auto& entry : fs::directory_iterator(source_root))
        if (entry.is_directory()) identity_dirs.push_back(entry.path());
    std::sort(identity_dirs.begin(), identity_dirs.end());
    if (identity_dirs.empty()) throw std::invalid_argument("ingest: no identity folders");

    for (const auto& dir : identity_dirs) {
        const std::string id = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir))
            if (f.is_regular_file()) files.push_back(f.path());
        std::sort(files.begin(), files.end());

        std::vector<DatasetEntry> entries;
        for (const auto& f : files) {
            Image img;
            try {
                img = load_image(f);
            } catch (const std::exception&) {
                manifest.skipped.push_back(f.string());
                continue;
            }
            img = resize_image(img, static_cast<int>(resolution), static_cast<int>(resolution));
            const std::string rel = id + "/" + f.stem().string() + ".png";
            fs::create_directories(out_root / id);
            save_png(img, out_root / rel);
            entries.push_back({rel, crc32_file(out_root / rel), Split::Train});
        }
        if (entries.empty())
            throw std::invalid_argument("ingest: identity '" + id + "' has no usable images");

        // seeded split, disjoint by construction
        Rng rng(seed ^ std::hash<std::string>{}(id));
        std::vector<std::size_t> order(entries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            std::size_t j = i + rng.uniform_index(order.size() - i);
            std::swap(order[i], order[j]);
        }
        const std::size_t train_n =
            static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(entries.size())));
        for (std::size_t k = 0; k < order.size(); ++k)
            entries[order[k]].split = k < train_n ? Split::Train : Split::Test;

        manifest.identities[id] = std::move(entries);
    }
    manifest.save(out_root / "manifest.json");
    return manifest;
}

}  // namespace tracemark
