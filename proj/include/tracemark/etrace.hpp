#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "tracemark/core.hpp"
#include "tracemark/rng.hpp"

namespace tracemark {

// Erasable trace: an exact blue-channel level written at a secret set of
// pixel positions. Survives lossless storage, dies in any generative
// reconstruction.
struct ETraceKey {
    std::vector<std::pair<int, int>> positions;  // (row, col), unique
    int value_level = 128;                       // blue level on the 8-bit grid
    std::uint64_t seed = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    int tolerance_levels = 0;      // allowed |difference| in 8-bit levels
    double match_threshold = 0.90;

    float value() const { return static_cast<float>(value_level) / 255.0f; }
};

struct ETraceReport {
    double matched_fraction = 0.0;
    bool present = false;
};

inline ETraceKey derive_key(std::uint64_t seed, std::int64_t height, std::int64_t width,
                            std::int64_t position_count = 64, int value_level = 128) {
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("derive_key: bad image shape");
    const std::int64_t total = height * width;
    if (position_count <= 0 || position_count > total)
        throw std::invalid_argument("derive_key: position_count out of range");
    if (value_level < 0 || value_level > 255)
        throw std::invalid_argument("derive_key: value_level out of range");

    // Partial Fisher-Yates over pixel indices: uniform draw without replacement.
    Rng rng(seed);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
    ETraceKey key;
    key.positions.reserve(static_cast<std::size_t>(position_count));
    for (std::int64_t i = 0; i < position_count; ++i) {
        std::int64_t j = i + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(total - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        const std::int64_t p = idx[static_cast<std::size_t>(i)];
        key.positions.emplace_back(static_cast<int>(p / width), static_cast<int>(p % width));
    }
    key.value_level = value_level;
    key.seed = seed;
    key.height = height;
    key.width = width;
    return key;
}

inline void check_key_bounds(const ETraceKey& key, const Image& img) {
    check_image_shape(img, "etrace");
    for (auto [r, c] : key.positions)
        if (r < 0 || c < 0 || r >= img.dim(0) || c >= img.dim(1))
            throw std::invalid_argument("etrace: key position out of image bounds");
}

inline Image embed_etrace(const Image& face, const ETraceKey& key) {
    check_key_bounds(key, face);
    Image out = face;
    const std::int64_t w = face.dim(1);
    for (auto [r, c] : key.positions)
        out[(static_cast<std::int64_t>(r) * w + c) * 3 + 2] = key.value();
    return out;
}

inline ETraceReport detect_etrace(const Image& face, const ETraceKey& key) {
    check_key_bounds(key, face);
    const std::int64_t w = face.dim(1);
    std::size_t matched = 0;
    for (auto [r, c] : key.positions) {
        const float b = face[(static_cast<std::int64_t>(r) * w + c) * 3 + 2];
        const int level = static_cast<int>(std::lround(std::clamp(b, 0.0f, 1.0f) * 255.0f));
        if (std::abs(level - key.value_level) <= key.tolerance_levels) ++matched;
    }
    ETraceReport rep;
    rep.matched_fraction = key.positions.empty()
                               ? 0.0
                               : static_cast<double>(matched) / static_cast<double>(key.positions.size());
    rep.present = rep.matched_fraction >= key.match_threshold;
    return rep;
}

// Key files are small line-oriented text: "field value" pairs.
inline void save_key(const ETraceKey& key, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_key: cannot open " + path.string());
    out << "seed " << key.seed << "\n"
        << "height " << key.height << "\n"
        << "width " << key.width << "\n"
        << "count " << key.positions.size() << "\n"
        << "value " << key.value_level << "\n"
        << "tolerance " << key.tolerance_levels << "\n"
        << "threshold " << key.match_threshold << "\n";
}

inline ETraceKey load_key(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_key: cannot open " + path.string());
    std::uint64_t seed = 0;
    std::int64_t h = 0, w = 0, count = 0;
    int value = 0, tol = 0;
    double thr = 0.90;
    std::string field;
    while (in >> field) {
        if (field == "seed") in >> seed;
        else if (field == "height") in >> h;
        else if (field == "width") in >> w;
        else if (field == "count") in >> count;
        else if (field == "value") in >> value;
        else if (field == "tolerance") in >> tol;
        else if (field == "threshold") in >> thr;
        else throw std::runtime_error("load_key: unknown field '" + field + "'");
    }
    ETraceKey key = derive_key(seed, h, w, count, value);
    key.tolerance_levels = tol;
    key.match_threshold = thr;
    return key;
}

}  // namespace tracemark
