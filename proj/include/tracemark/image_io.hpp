#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tracemark/core.hpp"

namespace tracemark {

inline cv::Mat to_mat_bgr8(const Image& img) {
    check_image_shape(img, "to_mat_bgr8");
    const int h = static_cast<int>(img.dim(0));
    const int w = static_cast<int>(img.dim(1));
    cv::Mat m(h, w, CV_8UC3);
    for (int r = 0; r < h; ++r) {
        auto* row = m.ptr<cv::Vec3b>(r);
        for (int c = 0; c < w; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(r) * w + c) * 3;
            const float rr = img[base + 0], gg = img[base + 1], bb = img[base + 2];
            row[c][0] = static_cast<unsigned char>(std::lround(std::clamp(bb, 0.0f, 1.0f) * 255.0f));
            row[c][1] = static_cast<unsigned char>(std::lround(std::clamp(gg, 0.0f, 1.0f) * 255.0f));
            row[c][2] = static_cast<unsigned char>(std::lround(std::clamp(rr, 0.0f, 1.0f) * 255.0f));
        }
    }
    return m;
}

inline Image from_mat_bgr8(const cv::Mat& m) {
    if (m.empty() || m.type() != CV_8UC3)
        throw std::invalid_argument("from_mat_bgr8: expected non-empty 8-bit 3-channel mat");
    Image img = make_image(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r) {
        const auto* row = m.ptr<cv::Vec3b>(r);
        for (int c = 0; c < m.cols; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(r) * m.cols + c) * 3;
            img[base + 0] = row[c][2] / 255.0f;
            img[base + 1] = row[c][1] / 255.0f;
            img[base + 2] = row[c][0] / 255.0f;
        }
    }
    return img;
}

inline bool is_png_path(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext == ".png";
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
    if (!is_png_path(path))
        throw std::invalid_argument("save_png: refusing non-PNG path " + path.string());
    if (!cv::imwrite(path.string(), to_mat_bgr8(img)))
        throw std::runtime_error("save_png: write failed for " + path.string());
}

inline Image load_image(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("load_image: cannot decode " + path.string());
    return from_mat_bgr8(m);
}

inline Image resize_image(const Image& img, int h, int w) {
    cv::Mat src = to_mat_bgr8(img);
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_AREA);
    return from_mat_bgr8(dst);
}

}  // namespace tracemark
