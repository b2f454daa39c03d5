#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tracemark/core.hpp"
#include "tracemark/image_io.hpp"
#include "tracemark/rng.hpp"

namespace tracemark {

// ----------------------------------------------------------------------------
// Trace-map augmentation used during tracer training.

struct ZeroMask {
    Tensor mask;            // (H,W), 1 = keep, 0 = zeroed (all 3 channels)
    double zero_fraction = 0.0;
};

inline ZeroMask make_zero_mask(std::int64_t h, std::int64_t w, Rng& rng,
                               double lo = 0.15, double hi = 0.30) {
    const double frac = rng.uniform(lo, hi);
    const std::int64_t total = h * w;
    const std::int64_t k = static_cast<std::int64_t>(std::llround(frac * static_cast<double>(total)));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
    Tensor mask({h, w}, 1.0f);
    for (std::int64_t i = 0; i < k; ++i) {
        std::int64_t j = i + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(total - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        mask[idx[static_cast<std::size_t>(i)]] = 0.0f;
    }
    ZeroMask out;
    out.mask = std::move(mask);
    out.zero_fraction = static_cast<double>(k) / static_cast<double>(total);
    return out;
}

// Zero a random 15-30% of pixel positions of the trace map (all channels of
// each chosen position).
inline TraceMap random_zero(const TraceMap& trace, Rng& rng) {
    check_image_shape(trace, "random_zero");
    ZeroMask zm = make_zero_mask(trace.dim(0), trace.dim(1), rng);
    TraceMap out = trace;
    const std::int64_t hw = trace.dim(0) * trace.dim(1);
    for (std::int64_t p = 0; p < hw; ++p)
        if (zm.mask[p] == 0.0f)
            for (std::int64_t c = 0; c < 3; ++c) out[p * 3 + c] = 0.0f;
    return out;
}

// Multiply the trace by a factor drawn uniformly from [0.8, 1.0].
inline TraceMap random_scale(const TraceMap& trace, Rng& rng) {
    const float s = static_cast<float>(rng.uniform(0.8, 1.0));
    TraceMap out = trace;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return out;
}

// ----------------------------------------------------------------------------
// Image-level augmentation and evaluation-time perturbations.

struct AugmentConfig {
    double zero_fraction_lo = 0.15, zero_fraction_hi = 0.30;
    double scale_lo = 0.8, scale_hi = 1.0;
    bool warp = true, blur = true, noise = true, jpeg = true;
    double apply_prob = 0.5;          // chance each enabled op fires
    double jpeg_quality_lo = 30, jpeg_quality_hi = 95;
    double blur_sigma_lo = 0.5, blur_sigma_hi = 2.0;
    int blur_kernel = 5;
    double noise_sigma_lo = 0.01, noise_sigma_hi = 0.05;
    double warp_max_shift = 0.02;     // elastic displacement, fraction of width
};

inline Image jpeg_roundtrip(const Image& img, int quality) {
    std::vector<unsigned char> buf;
    std::vector<int> params{cv::IMWRITE_JPEG_QUALITY, quality};
    if (!cv::imencode(".jpg", to_mat_bgr8(img), buf, params))
        throw std::runtime_error("jpeg_roundtrip: encode failed");
    cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_COLOR);
    return from_mat_bgr8(decoded);
}

inline Tensor gaussian_blur_kernel2d(int ksize, double sigma) {
    cv::Mat k1 = cv::getGaussianKernel(ksize, sigma, CV_64F);
    Tensor k({ksize, ksize});
    for (int i = 0; i < ksize; ++i)
        for (int j = 0; j < ksize; ++j)
            k[i * ksize + j] = static_cast<float>(k1.at<double>(i) * k1.at<double>(j));
    return k;
}

// Separable Gaussian blur with replicated borders, computed in float on the
// [0,1] image directly.
inline Image gaussian_blur(const Image& img, int ksize, double sigma) {
    check_image_shape(img, "gaussian_blur");
    cv::Mat src(static_cast<int>(img.dim(0)), static_cast<int>(img.dim(1)), CV_32FC3);
    for (int r = 0; r < src.rows; ++r)
        for (int c = 0; c < src.cols; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(r) * src.cols + c) * 3;
            src.at<cv::Vec3f>(r, c) = {img[base], img[base + 1], img[base + 2]};
        }
    cv::Mat dst;
    cv::GaussianBlur(src, dst, cv::Size(ksize, ksize), sigma, sigma, cv::BORDER_REPLICATE);
    Image out = make_image(src.rows, src.cols);
    for (int r = 0; r < src.rows; ++r)
        for (int c = 0; c < src.cols; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(r) * src.cols + c) * 3;
            const auto& v = dst.at<cv::Vec3f>(r, c);
            out[base] = std::clamp(v[0], 0.0f, 1.0f);
            out[base + 1] = std::clamp(v[1], 0.0f, 1.0f);
            out[base + 2] = std::clamp(v[2], 0.0f, 1.0f);
        }
    return out;
}

inline Image add_gaussian_noise(const Image& img, double mean, double sigma, Rng& rng) {
    Image out = img;
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const float v = out[i] + static_cast<float>(rng.normal(mean, sigma));
        out[i] = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

// Mild random similarity transform plus a smooth elastic displacement field.
inline Image random_warp(const Image& img, double max_shift, Rng& rng) {
    const int h = static_cast<int>(img.dim(0));
    const int w = static_cast<int>(img.dim(1));
    cv::Mat src = to_mat_bgr8(img);

    const double angle = rng.uniform(-2.0, 2.0);
    const double scale = rng.uniform(0.98, 1.02);
    const double tx = rng.uniform(-0.01, 0.01) * w;
    const double ty = rng.uniform(-0.01, 0.01) * h;
    cv::Mat rot = cv::getRotationMatrix2D(cv::Point2f(w / 2.0f, h / 2.0f), angle, scale);
    rot.at<double>(0, 2) += tx;
    rot.at<double>(1, 2) += ty;
    cv::Mat warped;
    cv::warpAffine(src, warped, rot, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);

    // Elastic part: coarse random offsets upsampled to a smooth field.
    const int grid = 4;
    cv::Mat dx(grid, grid, CV_32F), dy(grid, grid, CV_32F);
    const float amp = static_cast<float>(max_shift * w);
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            dx.at<float>(i, j) = static_cast<float>(rng.uniform(-1.0, 1.0)) * amp;
            dy.at<float>(i, j) = static_cast<float>(rng.uniform(-1.0, 1.0)) * amp;
        }
    cv::Mat dxf, dyf;
    cv::resize(dx, dxf, cv::Size(w, h), 0, 0, cv::INTER_CUBIC);
    cv::resize(dy, dyf, cv::Size(w, h), 0, 0, cv::INTER_CUBIC);
    cv::Mat mapx(h, w, CV_32F), mapy(h, w, CV_32F);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            mapx.at<float>(r, c) = c + dxf.at<float>(r, c);
            mapy.at<float>(r, c) = r + dyf.at<float>(r, c);
        }
    cv::Mat out;
    cv::remap(warped, out, mapx, mapy, cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    return from_mat_bgr8(out);
}

// Random subset of the configured ops, each firing with cfg.apply_prob.
inline Image augment_image(const Image& face, const AugmentConfig& cfg, Rng& rng) {
    Image out = face;
    if (cfg.warp && rng.bernoulli(cfg.apply_prob))
        out = random_warp(out, cfg.warp_max_shift, rng);
    if (cfg.blur && rng.bernoulli(cfg.apply_prob))
        out = gaussian_blur(out, cfg.blur_kernel, rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi));
    if (cfg.noise && rng.bernoulli(cfg.apply_prob))
        out = add_gaussian_noise(out, 0.0, rng.uniform(cfg.noise_sigma_lo, cfg.noise_sigma_hi), rng);
    if (cfg.jpeg && rng.bernoulli(cfg.apply_prob))
        out = jpeg_roundtrip(out, static_cast<int>(std::lround(
                                      rng.uniform(cfg.jpeg_quality_lo, cfg.jpeg_quality_hi))));
    return out;
}

// ----------------------------------------------------------------------------
// Fixed post-processing used by robustness evaluation.

enum class PerturbationKind { None, Jpeg, GaussianBlur, GaussianNoise };

struct Perturbation {
    PerturbationKind kind = PerturbationKind::None;
    int jpeg_quality = 25;
    double blur_sigma = 3.0;
    int blur_kernel = 5;
    double noise_sigma = 0.1;
    double noise_mean = 0.0;

    static Perturbation none() { return {}; }
    static Perturbation jpeg(int quality = 25) {
        Perturbation p;
        p.kind = PerturbationKind::Jpeg;
        p.jpeg_quality = quality;
        return p;
    }
    static Perturbation gaussian_blur(double sigma = 3.0, int kernel = 5) {
        Perturbation p;
        p.kind = PerturbationKind::GaussianBlur;
        p.blur_sigma = sigma;
        p.blur_kernel = kernel;
        return p;
    }
    static Perturbation gaussian_noise(double sigma = 0.1, double mean = 0.0) {
        Perturbation p;
        p.kind = PerturbationKind::GaussianNoise;
        p.noise_sigma = sigma;
        p.noise_mean = mean;
        return p;
    }

    std::string name() const {
        switch (kind) {
            case PerturbationKind::None: return "none";
            case PerturbationKind::Jpeg: return "jpeg";
            case PerturbationKind::GaussianBlur: return "gaussian_blur";
            case PerturbationKind::GaussianNoise: return "gaussian_noise";
        }
        return "?";
    }

    static Perturbation parse(const std::string& s) {
        if (s == "none") return none();
        if (s == "jpeg") return jpeg();
        if (s == "gaussian_blur" || s == "blur") return gaussian_blur();
        if (s == "gaussian_noise" || s == "noise") return gaussian_noise();
        throw std::invalid_argument("Perturbation::parse: unknown kind '" + s + "'");
    }
};

// Images are snapped to the 8-bit grid first: perturbations model what
// happens to a file after it leaves the pipeline.
inline Image apply_perturbation(const Image& face, const Perturbation& p, Rng& rng) {
    switch (p.kind) {
        case PerturbationKind::None:
            return face;
        case PerturbationKind::Jpeg:
            return jpeg_roundtrip(face, p.jpeg_quality);
        case PerturbationKind::GaussianBlur:
            return gaussian_blur(quantize8(face), p.blur_kernel, p.blur_sigma);
        case PerturbationKind::GaussianNoise:
            return add_gaussian_noise(quantize8(face), p.noise_mean, p.noise_sigma, rng);
    }
    throw std::invalid_argument("apply_perturbation: unknown kind");
}

}  // namespace tracemark
