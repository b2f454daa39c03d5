#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tracemark/augment.hpp"
#include "tracemark/core.hpp"

namespace tracemark {

// ----------------------------------------------------------------------------
// Structural similarity. 11x11 Gaussian window (sigma 1.5), standard
// stabilizers on the [0,1] range, windows fully inside the image, averaged
// over the three channels.

inline double ssim(const Image& a, const Image& b, int window = 11, double sigma = 1.5) {
    check_same_shape(a, b, "ssim");
    check_image_shape(a, "ssim");
    const std::int64_t h = a.dim(0), w = a.dim(1);
    if (h < window || w < window)
        throw std::invalid_argument("ssim: image smaller than window");

    Tensor k = gaussian_blur_kernel2d(window, sigma);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::int64_t oh = h - window + 1, ow = w - window + 1;

    double total = 0.0;
    for (std::int64_t ch = 0; ch < 3; ++ch) {
        double ch_sum = 0.0;
        for (std::int64_t i = 0; i < oh; ++i) {
            for (std::int64_t j = 0; j < ow; ++j) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int ki = 0; ki < window; ++ki)
                    for (int kj = 0; kj < window; ++kj) {
                        const double kw = k[ki * window + kj];
                        const double va = a[((i + ki) * w + (j + kj)) * 3 + ch];
                        const double vb = b[((i + ki) * w + (j + kj)) * 3 + ch];
                        mu_a += kw * va;
                        mu_b += kw * vb;
                        aa += kw * va * va;
                        bb += kw * vb * vb;
                        ab += kw * va * vb;
                    }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                ch_sum += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                          ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
        }
        total += ch_sum / static_cast<double>(oh * ow);
    }
    return total / 3.0;
}

// Peak signal-to-noise ratio in dB on the [0,1] scale; identical inputs are
// reported as the documented 99 dB cap.
inline double psnr(const Image& a, const Image& b) {
    check_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    constexpr double kCapDb = 99.0;
    if (mse <= 0.0) return kCapDb;
    return std::min(kCapDb, 10.0 * std::log10(1.0 / mse));
}

// ----------------------------------------------------------------------------
// Frechet distance between Gaussian fits of two embedding sets.
// Rows are samples, columns are embedding dimensions.

inline double frechet_distance(const Eigen::MatrixXd& set_a, const Eigen::MatrixXd& set_b,
                               double reg = 1e-6) {
    if (set_a.rows() < 1 || set_b.rows() < 1 || set_a.cols() != set_b.cols())
        throw std::invalid_argument("frechet_distance: bad embedding sets");
    const auto fit = [reg](const Eigen::MatrixXd& x) {
        Eigen::VectorXd mu = x.colwise().mean();
        Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
        const double denom = std::max<double>(1.0, static_cast<double>(x.rows() - 1));
        Eigen::MatrixXd cov = centered.transpose() * centered / denom;
        cov += reg * Eigen::MatrixXd::Identity(x.cols(), x.cols());
        return std::make_pair(mu, cov);
    };
    auto [mu1, s1] = fit(set_a);
    auto [mu2, s2] = fit(set_b);

    const double mean_term = (mu1 - mu2).squaredNorm();

    // tr((S1 S2)^{1/2}) via the symmetric form sqrt(S1) S2 sqrt(S1)
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(s1);
    Eigen::VectorXd ev = es1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_s1 =
        es1.eigenvectors() * ev.asDiagonal() * es1.eigenvectors().transpose();
    Eigen::MatrixXd prod = sqrt_s1 * s2 * sqrt_s1;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2((prod + prod.transpose()) / 2.0);
    const double tr_sqrt = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    return mean_term + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
}

// Pluggable image-embedding backend for distribution distance. When no
// backend is configured the metric is reported as unavailable, never faked.
using EmbeddingBackend = std::function<Eigen::VectorXd(const Image&)>;

inline std::optional<double> fid(const std::vector<Image>& real_set,
                                 const std::vector<Image>& other_set,
                                 const EmbeddingBackend& backend) {
    if (!backend) return std::nullopt;
    if (real_set.empty() || other_set.empty())
        throw std::invalid_argument("fid: empty image set");
    const auto embed_all = [&backend](const std::vector<Image>& set) {
        Eigen::VectorXd first = backend(set[0]);
        Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), first.size());
        m.row(0) = first.transpose();
        for (std::size_t i = 1; i < set.size(); ++i)
            m.row(static_cast<Eigen::Index>(i)) = backend(set[i]).transpose();
        return m;
    };
    return frechet_distance(embed_all(real_set), embed_all(other_set));
}

}  // namespace tracemark
