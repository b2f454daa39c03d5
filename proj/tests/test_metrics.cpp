#include <doctest.h>

#include <cmath>

#include "tracemark/metrics.hpp"
#include "tracemark/rng.hpp"

using namespace tracemark;

namespace {

Image random_image(std::int64_t h, std::int64_t w, Rng& rng) {
    Image img = make_image(h, w);
    for (std::int64_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<float>(rng.uniform());
    return img;
}

// Reference SSIM written independently of the library version: per-channel
// window statistics collected into arrays first, then combined.
double ssim_reference(const Image& a, const Image& b) {
    const int win = 11;
    const double sigma = 1.5;
    const std::int64_t h = a.dim(0), w = a.dim(1);
    std::vector<double> kernel(win * win);
    double ksum = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double di = i - (win - 1) / 2.0, dj = j - (win - 1) / 2.0;
            kernel[i * win + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            ksum += kernel[i * win + j];
        }
    for (auto& k : kernel) k /= ksum;

    const double c1 = 1e-4, c2 = 9e-4;
    double channel_total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        std::int64_t count = 0;
        for (std::int64_t i = 0; i + win <= h; ++i)
            for (std::int64_t j = 0; j + win <= w; ++j) {
                double ma = 0, mb = 0;
                for (int ki = 0; ki < win; ++ki)
                    for (int kj = 0; kj < win; ++kj) {
                        ma += kernel[ki * win + kj] * a[((i + ki) * w + j + kj) * 3 + ch];
                        mb += kernel[ki * win + kj] * b[((i + ki) * w + j + kj) * 3 + ch];
                    }
                double va = 0, vb = 0, cov = 0;
                for (int ki = 0; ki < win; ++ki)
                    for (int kj = 0; kj < win; ++kj) {
                        const double kv = kernel[ki * win + kj];
                        const double xa = a[((i + ki) * w + j + kj) * 3 + ch];
                        const double xb = b[((i + ki) * w + j + kj) * 3 + ch];
                        va += kv * (xa * xa);
                        vb += kv * (xb * xb);
                        cov += kv * (xa * xb);
                    }
                va -= ma * ma;
                vb -= mb * mb;
                cov -= ma * mb;
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        channel_total += acc / static_cast<double>(count);
    }
    return channel_total / 3.0;
}

}  // namespace

TEST_CASE("ssim of an image with itself is one, and ssim is symmetric") {
    Rng rng(1);
    Image a = random_image(16, 16, rng);
    Image b = random_image(16, 16, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK_THROWS_AS(ssim(a, random_image(16, 17, rng)), std::invalid_argument);
    CHECK_THROWS_AS(ssim(random_image(8, 8, rng), random_image(8, 8, rng)),
                    std::invalid_argument);  // smaller than the window
}

TEST_CASE("ssim matches the independent per-window reference on random 16x16 pairs") {
    Rng rng(2);
    for (int t = 0; t < 5; ++t) {
        Image a = random_image(16, 16, rng);
        Image b = random_image(16, 16, rng);
        CHECK(ssim(a, b) == doctest::Approx(ssim_reference(a, b)).epsilon(1e-4));
    }
}

TEST_CASE("psnr analytic cases and oracle") {
    Image a = make_image(16, 16, 0.5f);
    CHECK(psnr(a, a) == doctest::Approx(99.0));

    Image b = a;
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] += 0.1f;  // MSE = 0.01
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));

    Rng rng(3);
    Image x = random_image(16, 16, rng);
    Image y = random_image(16, 16, rng);
    double mse = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        mse += d * d;
    }
    mse /= static_cast<double>(x.numel());
    CHECK(psnr(x, y) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-6));
}

TEST_CASE("frechet distance: identical sets, symmetry, mean-shift closed form") {
    // Rows +-c e_i give sample mean zero and sample covariance exactly the
    // identity, so equal-covariance Frechet distance reduces to the squared
    // mean shift.
    const int d = 3;
    const int n = 2 * d;
    const double c = std::sqrt((n - 1) / 2.0);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, d);
    for (int i = 0; i < d; ++i) {
        a(2 * i, i) = c;
        a(2 * i + 1, i) = -c;
    }
    CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-3));

    const double delta = 0.7;
    Eigen::MatrixXd b = a;
    b.col(0).array() += delta;
    CHECK(frechet_distance(a, b) == doctest::Approx(delta * delta).epsilon(1e-3));
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-6));
}

TEST_CASE("fid is unavailable without a backend and sane with a toy backend") {
    Rng rng(4);
    std::vector<Image> set_a, set_b;
    for (int i = 0; i < 8; ++i) {
        set_a.push_back(random_image(8, 8, rng));
        set_b.push_back(random_image(8, 8, rng));
    }
    CHECK(!fid(set_a, set_b, nullptr).has_value());

    EmbeddingBackend backend = [](const Image& img) {
        Eigen::VectorXd v(3);
        v.setZero();
        const std::int64_t pixels = img.dim(0) * img.dim(1);
        for (std::int64_t p = 0; p < pixels; ++p)
            for (int ch = 0; ch < 3; ++ch) v[ch] += img[p * 3 + ch];
        return v / static_cast<double>(pixels);
    };
    auto same = fid(set_a, set_a, backend);
    REQUIRE(same.has_value());
    CHECK(*same == doctest::Approx(0.0).epsilon(1e-3));
    auto ab = fid(set_a, set_b, backend);
    auto ba = fid(set_b, set_a, backend);
    CHECK(*ab == doctest::Approx(*ba).epsilon(1e-6));
}
