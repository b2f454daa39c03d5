#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tracemark/autodiff.hpp"
#include "tracemark/core.hpp"
#include "tracemark/metrics.hpp"

namespace tracemark {

struct LossWeights {
    double lambda1 = 2.0;  // trace magnitude
    double lambda2 = 2.0;  // perceptual
    double lambda3 = 6.0;  // identification

    void validate() const {
        if (lambda1 <= 0 || lambda2 <= 0 || lambda3 <= 0)
            throw std::invalid_argument("LossWeights: weights must be strictly positive");
    }
};

// Euclidean norm of the flattened trace map.
inline double loss_trace_generation(const TraceMap& trace) {
    double ss = 0.0;
    for (std::int64_t i = 0; i < trace.numel(); ++i)
        ss += static_cast<double>(trace[i]) * trace[i];
    return std::sqrt(ss);
}

// Perceptual distance between the clean face and the traced face. The
// default backend is structural dissimilarity (1 - SSIM): symmetric, zero
// for identical inputs, no pretrained model needed.
inline double loss_image_perceptual(const Image& clean, const Image& traced) {
    check_same_shape(clean, traced, "loss_image_perceptual");
    return 1.0 - ssim(clean, traced);
}

// Summed binary cross-entropy between the target sequence and recovered
// probabilities, clamped to [eps, 1-eps].
inline double loss_trace_identification(const BitSequence& target,
                                        const BitProbabilities& probs,
                                        double eps = 1e-7) {
    if (target.size() != probs.size())
        throw std::invalid_argument("loss_trace_identification: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double p = std::clamp(static_cast<double>(probs.probs[i]), eps, 1.0 - eps);
        total += -(target[i] * std::log(p) + (1 - target[i]) * std::log(1.0 - p));
    }
    return total;
}

inline double total_loss(const LossWeights& w, double ltg, double lip, double lti) {
    return w.lambda1 * ltg + w.lambda2 * lip + w.lambda3 * lti;
}

// ----------------------------------------------------------------------------
// Differentiable counterparts used inside the training graph.

// Mean SSIM over a batch pair of (N,3,H,W) tensors, built from tape ops so
// gradients flow to both inputs.
inline ad::Var ssim_mean_ad(const ad::Var& a, const ad::Var& b, int window = 11,
                            double sigma = 1.5) {
    Tensor k = gaussian_blur_kernel2d(window, sigma);
    const float c1 = 0.01f * 0.01f, c2 = 0.03f * 0.03f;
    using namespace ad;
    Var mu_a = filter_valid(a, k);
    Var mu_b = filter_valid(b, k);
    Var mu_aa = mul(mu_a, mu_a);
    Var mu_bb = mul(mu_b, mu_b);
    Var mu_ab = mul(mu_a, mu_b);
    Var var_a = sub(filter_valid(mul(a, a), k), mu_aa);
    Var var_b = sub(filter_valid(mul(b, b), k), mu_bb);
    Var cov = sub(filter_valid(mul(a, b), k), mu_ab);
    Var num = mul(add_scalar(scale(mu_ab, 2.0f), c1), add_scalar(scale(cov, 2.0f), c2));
    Var den = mul(add_scalar(add(mu_aa, mu_bb), c1), add_scalar(add(var_a, var_b), c2));
    return mean_all(div(num, den));
}

// 1 - mean SSIM, the training-time perceptual term.
inline ad::Var perceptual_loss_ad(const ad::Var& clean, const ad::Var& traced) {
    return ad::add_scalar(ad::scale(ssim_mean_ad(clean, traced), -1.0f), 1.0f);
}

inline ad::Var trace_generation_loss_ad(const ad::Var& trace) {
    return ad::l2_norm_batch_mean(trace);
}

inline ad::Var identification_loss_ad(const ad::Var& probs, const Tensor& target_bits) {
    return ad::bce_loss(probs, target_bits);
}

}  // namespace tracemark
