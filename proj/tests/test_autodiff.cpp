#include <doctest.h>

#include <cmath>
#include <functional>

#include "tracemark/losses.hpp"
#include "tracemark/nets.hpp"

using namespace tracemark;
using ad::Var;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// Checks the analytic gradient of `forward` at the coordinates of `leaf` with
// the largest gradient magnitude against central differences. Picking strong
// coordinates keeps the check away from activation kinks and float noise.
// Tolerances are sized for float32 forward passes: the difference quotient
// inherits roundoff of order eps32 * |loss| / h, which grows with network
// depth, so deep-net checks run with a looser bound than single ops.
void check_gradient(const std::function<Var()>& forward, const Var& leaf, int coords = 10,
                    double h = 1e-2, double tol = 2e-3) {
    Var loss = forward();
    REQUIRE(loss->value.numel() == 1);
    leaf->grad = Tensor(leaf->value.shape(), 0.0f);
    ad::backward(loss);
    Tensor analytic = leaf->grad;

    std::vector<std::int64_t> order(static_cast<std::size_t>(analytic.numel()));
    for (std::int64_t i = 0; i < analytic.numel(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return std::abs(analytic[a]) > std::abs(analytic[b]);
    });

    int checked = 0;
    for (std::int64_t idx : order) {
        if (checked >= coords) break;
        if (std::abs(analytic[idx]) < 1e-6) break;
        const float saved = leaf->value[idx];
        leaf->value[idx] = saved + static_cast<float>(h);
        const double up = forward()->value[0];
        leaf->value[idx] = saved - static_cast<float>(h);
        const double down = forward()->value[0];
        leaf->value[idx] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(numeric - analytic[idx]) /
                           std::max(1e-6, static_cast<double>(std::abs(analytic[idx])));
        CHECK(rel <= tol);
        ++checked;
    }
    CHECK(checked > 0);
}

}  // namespace

TEST_CASE("gradients of elementwise ops match finite differences") {
    Rng rng(1);
    Var x = ad::param(random_tensor({2, 3, 8, 8}, rng));
    Var y = ad::param(random_tensor({2, 3, 8, 8}, rng, 0.5, 1.5));

    check_gradient([&] { return ad::mean_all(ad::mul(x, x)); }, x);
    check_gradient([&] { return ad::mean_all(ad::div(x, y)); }, y);
    check_gradient([&] { return ad::mean_all(ad::sigmoid(x)); }, x);
    check_gradient([&] { return ad::mean_all(ad::abs(x)); }, x);
    check_gradient([&] { return ad::l2_norm_batch_mean(x); }, x);
}

TEST_CASE("permute_batch reorders rows and scatter-adds gradients") {
    Rng rng(7);
    Var x = ad::param(random_tensor({3, 2, 4, 4}, rng));
    const std::vector<std::int64_t> perm{2, 2, 0};

    Var y = ad::permute_batch(x, perm);
    const std::int64_t m = 2 * 4 * 4;
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < m; ++j)
            CHECK(y->value[i * m + j] ==
                  x->value[perm[static_cast<std::size_t>(i)] * m + j]);

    check_gradient([&] { return ad::mean_all(ad::mul(ad::permute_batch(x, perm),
                                                     ad::permute_batch(x, perm))); },
                   x);

    CHECK_THROWS_AS(ad::permute_batch(x, {0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(ad::permute_batch(x, {0, 1, 3}), std::invalid_argument);
}

TEST_CASE("gradients of conv, linear and upsampling match finite differences") {
    Rng rng(2);
    Var x = ad::param(random_tensor({1, 3, 8, 8}, rng));
    Var w = ad::param(random_tensor({4, 3, 3, 3}, rng, -0.3, 0.3));
    Var b = ad::param(random_tensor({4}, rng, -0.1, 0.1));

    const auto conv_loss = [&] { return ad::mean_all(ad::sigmoid(ad::conv2d(x, w, b, 2, 1))); };
    check_gradient(conv_loss, x);
    check_gradient(conv_loss, w);
    check_gradient(conv_loss, b);

    Var xf = ad::param(random_tensor({2, 6}, rng));
    Var wf = ad::param(random_tensor({3, 6}, rng, -0.5, 0.5));
    Var bf = ad::param(random_tensor({3}, rng, -0.1, 0.1));
    const auto lin_loss = [&] { return ad::mean_all(ad::sigmoid(ad::linear(xf, wf, bf))); };
    check_gradient(lin_loss, xf);
    check_gradient(lin_loss, wf);

    check_gradient([&] { return ad::mean_all(ad::mul(ad::upsample_nearest2(x),
                                                     ad::upsample_nearest2(x))); },
                   x);
}

TEST_CASE("gradient of the differentiable SSIM term matches finite differences") {
    Rng rng(3);
    Var a = ad::param(random_tensor({1, 3, 16, 16}, rng, 0.2, 0.8));
    Var b = ad::param(random_tensor({1, 3, 16, 16}, rng, 0.2, 0.8));
    check_gradient([&] { return perceptual_loss_ad(a, b); }, b, 10, 1e-3, 2e-3);
}

TEST_CASE("bce loss gradient matches finite differences") {
    Rng rng(4);
    Var logits = ad::param(random_tensor({2, 8}, rng));
    Tensor target({2, 8});
    for (std::int64_t i = 0; i < target.numel(); ++i)
        target[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    check_gradient([&] { return ad::bce_loss(ad::sigmoid(logits), target); }, logits);
}

TEST_CASE("gradient through the trace generator at 32x32") {
    Rng rng(5);
    TraceGenerator gen(4, 4, 7);
    Var anchor = ad::param(random_tensor({1, 3, 32, 32}, rng, 0.2, 0.8));
    std::vector<BitSequence> bits{BitSequence::parse("1010")};
    const auto loss = [&] {
        Var t = gen.forward(anchor, bits);
        return ad::mean_all(ad::mul(t, t));
    };
    check_gradient(loss, anchor, 10, 1e-2, 2e-2);
    check_gradient(loss, gen.params().get("gen.mid.w"), 10, 1e-2, 2e-2);
}

TEST_CASE("gradient through the trace identifier at 32x32") {
    Rng rng(6);
    TraceIdentifier idn(4, 32, 4, 16, 11);
    Var face = ad::param(random_tensor({1, 3, 32, 32}, rng, 0.2, 0.8));
    Var trace = ad::param(random_tensor({1, 3, 32, 32}, rng, -0.1, 0.1));
    Tensor target({1, 4});
    target[0] = 1.0f;
    target[2] = 1.0f;
    const auto loss = [&] { return ad::bce_loss(idn.forward(face, trace), target); };
    // the trace input lives on a +/-0.1 scale next to activation corners, so
    // its difference quotient needs a much smaller step than the default
    check_gradient(loss, face, 10, 3e-3, 3e-2);
    check_gradient(loss, trace, 10, 3e-4, 3e-2);
    check_gradient(loss, idn.params().get("idn.head3.w"), 10, 3e-3, 3e-2);
}

TEST_CASE("gradient through the reconstruction simulator at 32x32") {
    Rng rng(7);
    AutoencoderSpec spec;
    spec.input_resolution = spec.output_resolution = 32;
    spec.base_width = 4;
    spec.bottleneck_dim = 16;
    ReconstructionSimulator sim(spec, 13);
    Var x = ad::param(random_tensor({1, 3, 32, 32}, rng, 0.2, 0.8));
    const auto loss = [&] {
        Var y = sim.forward(x);
        Var d = ad::sub(y, x);
        return ad::mean_all(ad::mul(d, d));
    };
    check_gradient(loss, x, 10, 1e-2, 2e-3);
    check_gradient(loss, sim.params().get("sim.dec.out.w"), 10, 1e-2, 2e-3);
}

TEST_CASE("straight-through passes values forward and gradients back unchanged") {
    Rng rng(8);
    Var x = ad::param(random_tensor({1, 3, 4, 4}, rng));
    Tensor replacement = random_tensor({1, 3, 4, 4}, rng);
    Var st = ad::straight_through(x, replacement);
    for (std::int64_t i = 0; i < replacement.numel(); ++i)
        CHECK(st->value[i] == replacement[i]);
    Var loss = ad::sum_all(st);
    x->grad = Tensor(x->value.shape(), 0.0f);
    ad::backward(loss);
    for (std::int64_t i = 0; i < x->grad.numel(); ++i)
        CHECK(x->grad[i] == doctest::Approx(1.0f));
}
