#include <doctest.h>

#include "tracemark/core.hpp"
#include "tracemark/rng.hpp"

using namespace tracemark;

namespace {

Image random_image(std::int64_t h, std::int64_t w, Rng& rng) {
    Image img = make_image(h, w);
    for (std::int64_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace

TEST_CASE("implant with a zero trace is the identity") {
    Rng rng(1);
    Image f = random_image(8, 8, rng);
    TraceMap zero = make_image(8, 8, 0.0f);
    Image out = implant(f, zero);
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(out[i] == f[i]);
}

TEST_CASE("implant clips at both boundaries") {
    Image f = make_image(1, 1, 0.99f);
    TraceMap t = make_image(1, 1, 0.05f);
    CHECK(implant(f, t)[0] == doctest::Approx(1.0f));

    Image f2 = make_image(1, 1, 0.50f);
    TraceMap t2 = make_image(1, 1, -0.60f);
    CHECK(implant(f2, t2)[0] == doctest::Approx(0.0f));
}

TEST_CASE("implant stays within [0,1] for arbitrary finite traces") {
    Rng rng(2);
    Image f = random_image(6, 6, rng);
    TraceMap t = make_image(6, 6);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.uniform(-5.0, 5.0));
    Image out = implant(f, t);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out[i] >= 0.0f);
        CHECK(out[i] <= 1.0f);
    }
}

TEST_CASE("implant rejects shape mismatch and leaves input unmodified") {
    Image f = make_image(4, 4, 0.3f);
    CHECK_THROWS_AS(implant(f, make_image(4, 5)), std::invalid_argument);
    TraceMap t = make_image(4, 4, 0.1f);
    Image copy = f;
    (void)implant(f, t);
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(f[i] == copy[i]);
}

TEST_CASE("bit_accuracy identity, complement, partial match") {
    Rng rng(3);
    BitSequence a = BitSequence::random(8, rng);
    CHECK(bit_accuracy(a, a) == doctest::Approx(1.0));
    CHECK(bit_accuracy(a, a.complement()) == doctest::Approx(0.0));

    BitSequence x = BitSequence::parse("11110000");
    BitSequence y = BitSequence::parse("11110011");
    CHECK(bit_accuracy(x, y) == doctest::Approx(0.75));
    CHECK(bit_accuracy(x, y) == doctest::Approx(bit_accuracy(y, x)));
    CHECK_THROWS_AS(bit_accuracy(x, BitSequence::parse("101")), std::invalid_argument);
}

TEST_CASE("harden uses strict inequality at 0.5") {
    CHECK(harden(BitProbabilities{{0.9f, 0.1f}}) == BitSequence::parse("10"));
    CHECK(harden(BitProbabilities{{0.5f}}) == BitSequence::parse("0"));
    CHECK(harden(BitProbabilities{{0.51f, 0.49f, 1.0f, 0.0f}}) == BitSequence::parse("1010"));
}

TEST_CASE("compute_anchor trivial cases") {
    Image zeros = make_image(4, 4, 0.0f);
    Image ones = make_image(4, 4, 1.0f);
    AnchorFace a = compute_anchor({zeros, ones});
    CHECK(a.source_count == 2);
    for (std::int64_t i = 0; i < a.image.numel(); ++i)
        CHECK(a.image[i] == doctest::Approx(0.5f));

    Rng rng(4);
    Image f = random_image(4, 4, rng);
    AnchorFace single = compute_anchor({f});
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(single.image[i] == f[i]);

    AnchorFace same = compute_anchor({f, f, f});
    for (std::int64_t i = 0; i < f.numel(); ++i)
        CHECK(same.image[i] == doctest::Approx(f[i]));
}

TEST_CASE("compute_anchor matches an independent per-pixel mean over 100 random faces") {
    Rng rng(5);
    std::vector<Image> faces;
    for (int i = 0; i < 100; ++i) faces.push_back(random_image(8, 8, rng));
    AnchorFace a = compute_anchor(faces);
    for (std::int64_t i = 0; i < a.image.numel(); ++i) {
        double sum = 0.0;
        for (const auto& f : faces) sum += f[i];
        CHECK(a.image[i] == doctest::Approx(sum / 100.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(compute_anchor({}), std::invalid_argument);
}

TEST_CASE("8-bit quantization is idempotent after one application") {
    Rng rng(6);
    Image f = random_image(4, 4, rng);
    Image q1 = quantize8(f);
    Image q2 = quantize8(q1);
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(q1[i] == q2[i]);
}

TEST_CASE("bit sequence string round trip") {
    BitSequence b = BitSequence::parse("10110001");
    CHECK(b.to_string() == "10110001");
    CHECK_THROWS_AS(BitSequence::parse("10120001"), std::invalid_argument);
    CHECK(BitSequence::zeros(4).to_string() == "0000");
}
