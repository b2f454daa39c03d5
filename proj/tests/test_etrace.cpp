#include <doctest.h>

#include <filesystem>
#include <set>

#include "tracemark/etrace.hpp"
#include "tracemark/image_io.hpp"

using namespace tracemark;

namespace {

Image random_image(std::int64_t h, std::int64_t w, Rng& rng) {
    Image img = make_image(h, w);
    for (std::int64_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace

TEST_CASE("derive_key is deterministic and seed-sensitive") {
    ETraceKey k1 = derive_key(7, 16, 16, 32, 128);
    ETraceKey k2 = derive_key(7, 16, 16, 32, 128);
    CHECK(k1.positions == k2.positions);

    ETraceKey ka = derive_key(1, 16, 16, 32, 128);
    ETraceKey kb = derive_key(2, 16, 16, 32, 128);
    CHECK(ka.positions != kb.positions);
}

TEST_CASE("derive_key positions are unique, in bounds, and can cover everything") {
    ETraceKey k = derive_key(3, 8, 8, 64, 200);
    CHECK(k.positions.size() == 64);
    std::set<std::pair<int, int>> uniq(k.positions.begin(), k.positions.end());
    CHECK(uniq.size() == 64);
    for (auto [r, c] : k.positions) {
        CHECK(r >= 0);
        CHECK(r < 8);
        CHECK(c >= 0);
        CHECK(c < 8);
    }
    CHECK_THROWS_AS(derive_key(3, 8, 8, 65, 200), std::invalid_argument);
    CHECK_THROWS_AS(derive_key(3, 8, 8, 32, 300), std::invalid_argument);
}

TEST_CASE("embed sets exactly the keyed blue values and nothing else") {
    Rng rng(11);
    Image f = random_image(16, 16, rng);
    ETraceKey k = derive_key(5, 16, 16, 40, 77);
    Image out = embed_etrace(f, k);
    std::set<std::pair<int, int>> keyed(k.positions.begin(), k.positions.end());
    for (std::int64_t r = 0; r < 16; ++r)
        for (std::int64_t c = 0; c < 16; ++c) {
            const std::int64_t base = (r * 16 + c) * 3;
            CHECK(out[base + 0] == f[base + 0]);
            CHECK(out[base + 1] == f[base + 1]);
            if (keyed.count({static_cast<int>(r), static_cast<int>(c)}))
                CHECK(out[base + 2] == doctest::Approx(77.0f / 255.0f));
            else
                CHECK(out[base + 2] == f[base + 2]);
        }
}

TEST_CASE("embed is idempotent") {
    Rng rng(12);
    Image f = random_image(8, 8, rng);
    ETraceKey k = derive_key(9, 8, 8, 16, 128);
    Image once = embed_etrace(f, k);
    Image twice = embed_etrace(once, k);
    for (std::int64_t i = 0; i < once.numel(); ++i) CHECK(once[i] == twice[i]);
}

TEST_CASE("embed then detect through PNG and 8-bit quantization round-trips") {
    Rng rng(13);
    ETraceKey k = derive_key(21, 16, 16, 48, 128);
    const auto tmp = std::filesystem::temp_directory_path() / "tm_etrace_rt.png";
    for (int trial = 0; trial < 20; ++trial) {
        Image f = random_image(16, 16, rng);
        save_png(embed_etrace(f, k), tmp);
        ETraceReport rep = detect_etrace(load_image(tmp), k);
        CHECK(rep.matched_fraction == doctest::Approx(1.0));
        CHECK(rep.present);
    }
    std::filesystem::remove(tmp);
}

TEST_CASE("detect on a zero blue channel finds nothing") {
    Image f = make_image(8, 8, 0.0f);
    ETraceKey k = derive_key(4, 8, 8, 16, 128);
    ETraceReport rep = detect_etrace(f, k);
    CHECK(rep.matched_fraction == doctest::Approx(0.0));
    CHECK(!rep.present);
}

TEST_CASE("random images almost never match an exact key") {
    // Each position matches with probability 1/256 under tau=0; the expected
    // matched fraction over many draws should sit near that, and presence at
    // threshold 0.9 should never fire.
    Rng rng(14);
    ETraceKey k = derive_key(31, 16, 16, 64, 128);
    double total = 0.0;
    const int trials = 400;
    for (int t = 0; t < trials; ++t) {
        Image f = quantize8(random_image(16, 16, rng));
        ETraceReport rep = detect_etrace(f, k);
        total += rep.matched_fraction;
        CHECK(!rep.present);
    }
    const double mean = total / trials;
    CHECK(mean < 3.0 / 256.0);  // loose Monte-Carlo bound around 1/256
}

TEST_CASE("tolerance widens the match band") {
    Image f = make_image(4, 4, 0.0f);
    ETraceKey k = derive_key(2, 4, 4, 8, 128);
    Image e = embed_etrace(f, k);
    for (auto [r, c] : k.positions) e[(r * 4 + c) * 3 + 2] = 130.0f / 255.0f;
    CHECK(!detect_etrace(e, k).present);
    k.tolerance_levels = 2;
    CHECK(detect_etrace(e, k).present);
}

TEST_CASE("key file round trip") {
    ETraceKey k = derive_key(99, 32, 32, 64, 200);
    k.tolerance_levels = 1;
    k.match_threshold = 0.8;
    const auto tmp = std::filesystem::temp_directory_path() / "tm_etrace.key";
    save_key(k, tmp);
    ETraceKey l = load_key(tmp);
    CHECK(l.positions == k.positions);
    CHECK(l.value_level == k.value_level);
    CHECK(l.tolerance_levels == 1);
    CHECK(l.match_threshold == doctest::Approx(0.8));
    std::filesystem::remove(tmp);
}
