#include <doctest.h>

#include <filesystem>

#include "tracemark/pipeline.hpp"

using namespace tracemark;
namespace stdfs = std::filesystem;

TEST_CASE("identity profile json round trip") {
    IdentityProfile p;
    p.identity_id = "alice";
    p.bits = BitSequence::parse("10110010");
    p.etrace_key = derive_key(77, 64, 64, 48, 130);
    p.etrace_key.tolerance_levels = 1;
    p.etrace_key.match_threshold = 0.85;
    p.tracer_checkpoint = "/runs/alice/generator";
    p.anchor_file = "/runs/alice/anchor.png";

    const auto tmp = stdfs::temp_directory_path() / "tm_profile.json";
    p.save(tmp);
    IdentityProfile q = IdentityProfile::load(tmp);
    CHECK(q.identity_id == "alice");
    CHECK(q.bits == p.bits);
    CHECK(q.etrace_key.positions == p.etrace_key.positions);
    CHECK(q.etrace_key.value_level == 130);
    CHECK(q.etrace_key.tolerance_levels == 1);
    CHECK(q.etrace_key.match_threshold == doctest::Approx(0.85));
    CHECK(q.tracer_checkpoint == p.tracer_checkpoint);
    stdfs::remove(tmp);
}

TEST_CASE("protect writes the configured fraction and the sidecar matches detection") {
    auto faces = synth_identity_set(9, 20, 32);
    AnchorFace anchor = compute_anchor(faces);
    TraceGenerator gen(8, 4, 3);
    Rng rng(1);
    BitSequence bits = BitSequence::random(8, rng);
    ETraceKey key = derive_key(5, 32, 32, 24, 128);

    const auto out = stdfs::temp_directory_path() / "tm_protect_out";
    stdfs::remove_all(out);
    ProtectResult r = protect(faces, gen, anchor, bits, key, 0.5, out, 11);

    REQUIRE(r.files.size() == 20);
    CHECK(std::count(r.traced.begin(), r.traced.end(), true) == 10);

    // sidecar membership must match what the detector sees on disk
    std::ifstream sc(out / "protected_manifest.json");
    nlohmann::json sidecar;
    sc >> sidecar;
    REQUIRE(sidecar.size() == 20);
    for (const auto& entry : sidecar) {
        Image img = load_image(out / entry.at("file").get<std::string>());
        CHECK(detect_etrace(img, key).present == entry.at("traced").get<bool>());
    }

    // source images are untouched
    auto faces_again = synth_identity_set(9, 20, 32);
    for (std::size_t i = 0; i < faces.size(); ++i)
        for (std::int64_t j = 0; j < faces[i].numel(); ++j)
            CHECK(faces[i][j] == faces_again[i][j]);

    stdfs::remove_all(out);
}

TEST_CASE("protect with fraction one traces every output") {
    auto faces = synth_identity_set(10, 6, 32);
    AnchorFace anchor = compute_anchor(faces);
    TraceGenerator gen(8, 4, 4);
    BitSequence bits = BitSequence::zeros(8);
    ETraceKey key = derive_key(6, 32, 32, 24, 128);

    const auto out = stdfs::temp_directory_path() / "tm_protect_full";
    stdfs::remove_all(out);
    ProtectResult r = protect(faces, gen, anchor, bits, key, 1.0, out, 0);
    for (const auto& f : r.files) CHECK(detect_etrace(load_image(f), key).present);

    CHECK_THROWS_AS(protect(faces, gen, anchor, bits, key, 0.0, out, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(protect(faces, gen, anchor, bits, key, 1.5, out, 0),
                    std::invalid_argument);
    stdfs::remove_all(out);
}

TEST_CASE("protected output files are lossless png only") {
    auto faces = synth_identity_set(11, 3, 32);
    AnchorFace anchor = compute_anchor(faces);
    TraceGenerator gen(8, 4, 5);
    ETraceKey key = derive_key(7, 32, 32, 24, 128);
    const auto out = stdfs::temp_directory_path() / "tm_protect_png";
    stdfs::remove_all(out);
    ProtectResult r = protect(faces, gen, anchor, BitSequence::zeros(8), key, 1.0, out, 0);
    for (const auto& f : r.files) CHECK(f.extension() == ".png");
    // the writer itself refuses lossy targets
    CHECK_THROWS_AS(save_png(faces[0], out / "x.jpg"), std::invalid_argument);
    stdfs::remove_all(out);
}

TEST_CASE("checkpoint loaders rebuild networks that produce identical outputs") {
    const auto dir = stdfs::temp_directory_path() / "tm_loaders";
    stdfs::remove_all(dir);

    TraceGenerator gen(4, 4, 6);
    save_checkpoint(gen.params(), dir / "gen", "trace_generator",
                    {{"sequence_length", 4}, {"base_width", 4}});
    auto gen2 = load_generator(dir / "gen");
    AnchorFace anchor = compute_anchor(synth_identity_set(12, 2, 32));
    BitSequence bits = BitSequence::parse("1100");
    TraceMap a = generate_trace(gen, anchor, bits);
    TraceMap b = generate_trace(*gen2, anchor, bits);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

    FaceSwapModel model(ArchVariant{64, 64}, {"src", "tgt"}, 4, 16, 8);
    save_checkpoint(model.params(), dir / "swapper", "faceswap",
                    {{"encoder_input", 64},
                     {"decoder_output", 64},
                     {"base_width", 4},
                     {"bottleneck_dim", 16},
                     {"identities", {"src", "tgt"}}});
    auto model2 = load_faceswap(dir / "swapper");
    Image face = synth_face(SyntheticIdentity::from_seed(13), 0, 64);
    Image s1 = swap(model, face, "tgt");
    Image s2 = swap(*model2, face, "tgt");
    for (std::int64_t i = 0; i < s1.numel(); ++i) CHECK(s1[i] == s2[i]);

    stdfs::remove_all(dir);
}
