#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "tracemark/checkpoint.hpp"
#include "tracemark/nets.hpp"

using namespace tracemark;
namespace stdfs = std::filesystem;

TEST_CASE("checkpoint save then load is bit-exact") {
    const auto dir = stdfs::temp_directory_path() / "tm_ckpt_roundtrip";
    stdfs::remove_all(dir);

    TraceGenerator a(4, 4, 123);
    save_checkpoint(a.params(), dir, "trace_generator",
                    {{"sequence_length", 4}, {"base_width", 4}});

    TraceGenerator b(4, 4, 999);  // different init, will be overwritten
    load_checkpoint(b.params(), dir, "trace_generator");

    for (const auto& [name, va] : a.params().entries()) {
        nn::Var vb = b.params().get(name);
        REQUIRE(va->value.shape() == vb->value.shape());
        CHECK(std::memcmp(va->value.data(), vb->value.data(),
                          static_cast<std::size_t>(va->value.numel()) * sizeof(float)) == 0);
    }

    nlohmann::json manifest = read_manifest(dir);
    CHECK(manifest.at("architecture") == "trace_generator");
    CHECK(manifest.at("config").at("sequence_length") == 4);
    stdfs::remove_all(dir);
}

TEST_CASE("checkpoint load rejects mismatched architecture and shapes") {
    const auto dir = stdfs::temp_directory_path() / "tm_ckpt_mismatch";
    stdfs::remove_all(dir);

    TraceGenerator a(4, 4, 1);
    save_checkpoint(a.params(), dir, "trace_generator");

    TraceGenerator same(4, 4, 2);
    CHECK_THROWS_AS(load_checkpoint(same.params(), dir, "trace_identifier"),
                    std::runtime_error);

    TraceGenerator wider(4, 8, 2);  // same names, different shapes
    CHECK_THROWS_AS(load_checkpoint(wider.params(), dir, "trace_generator"),
                    std::runtime_error);

    TraceGenerator longer(6, 4, 2);  // first conv consumes more bit channels
    CHECK_THROWS_AS(load_checkpoint(longer.params(), dir, "trace_generator"),
                    std::runtime_error);
    stdfs::remove_all(dir);
}
