#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tracemark/dataset.hpp"
#include "tracemark/synth.hpp"

using namespace tracemark;
namespace stdfs = std::filesystem;

namespace {

stdfs::path make_source_tree(const stdfs::path& root, int identities, int faces) {
    stdfs::remove_all(root);
    for (int id = 0; id < identities; ++id) {
        const stdfs::path dir = root / ("person" + std::to_string(id));
        stdfs::create_directories(dir);
        auto imgs = synth_identity_set(static_cast<std::uint64_t>(id) + 1,
                                       static_cast<std::size_t>(faces), 48,
                                       static_cast<std::uint64_t>(id));
        for (int i = 0; i < faces; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "f%03d.png", i);
            save_png(imgs[static_cast<std::size_t>(i)], dir / name);
        }
    }
    return root;
}

}  // namespace

TEST_CASE("ingest normalizes, splits disjointly, and re-ingests byte-identically") {
    const auto src = make_source_tree(stdfs::temp_directory_path() / "tm_ds_src", 2, 100);
    const auto out1 = stdfs::temp_directory_path() / "tm_ds_out1";
    const auto out2 = stdfs::temp_directory_path() / "tm_ds_out2";
    stdfs::remove_all(out1);
    stdfs::remove_all(out2);

    DatasetManifest m1 = ingest(src, 32, out1, 0.5, 42);
    DatasetManifest m2 = ingest(src, 32, out2, 0.5, 42);

    REQUIRE(m1.identities.size() == 2);
    for (const auto& [id, entries] : m1.identities) {
        CHECK(entries.size() == 100);
        std::size_t train = 0;
        for (const auto& e : entries) train += e.split == Split::Train;
        CHECK(train == 50);

        // same files never appear in both splits: entries are unique paths
        // with a single split tag each, so disjointness holds by construction;
        // verify checksums and splits are reproducible
        const auto& other = m2.identities.at(id);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            CHECK(entries[i].file == other[i].file);
            CHECK(entries[i].checksum == other[i].checksum);
            CHECK((entries[i].split == Split::Train) == (other[i].split == Split::Train));
        }
    }

    // loaded images come back at the ingest resolution with verified checksums
    auto train = m1.load_split("person0", Split::Train);
    REQUIRE(train.size() == 50);
    CHECK(train[0].dim(0) == 32);
    CHECK(train[0].dim(1) == 32);

    stdfs::remove_all(src);
    stdfs::remove_all(out1);
    stdfs::remove_all(out2);
}

TEST_CASE("corrupted files land in the skip list and never in the splits") {
    const auto src = make_source_tree(stdfs::temp_directory_path() / "tm_ds_corrupt", 1, 5);
    {
        std::ofstream bad(src / "person0" / "broken.png");
        bad << "not an image";
    }
    const auto out = stdfs::temp_directory_path() / "tm_ds_corrupt_out";
    stdfs::remove_all(out);

    DatasetManifest m = ingest(src, 32, out, 0.5, 1);
    REQUIRE(m.skipped.size() == 1);
    CHECK(m.skipped[0].find("broken.png") != std::string::npos);
    for (const auto& e : m.identities.at("person0"))
        CHECK(e.file.find("broken") == std::string::npos);

    stdfs::remove_all(src);
    stdfs::remove_all(out);
}

TEST_CASE("manifest round trips through json and detects tampering") {
    const auto src = make_source_tree(stdfs::temp_directory_path() / "tm_ds_rt", 1, 4);
    const auto out = stdfs::temp_directory_path() / "tm_ds_rt_out";
    stdfs::remove_all(out);
    DatasetManifest m = ingest(src, 32, out, 0.5, 2);

    DatasetManifest loaded = DatasetManifest::load(out / "manifest.json");
    CHECK(loaded.resolution == 32);
    CHECK(loaded.identities.at("person0").size() == 4);
    CHECK_THROWS_AS(loaded.load_split("nobody", Split::Train), std::invalid_argument);

    // flip one byte of a managed train-split file: the checksum check must fire
    stdfs::path victim;
    for (const auto& e : loaded.identities.at("person0"))
        if (e.split == Split::Train) {
            victim = out / e.file;
            break;
        }
    REQUIRE(!victim.empty());
    {
        std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-1, std::ios::end);
        f.put('\0');
    }
    CHECK_THROWS_AS(loaded.load_split("person0", Split::Train), std::runtime_error);

    stdfs::remove_all(src);
    stdfs::remove_all(out);
}

TEST_CASE("ingest rejects an empty identity folder") {
    const auto src = stdfs::temp_directory_path() / "tm_ds_empty";
    stdfs::remove_all(src);
    stdfs::create_directories(src / "hollow");
    const auto out = stdfs::temp_directory_path() / "tm_ds_empty_out";
    CHECK_THROWS_AS(ingest(src, 32, out, 0.5, 0), std::invalid_argument);
    stdfs::remove_all(src);
    stdfs::remove_all(out);
}
