#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "protoseg/episode_io.hpp"
#include "protoseg/error.hpp"
#include "protoseg/interchange.hpp"
#include "protoseg/synthetic.hpp"

using namespace protoseg;
namespace fs = std::filesystem;

TEST_SUITE("episode_io") {

TEST_CASE("fixture round trip") {
    fixtures::TempDir tmp;
    SyntheticTaskSpec spec;
    spec.channels = 6;
    spec.grid = 10;
    const Episode ep = gen_episode(spec, 7, 3, 2, 2);
    io::save_episode(tmp.path(), ep);
    CHECK(fs::exists(tmp / io::kEpisodeFile));
    const Episode back = io::load_episode(tmp.path());
    CHECK(back.class_id == ep.class_id);
    REQUIRE(back.supports.size() == 2);
    CHECK(back.supports[1].features == ep.supports[1].features);
    CHECK(back.supports[1].mask == ep.supports[1].mask);
    CHECK(back.unlabeled == ep.unlabeled);
    CHECK(back.query == ep.query);
    CHECK(back.query_truth == ep.query_truth);
}

TEST_CASE("query truth is optional; masks may be finer than features") {
    fixtures::TempDir tmp;
    std::mt19937_64 rng(1);
    Episode ep;
    ep.class_id = "cat";
    ep.supports.push_back({fixtures::random_features(4, 3, 2, rng), fixtures::random_mask(16, 12, rng)});
    ep.query = fixtures::random_features(4, 3, 2, rng);
    io::save_episode(tmp.path(), ep);
    const Episode back = io::load_episode(tmp.path());
    CHECK_FALSE(back.query_truth);
    CHECK(back.supports[0].mask.width() == 16);
}

TEST_CASE("load errors name the offending file") {
    fixtures::TempDir tmp;
    CHECK_THROWS_AS(io::load_episode(tmp.path()), FormatError);

    SyntheticTaskSpec spec;
    spec.channels = 4;
    spec.grid = 8;
    io::save_episode(tmp.path(), gen_episode(spec, 0, 0, 1, 1));
    fs::remove_all(tmp / "unlabeled_0");
    try {
        io::load_episode(tmp.path());
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("unlabeled_0") != std::string::npos);
    }
}

TEST_CASE("channel disagreement is rejected") {
    fixtures::TempDir tmp;
    SyntheticTaskSpec spec;
    spec.channels = 4;
    spec.grid = 8;
    io::save_episode(tmp.path(), gen_episode(spec, 0, 0, 1, 1));
    std::mt19937_64 rng(2);
    io::save_feature_map(tmp / "unlabeled_0", fixtures::random_features(8, 8, 3, rng), "unlabeled_0");
    CHECK_THROWS_AS(io::load_episode(tmp.path()), DimensionError);
}

TEST_CASE("malformed episode.json") {
    fixtures::TempDir tmp;
    std::ofstream(tmp / io::kEpisodeFile) << R"({"class_id": "x", "supports": []})";
    CHECK_THROWS_AS(io::load_episode(tmp.path()), Error);
}

}
