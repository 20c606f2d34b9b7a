#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "protoseg/error.hpp"
#include "protoseg/tensor.hpp"

using namespace protoseg;

TEST_SUITE("tensor") {

TEST_CASE("feature map rejects bad length and non-finite values") {
    CHECK_THROWS_AS(FeatureMap(2, 2, 3, std::vector<float>(11)), DimensionError);
    std::vector<float> v(12, 0.0f);
    v[5] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(FeatureMap(2, 2, 3, v), NumericError);
    v[5] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(FeatureMap(2, 2, 3, v), NumericError);
}

TEST_CASE("feature map layout is row-major channels-last") {
    std::vector<float> v(2 * 3 * 2);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
    const FeatureMap f(3, 2, 2, v);
    CHECK(f.pixel(2, 1)[0] == 10.0f);
    CHECK(f.pixel(2, 1)[1] == 11.0f);
    CHECK(f.pixel(4)[0] == 8.0f);
}

TEST_CASE("label mask only holds 0 and 1") {
    CHECK_THROWS_AS(LabelMask(2, 1, std::vector<std::uint8_t>{0, 2}), DimensionError);
    LabelMask m(2, 2);
    CHECK_THROWS_AS(m.set(std::size_t{0}, 7), DimensionError);
    m.set(1, 1, kForeground);
    CHECK(m.count(kForeground) == 1);
    CHECK(m.count(kBackground) == 3);
}

TEST_CASE("downsample: constant and block masks") {
    const LabelMask all_fg(2, 2, kForeground);
    const LabelMask one = downsample_mask(all_fg, 1, 1);
    CHECK(one.at(0, 0) == kForeground);

    LabelMask top(4, 4);
    for (int x = 0; x < 4; ++x) {
        top.set(x, 0, kForeground);
        top.set(x, 1, kForeground);
    }
    const LabelMask d = downsample_mask(top, 2, 2);
    CHECK(d.at(0, 0) == kForeground);
    CHECK(d.at(1, 0) == kForeground);
    CHECK(d.at(0, 1) == kBackground);
    CHECK(d.at(1, 1) == kBackground);
}

TEST_CASE("downsample: matches index-mapping oracle on large masks") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const LabelMask m = fixtures::random_mask(417, 417, rng, 0.3);
        CHECK(downsample_mask(m, 53, 53) == oracle::nearest_resize(m, 53, 53));
    }
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> dim(1, 40);
        const int w = dim(rng), h = dim(rng);
        const int tw = std::uniform_int_distribution<int>(1, w)(rng);
        const int th = std::uniform_int_distribution<int>(1, h)(rng);
        const LabelMask m = fixtures::random_mask(w, h, rng);
        CHECK(downsample_mask(m, tw, th) == oracle::nearest_resize(m, tw, th));
    }
}

TEST_CASE("downsample: identity at target resolution, errors on bad targets") {
    std::mt19937_64 rng(3);
    const LabelMask m = fixtures::random_mask(7, 5, rng);
    CHECK(downsample_mask(m, 7, 5) == m);
    CHECK_THROWS_AS(downsample_mask(m, 0, 5), DimensionError);
    CHECK_THROWS_AS(downsample_mask(m, 8, 5), DimensionError);
}

TEST_CASE("upsample: constants, monotone ramp, oracle") {
    const ProbabilityMap c(3, 2, 0.7);
    const ProbabilityMap up = upsample_probmap(c, 11, 7);
    for (double v : up.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

    ProbabilityMap ramp(2, 1);
    ramp.at(0, 0, 1) = 0.0;
    ramp.at(1, 0, 1) = 1.0;
    const ProbabilityMap r = upsample_probmap(ramp, 4, 1);
    for (int x = 1; x < 4; ++x) CHECK(r.at(x, 0, 1) >= r.at(x - 1, 0, 1));

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        ProbabilityMap m(3, 3);
        for (auto& v : m.values()) v = u(rng);
        const ProbabilityMap a = upsample_probmap(m, 9, 9);
        const ProbabilityMap b = oracle::bilinear_resize(m, 9, 9);
        for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(upsample_probmap(ProbabilityMap(4, 4), 3, 8), DimensionError);
}

TEST_CASE("upsample: softmax maps keep unit channel sums") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ProbabilityMap m(5, 4);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) {
        m.fg(i) = u(rng);
        m.bg(i) = 1.0 - m.fg(i);
    }
    const ProbabilityMap up = upsample_probmap(m, 23, 17);
    for (std::size_t i = 0; i < up.pixel_count(); ++i) {
        CHECK(up.fg(i) + up.bg(i) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(up.fg(i) >= 0.0);
        CHECK(up.fg(i) <= 1.0);
    }
}

TEST_CASE("masked mean") {
    const FeatureMap uniform(3, 3, 2, std::vector<float>(18, 1.5f));
    LabelMask m(3, 3);
    m.set(4, kForeground);
    auto mean = masked_mean(uniform, m, kForeground);
    REQUIRE(mean);
    CHECK((*mean)[0] == 1.5);
    CHECK_FALSE(masked_mean(uniform, LabelMask(3, 3), kForeground));

    const FeatureMap f(2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8});
    const LabelMask two(2, 2, std::vector<std::uint8_t>{1, 0, 0, 1});
    mean = masked_mean(f, two, kForeground);
    REQUIRE(mean);
    CHECK((*mean)[0] == doctest::Approx((1.0 + 7.0) / 2));
    CHECK((*mean)[1] == doctest::Approx((2.0 + 8.0) / 2));

    std::mt19937_64 rng(2);
    const FeatureMap r = fixtures::random_features(6, 5, 4, rng);
    const auto global = masked_mean(r, LabelMask(6, 5, kForeground), kForeground);
    for (int c = 0; c < 4; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < r.pixel_count(); ++i) s += r.pixel(i)[c];
        CHECK((*global)[c] == doctest::Approx(s / 30.0));
    }
    CHECK_THROWS_AS(masked_mean(r, LabelMask(5, 5), kForeground), DimensionError);
}

TEST_CASE("episode validation") {
    std::mt19937_64 rng(1);
    Episode ep;
    ep.query = fixtures::random_features(4, 4, 3, rng);
    CHECK_THROWS_AS(ep.validate(), DimensionError);
    ep.supports.push_back({fixtures::random_features(4, 4, 3, rng), LabelMask(8, 8)});
    CHECK_NOTHROW(ep.validate());
    ep.unlabeled.push_back(fixtures::random_features(4, 4, 2, rng));
    CHECK_THROWS_AS(ep.validate(), DimensionError);
    ep.unlabeled.clear();
    ep.supports.push_back({fixtures::random_features(4, 4, 3, rng), LabelMask(3, 4)});
    CHECK_THROWS_AS(ep.validate(), DimensionError);
}

}
