#include <doctest.h>

#include <fstream>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "protoseg/error.hpp"
#include "protoseg/interchange.hpp"
#include "protoseg/segmenter.hpp"
#include "protoseg/uncertainty.hpp"

using namespace protoseg;

namespace {

const NetShape kSmall{6, {8, 5}};

std::vector<TrainingSample> random_batch(int channels, std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TrainingSample> out;
    for (std::size_t k = 0; k < n; ++k) {
        TrainingSample s;
        s.p_fg = fixtures::random_vector(channels, rng);
        s.p_bg = fixtures::random_vector(channels, rng);
        s.f_q = fixtures::random_vector(channels, rng);
        const double fg = u(rng) < 0.5 ? 1.0 : 0.0;
        s.label = {1.0 - fg, fg};
        const double m = u(rng);
        s.mu = {1.0 - m, m};
        out.push_back(std::move(s));
    }
    return out;
}

double max_grad_error(const NetGradients& g, const std::vector<Linear>& numeric) {
    double worst = 0.0;
    for (std::size_t l = 0; l < numeric.size(); ++l) {
        for (std::size_t k = 0; k < numeric[l].weight.size(); ++k) {
            worst = std::max(worst, oracle::rel_err(g.layers[l].weight[k], numeric[l].weight[k], 1e-10));
        }
        for (std::size_t k = 0; k < numeric[l].bias.size(); ++k) {
            worst = std::max(worst, oracle::rel_err(g.layers[l].bias[k], numeric[l].bias[k], 1e-10));
        }
    }
    return worst;
}

} // namespace

TEST_SUITE("uncertainty") {

TEST_CASE("net construction: shapes, parameter count, determinism, bad options") {
    const UncertaintyNet net = UncertaintyNet::create(32, 7);
    CHECK(net.proj_fg.in == 32);
    CHECK(net.proj_fg.out == 64);
    CHECK(net.hidden.size() == 2);
    CHECK(net.hidden[0].in == 192);
    CHECK(net.hidden[1].out == 128);
    CHECK(net.output.out == 2);
    CHECK(net.parameter_count() == 3 * (32 * 64 + 64) + (192 * 128 + 128) + (128 * 128 + 128) + (128 * 2 + 2));
    CHECK(net == UncertaintyNet::create(32, 7));
    CHECK_FALSE(net == UncertaintyNet::create(32, 8));
    const double bound = 1.0 / std::sqrt(192.0);
    for (double w : net.hidden[0].weight) CHECK(std::abs(w) <= bound);
    CHECK(net.layer_names() == std::vector<std::string>{"proj_fg", "proj_bg", "proj_q", "hidden0", "hidden1", "output"});

    CHECK_THROWS_AS(UncertaintyNet::create(0, 1), ConfigError);
    CHECK_THROWS_AS(UncertaintyNet::create(4, 1, kSmall, 0.0), ConfigError);
    CHECK_THROWS_AS(UncertaintyNet::create(4, 1, NetShape{6, {0}}), ConfigError);
}

TEST_CASE("zeroed output layer gives the midpoint sigma") {
    UncertaintyNet net = UncertaintyNet::create(5, 1, kSmall);
    net.output = Linear::zeros(net.output.in, 2);
    std::mt19937_64 rng(1);
    const auto s = sigma_forward(net, fixtures::random_vector(5, rng), fixtures::random_vector(5, rng),
                                 fixtures::random_vector(5, rng));
    const double want = net.sigma_min + (1.0 - net.sigma_min) * 0.5;
    CHECK(s[0] == want);
    CHECK(s[1] == want);
}

TEST_CASE("sigma_forward matches the layer-by-layer oracle and stays in range") {
    std::mt19937_64 rng(3);
    for (const NetShape& shape : {kSmall, NetShape{}, NetShape{4, {}}}) {
        for (int trial = 0; trial < 20; ++trial) {
            const UncertaintyNet net = UncertaintyNet::create(7, trial, shape);
            const auto a = fixtures::random_vector(7, rng), b = fixtures::random_vector(7, rng),
                       q = fixtures::random_vector(7, rng);
            const auto s = sigma_forward(net, a, b, q);
            const auto o = oracle::net_forward(net, a, b, q);
            for (int c = 0; c < 2; ++c) {
                CHECK(oracle::rel_err(s[c], static_cast<double>(o.sigma[c])) < 1e-6);
                CHECK(s[c] >= net.sigma_min);
                CHECK(s[c] < 1.0);
            }
            CHECK(sigma_forward(net, a, b, q) == s);
        }
    }
}

TEST_CASE("sigma_forward input errors") {
    const UncertaintyNet net = UncertaintyNet::create(3, 1, kSmall);
    const std::vector<double> ok{1, 2, 3}, short_v{1, 2}, bad{1, std::nan(""), 3};
    CHECK_THROWS_AS(sigma_forward(net, ok, ok, short_v), DimensionError);
    CHECK_THROWS_AS(sigma_forward(net, ok, bad, ok), NumericError);
}

TEST_CASE("sigma_map feeds nearest prototypes per pixel") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const UncertaintyNet net = UncertaintyNet::create(6, trial);
        const PrototypeSet p = fixtures::random_prototypes(4, 3, 6, rng);
        const FeatureMap q = fixtures::random_features(8, 8, 6, rng);
        const SimilarityMaps sims = similarity(q, p);
        const ProbabilityMap sig = sigma_map(net, q, p, sims, 8, 8);
        const auto o = oracle::similarity(q, {p.fg[0].values, p.fg[1].values, p.fg[2].values, p.fg[3].values},
                                          {p.bg[0].values, p.bg[1].values, p.bg[2].values});
        for (std::size_t i = 0; i < q.pixel_count(); ++i) {
            const auto f = q.pixel(i);
            const auto want = oracle::net_forward(net, p.fg[o.fg_idx[i]].values, p.bg[o.bg_idx[i]].values,
                                                  oracle::Vec(f.begin(), f.end()));
            CHECK(oracle::rel_err(sig.bg(i), static_cast<double>(want.sigma[0])) < 1e-6);
            CHECK(oracle::rel_err(sig.fg(i), static_cast<double>(want.sigma[1])) < 1e-6);
        }
        const ProbabilityMap up = sigma_map(net, q, p, sims, 16, 24);
        CHECK(up.width() == 16);
        const auto ref = oracle::bilinear_resize(sig, 16, 24);
        for (std::size_t k = 0; k < up.values().size(); ++k) CHECK(up.values()[k] == doctest::Approx(ref.values()[k]).epsilon(1e-9));
    }
}

TEST_CASE("sigma_map on a constant query is constant") {
    std::mt19937_64 rng(2);
    const UncertaintyNet net = UncertaintyNet::create(4, 0, kSmall);
    const PrototypeSet p = fixtures::random_prototypes(1, 1, 4, rng);
    const FeatureMap q(5, 5, 4, std::vector<float>(100, 0.3f));
    const ProbabilityMap s = sigma_map(net, q, p, similarity(q, p), 5, 5);
    for (std::size_t i = 1; i < s.pixel_count(); ++i) {
        CHECK(s.fg(i) == s.fg(0));
        CHECK(s.bg(i) == s.bg(0));
    }
    const FeatureMap wrong(5, 5, 3, std::vector<float>(75, 0.3f));
    CHECK_THROWS_AS(sigma_map(net, wrong, p, similarity(q, p), 5, 5), DimensionError);
}

TEST_CASE("gaussian nll closed forms") {
    const double s0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    CHECK(std::abs(gaussian_nll_term(0.7, 0.7, s0)) < 1e-15);

    const double a = gaussian_nll_term(1.0, 0.6, 0.2), b = gaussian_nll_term(1.0, 0.6, 0.4);
    const double resid_a = 0.16 / (2 * 0.04), resid_b = 0.16 / (2 * 0.16);
    CHECK(resid_b == doctest::Approx(resid_a / 4));
    CHECK(b - resid_b - (a - resid_a) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("gaussian nll over maps matches the scalar oracle") {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const LabelMask l = fixtures::random_mask(4, 3, rng);
        ProbabilityMap mu(4, 3), sigma(4, 3);
        for (std::size_t i = 0; i < mu.pixel_count(); ++i) {
            mu.fg(i) = u(rng);
            mu.bg(i) = 1 - mu.fg(i);
            sigma.fg(i) = 1e-3 + 0.998 * u(rng);
            sigma.bg(i) = 1e-3 + 0.998 * u(rng);
        }
        long double want = 0;
        for (std::size_t i = 0; i < mu.pixel_count(); ++i) {
            const double y = l[i];
            want += oracle::nll_term(1 - y, mu.bg(i), sigma.bg(i)) + oracle::nll_term(y, mu.fg(i), sigma.fg(i));
        }
        CHECK(oracle::rel_err(gaussian_nll(l, mu, sigma), static_cast<double>(want)) < 1e-8);
    }
    CHECK_THROWS_AS(gaussian_nll(LabelMask(2, 2), ProbabilityMap(2, 2), ProbabilityMap(2, 3)), DimensionError);
}

TEST_CASE("nll over sigma is minimised at |residual|") {
    for (double r : {0.05, 0.3, 0.9}) {
        double best_s = 0, best = 1e300;
        for (int k = 1; k <= 20000; ++k) {
            const double s = k * 1e-4;
            const double v = gaussian_nll_term(r, 0.0, s);
            if (v < best) {
                best = v;
                best_s = s;
            }
        }
        CHECK(best_s == doctest::Approx(r).epsilon(1e-3));
    }
}

TEST_CASE("analytic gradients match finite differences on a small net") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const UncertaintyNet net = UncertaintyNet::create(5, seed, kSmall);
        const auto batch = oracle::smooth_batch(net, 16, 2e-3L, seed + 100);
        const NetGradients g = nll_gradients(net, batch);
        CHECK(g.loss == doctest::Approx(batch_nll(net, batch)).epsilon(1e-12));
        CHECK(max_grad_error(g, oracle::numeric_gradients(net, batch, 1e-4L)) < 1e-4);
    }
}

TEST_CASE("gradients: dead unit is zero, duplication leaves the mean unchanged, empty batch errors") {
    UncertaintyNet net = UncertaintyNet::create(4, 2, kSmall);
    Linear& h0 = net.hidden[0];
    for (int i = 0; i < h0.in; ++i) h0.w(3, i) = 0.0;
    h0.bias[3] = -1.0;
    std::mt19937_64 rng(5);
    const auto batch = random_batch(4, 8, rng);
    const NetGradients g = nll_gradients(net, batch);
    for (int i = 0; i < h0.in; ++i) CHECK(g.layers[3].w(3, i) == 0.0);
    CHECK(g.layers[3].bias[3] == 0.0);

    auto doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const NetGradients g2 = nll_gradients(net, doubled);
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
        for (std::size_t k = 0; k < g.layers[l].weight.size(); ++k) {
            CHECK(g2.layers[l].weight[k] == doctest::Approx(g.layers[l].weight[k]).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(nll_gradients(net, {}), ConfigError);
}

TEST_CASE("train_step: zero learning rate, determinism, loss history") {
    std::mt19937_64 rng(9);
    const auto batch = random_batch(4, 16, rng);
    const TrainState s0 = TrainState::start(UncertaintyNet::create(4, 3, kSmall));
    const TrainState frozen = train_step(s0, batch, 0.0);
    CHECK(frozen.net == s0.net);
    CHECK(frozen.step == 1);
    CHECK(frozen.loss_history.size() == 1);

    TrainState a = s0, b = s0;
    for (int i = 0; i < 10; ++i) {
        a = train_step(std::move(a), batch, 1e-3);
        b = train_step(std::move(b), batch, 1e-3);
    }
    CHECK(a == b);
    CHECK_FALSE(a.net == s0.net);
    CHECK_THROWS_AS(train_step(s0, batch, -1.0), ConfigError);
}

TEST_CASE("train_step reports non-finite losses") {
    std::mt19937_64 rng(9);
    auto batch = random_batch(4, 4, rng);
    batch[2].mu[1] = std::numeric_limits<double>::infinity();
    try {
        train_step(TrainState::start(UncertaintyNet::create(4, 3, kSmall)), batch, 1e-3);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("repeated batch: loss falls across every 20-step window") {
    std::mt19937_64 rng(10);
    const auto batch = random_batch(4, 16, rng);
    TrainState s = TrainState::start(UncertaintyNet::create(4, 1, kSmall));
    for (int i = 0; i < 200; ++i) s = train_step(std::move(s), batch, 1e-3);
    for (std::size_t t = 0; t + 20 < s.loss_history.size(); ++t) {
        CHECK(s.loss_history[t + 20] < s.loss_history[t]);
    }
}

TEST_CASE("training separates exact and noisy residual regimes") {
    // f_q tags the regime; residual 0 on one half, 0.5 on the other.
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 0.1);
    std::vector<TrainingSample> data;
    for (int k = 0; k < 64; ++k) {
        TrainingSample s;
        const bool noisy = k % 2 == 1;
        s.p_fg = {1.0, 0.0, 0.0};
        s.p_bg = {0.0, 1.0, 0.0};
        s.f_q = {n(rng), n(rng), noisy ? 1.0 : -1.0};
        s.label = {0.0, 1.0};
        s.mu = noisy ? std::array<double, 2>{0.5, 0.5} : std::array<double, 2>{0.0, 1.0};
        data.push_back(s);
    }
    TrainState st = TrainState::start(UncertaintyNet::create(3, 4, NetShape{8, {16}}));
    for (int i = 0; i < 1500; ++i) st = train_step(std::move(st), data, 1e-2);
    double exact = 0, noisy = 0;
    for (std::size_t k = 0; k < data.size(); ++k) {
        const auto s = sigma_forward(st.net, data[k].p_fg, data[k].p_bg, data[k].f_q);
        (k % 2 ? noisy : exact) += s[1] / 32.0;
    }
    CHECK(noisy - exact > 0.1);
}

TEST_CASE("collect_samples copies nearest prototypes, features, truth and mu") {
    std::mt19937_64 rng(13);
    const PrototypeSet p = fixtures::random_prototypes(3, 2, 4, rng);
    const FeatureMap q = fixtures::random_features(3, 3, 4, rng);
    const SimilarityMaps sims = similarity(q, p);
    const ProbabilityMap mu = mu_from_similarity(sims, 20.0);
    const LabelMask truth = fixtures::random_mask(3, 3, rng);
    const std::vector<std::size_t> px{4, 0};
    const auto s = collect_samples(q, p, sims, mu, truth, px);
    REQUIRE(s.size() == 2);
    CHECK(s[0].p_fg == p.fg[sims.fg_nearest[4]].values);
    CHECK(s[0].p_bg == p.bg[sims.bg_nearest[4]].values);
    CHECK(s[0].f_q[2] == static_cast<double>(q.pixel(4)[2]));
    CHECK(s[0].label[1] == static_cast<double>(truth[4]));
    CHECK(s[0].mu[1] == mu.fg(4));
    CHECK_THROWS_AS(collect_samples(q, p, sims, mu, LabelMask(4, 4), px), DimensionError);
}

TEST_CASE("checkpoint round trip stores f32 parameters") {
    fixtures::TempDir tmp;
    const UncertaintyNet net = UncertaintyNet::create(5, 21, kSmall, 0.01);
    save_checkpoint(tmp / "ck", net);
    const UncertaintyNet back = load_checkpoint(tmp / "ck");
    CHECK(back.shape().proj_dim == 6);
    CHECK(back.shape().hidden == kSmall.hidden);
    CHECK(back.sigma_min == 0.01);
    CHECK(back.seed == 21);
    const auto a = net.layers(), b = back.layers();
    for (std::size_t l = 0; l < a.size(); ++l) {
        for (std::size_t k = 0; k < a[l]->weight.size(); ++k) {
            CHECK(b[l]->weight[k] == static_cast<double>(static_cast<float>(a[l]->weight[k])));
        }
    }
    save_checkpoint(tmp / "ck2", back);
    CHECK(load_checkpoint(tmp / "ck2") == back);

    std::filesystem::resize_file(tmp / "ck" / "hidden1.weight" / io::kDataFile, 8);
    CHECK_THROWS_AS(load_checkpoint(tmp / "ck"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(tmp / "nothing"), FormatError);
}

}
