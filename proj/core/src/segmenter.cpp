#include "protoseg/segmenter.hpp"

#include <cmath>
#include <string>

#include "protoseg/error.hpp"

namespace protoseg {

namespace {

struct Normalized {
    std::vector<double> data;  // unit vectors (zero vectors stay zero)
    std::size_t count = 0;
};

Normalized normalize_all(const std::vector<Prototype>& protos, std::size_t channels) {
    Normalized out;
    out.count = protos.size();
    out.data.resize(protos.size() * channels);
    for (std::size_t p = 0; p < protos.size(); ++p) {
        const auto& v = protos[p].values;
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
        for (std::size_t c = 0; c < channels; ++c) out.data[p * channels + c] = v[c] * inv;
    }
    return out;
}

void best_match(const Normalized& protos, std::size_t channels, const double* unit_query, double& best, int& index) {
    best = -2.0;
    index = 0;
    for (std::size_t p = 0; p < protos.count; ++p) {
        const double* v = protos.data.data() + p * channels;
        double dot = 0.0;
        for (std::size_t c = 0; c < channels; ++c) dot += v[c] * unit_query[c];
        if (dot > best) {
            best = dot;
            index = static_cast<int>(p);
        }
    }
}

} // namespace

SimilarityMaps similarity(const FeatureMap& query, const PrototypeSet& protos) {
    if (protos.fg.empty() || protos.bg.empty()) {
        throw DimensionError("similarity: prototype set needs at least one FG and one BG prototype (fg=" +
                             std::to_string(protos.fg.size()) + ", bg=" + std::to_string(protos.bg.size()) + ")");
    }
    const auto channels = static_cast<std::size_t>(query.channels());
    for (const auto* list : {&protos.fg, &protos.bg}) {
        for (const auto& p : *list) {
            if (p.values.size() != channels) {
                throw DimensionError("similarity: prototype has " + std::to_string(p.values.size()) +
                                     " channels, query has " + std::to_string(channels));
            }
        }
    }
    const Normalized fg = normalize_all(protos.fg, channels);
    const Normalized bg = normalize_all(protos.bg, channels);

    SimilarityMaps out;
    out.width = query.width();
    out.height = query.height();
    const std::size_t n = query.pixel_count();
    out.fg.resize(n);
    out.bg.resize(n);
    out.fg_nearest.resize(n);
    out.bg_nearest.resize(n);

    std::vector<double> unit(channels);
    for (std::size_t i = 0; i < n; ++i) {
        const auto f = query.pixel(i);
        double n2 = 0.0;
        for (float x : f) n2 += static_cast<double>(x) * x;
        const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
        for (std::size_t c = 0; c < channels; ++c) unit[c] = f[c] * inv;
        best_match(fg, channels, unit.data(), out.fg[i], out.fg_nearest[i]);
        best_match(bg, channels, unit.data(), out.bg[i], out.bg_nearest[i]);
    }
    return out;
}

ProbabilityMap mu_from_similarity(const SimilarityMaps& sims, double temperature, int out_width, int out_height) {
    if (!(temperature > 0.0)) throw ConfigError("mu_from_similarity: temperature must be > 0");
    ProbabilityMap mu(sims.width, sims.height);
    for (std::size_t i = 0; i < sims.pixel_count(); ++i) {
        // Logistic form of the two-way softmax.
        const double z = temperature * (sims.fg[i] - sims.bg[i]);
        const double p_fg = 1.0 / (1.0 + std::exp(-z));
        mu.fg(i) = p_fg;
        mu.bg(i) = 1.0 - p_fg;
    }
    return upsample_probmap(mu, out_width, out_height);
}

ProbabilityMap mu_from_similarity(const SimilarityMaps& sims, double temperature) {
    return mu_from_similarity(sims, temperature, sims.width, sims.height);
}

LabelMask argmax_label(const ProbabilityMap& prob) {
    LabelMask out(prob.width(), prob.height());
    for (std::size_t i = 0; i < prob.pixel_count(); ++i) {
        if (prob.fg(i) > prob.bg(i)) out.set(i, kForeground);
    }
    return out;
}

Segmentation segment(const FeatureMap& query, const PrototypeSet& protos, double temperature, int out_width,
                     int out_height) {
    auto mu = mu_from_similarity(similarity(query, protos), temperature, out_width, out_height);
    auto mask = argmax_label(mu);
    return {std::move(mask), std::move(mu)};
}

} // namespace protoseg
