#include "protoseg/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "protoseg/error.hpp"

namespace protoseg {

const char* to_string(Refinement r) {
    switch (r) {
    case Refinement::None: return "none";
    case Refinement::Sigma: return "sigma";
    case Refinement::Entropy: return "entropy";
    }
    return "unknown";
}

Refinement parse_refinement(const std::string& s) {
    if (s == "none") return Refinement::None;
    if (s == "sigma") return Refinement::Sigma;
    if (s == "entropy") return Refinement::Entropy;
    throw ConfigError("unknown refinement strategy '" + s + "' (expected sigma, entropy or none)");
}

ProbabilityMap refine_probability(const ProbabilityMap& mu, const ProbabilityMap& sigma) {
    if (mu.width() != sigma.width() || mu.height() != sigma.height()) {
        throw DimensionError("refine_probability: mu and sigma dimensions differ");
    }
    ProbabilityMap out(mu.width(), mu.height());
    const auto m = mu.values();
    const auto s = sigma.values();
    auto o = out.values();
    for (std::size_t k = 0; k < m.size(); ++k) o[k] = m[k] * (1.0 - s[k]);
    return out;
}

ProbabilityMap entropy_map(const ProbabilityMap& mu) {
    ProbabilityMap out(mu.width(), mu.height());
    for (std::size_t i = 0; i < mu.pixel_count(); ++i) {
        double h = 0.0;
        for (double p : {mu.bg(i), mu.fg(i)}) {
            if (p > 0.0) h -= p * std::log2(p);
        }
        h = std::min(h, 1.0);
        out.bg(i) = h;
        out.fg(i) = h;
    }
    return out;
}

LabelMask pseudo_label(const ProbabilityMap& mu_prime) {
    LabelMask out(mu_prime.width(), mu_prime.height());
    for (std::size_t i = 0; i < mu_prime.pixel_count(); ++i) {
        if (mu_prime.fg(i) >= 0.5) out.set(i, kForeground);
    }
    return out;
}

std::string RefinementRecord::to_json_line() const {
    nlohmann::json j{{"image", image},
                     {"fg_unrefined", fg_unrefined},
                     {"fg_refined", fg_refined},
                     {"flipped", flipped},
                     {"mean_sigma_flipped", mean_sigma_flipped},
                     {"mean_sigma_kept", mean_sigma_kept}};
    return j.dump();
}

std::string RefinementReport::to_json_lines() const {
    std::ostringstream out;
    for (const auto& r : images) out << r.to_json_line() << '\n';
    return out.str();
}

PseudoLabelResult pseudo_label_image(const FeatureMap& image, const PrototypeSet& support_protos,
                                     const UncertaintyNet* net, const SemiSupervisedConfig& cfg) {
    PseudoLabelResult r;
    const SimilarityMaps sims = similarity(image, support_protos);
    r.mu = mu_from_similarity(sims, cfg.temperature);
    switch (cfg.refinement) {
    case Refinement::Sigma:
        if (net == nullptr) throw ConfigError("sigma refinement requires an uncertainty net");
        r.uncertainty = sigma_map(*net, image, support_protos, sims, image.width(), image.height());
        break;
    case Refinement::Entropy: r.uncertainty = entropy_map(r.mu); break;
    case Refinement::None: r.uncertainty = ProbabilityMap(image.width(), image.height(), 0.0); break;
    }
    r.mu_refined = refine_probability(r.mu, r.uncertainty);
    r.label = pseudo_label(r.mu_refined);

    const LabelMask unrefined = pseudo_label(r.mu);
    double sum_flipped = 0.0, sum_kept = 0.0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < unrefined.pixel_count(); ++i) {
        if (unrefined[i] == kForeground) ++r.record.fg_unrefined;
        if (r.label[i] == kForeground) ++r.record.fg_refined;
        if (unrefined[i] == kForeground && r.label[i] == kBackground) {
            ++r.record.flipped;
            sum_flipped += r.uncertainty.fg(i);
        } else if (unrefined[i] == kForeground) {
            ++kept;
            sum_kept += r.uncertainty.fg(i);
        }
    }
    if (r.record.flipped > 0) r.record.mean_sigma_flipped = sum_flipped / static_cast<double>(r.record.flipped);
    if (kept > 0) r.record.mean_sigma_kept = sum_kept / static_cast<double>(kept);
    return r;
}

UnlabeledPrototypes unlabeled_prototypes(std::span<const FeatureMap> unlabeled, const PrototypeSet& support_protos,
                                         const UncertaintyNet* net, const SemiSupervisedConfig& cfg) {
    UnlabeledPrototypes out;
    out.prototypes.class_id = support_protos.class_id;
    for (std::size_t m = 0; m < unlabeled.size(); ++m) {
        PseudoLabelResult r = pseudo_label_image(unlabeled[m], support_protos, net, cfg);
        r.record.image = m;
        out.report.images.push_back(r.record);

        PrototypeOptions opts = cfg.unlabeled;
        opts.seed = cfg.unlabeled.seed + 7919 * (m + 1);
        const PrototypeSet set =
            build_part_prototypes(unlabeled[m], r.label, opts, Provenance::Unlabeled, support_protos.class_id);
        out.prototypes = merge_prototype_sets(out.prototypes, set);
    }
    return out;
}

PrototypeSet support_prototypes(const Episode& episode, const PrototypeOptions& options) {
    std::vector<LabelMask> masks;
    masks.reserve(episode.supports.size());
    for (const auto& s : episode.supports) masks.push_back(mask_at_feature_resolution(s.mask, s.features));
    std::vector<LabeledView> views;
    views.reserve(episode.supports.size());
    for (std::size_t k = 0; k < episode.supports.size(); ++k) views.push_back({episode.supports[k].features, masks[k]});
    return build_part_prototypes(views, options, Provenance::Support, episode.class_id);
}

std::pair<int, int> query_output_size(const Episode& episode) {
    if (episode.query_truth) return {episode.query_truth->width(), episode.query_truth->height()};
    return {episode.query.width(), episode.query.height()};
}

Segmentation segment_supervised(const Episode& episode, const SemiSupervisedConfig& cfg) {
    episode.validate();
    const PrototypeSet ps = support_prototypes(episode, cfg.support);
    const auto [w, h] = query_output_size(episode);
    return segment(episode.query, ps, cfg.temperature, w, h);
}

SemiSupervisedResult segment_semisupervised(const Episode& episode, const UncertaintyNet* net,
                                            const SemiSupervisedConfig& cfg) {
    episode.validate();
    SemiSupervisedResult out;
    out.support_prototypes = support_prototypes(episode, cfg.support);

    std::vector<FeatureMap> pool;
    const std::size_t m = cfg.max_unlabeled < 0
                              ? episode.unlabeled.size()
                              : std::min(episode.unlabeled.size(), static_cast<std::size_t>(cfg.max_unlabeled));
    pool.assign(episode.unlabeled.begin(), episode.unlabeled.begin() + static_cast<std::ptrdiff_t>(m));
    if (cfg.use_query_as_unlabeled) pool.push_back(episode.query);

    PrototypeSet all = out.support_prototypes;
    if (!pool.empty()) {
        UnlabeledPrototypes pu = unlabeled_prototypes(pool, out.support_prototypes, net, cfg);
        out.unlabeled_prototypes = std::move(pu.prototypes);
        out.report = std::move(pu.report);
        all = merge_prototype_sets(out.support_prototypes, out.unlabeled_prototypes);
    }

    const auto [w, h] = query_output_size(episode);
    const SimilarityMaps sims = similarity(episode.query, all);
    out.mu = mu_from_similarity(sims, cfg.temperature, w, h);
    out.mask = argmax_label(out.mu);
    if (cfg.query_sigma && net != nullptr) out.sigma = sigma_map(*net, episode.query, all, sims, w, h);
    return out;
}

} // namespace protoseg
