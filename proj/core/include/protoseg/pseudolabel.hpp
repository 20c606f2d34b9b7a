#pragma once

#include <optional>
#include <string>
#include <vector>

#include "protoseg/protogen.hpp"
#include "protoseg/segmenter.hpp"
#include "protoseg/tensor.hpp"
#include "protoseg/uncertainty.hpp"

namespace protoseg {

/// How pseudo labels on unlabeled images are refined before pooling.
enum class Refinement {
    None,     ///< round(mu)
    Sigma,    ///< round(mu * (1 - sigma)), sigma from the uncertainty net
    Entropy,  ///< round(mu * (1 - H)), H = binary entropy of mu in bits
};

const char* to_string(Refinement r);
Refinement parse_refinement(const std::string& s);

/// mu' = mu * (1 - sigma), per channel.
ProbabilityMap refine_probability(const ProbabilityMap& mu, const ProbabilityMap& sigma);

/// Per-pixel binary entropy of mu_FG in bits, stored in both channels.
ProbabilityMap entropy_map(const ProbabilityMap& mu);

/// FG iff the FG channel is >= 0.5 (round half up).
LabelMask pseudo_label(const ProbabilityMap& mu_prime);

/// Diagnostics for one unlabeled image.
struct RefinementRecord {
    std::size_t image = 0;
    std::size_t fg_unrefined = 0;      ///< FG pixels in round(mu)
    std::size_t fg_refined = 0;        ///< FG pixels in round(mu')
    std::size_t flipped = 0;           ///< FG in round(mu), BG in round(mu')
    double mean_sigma_flipped = 0.0;   ///< mean FG-channel uncertainty over flipped pixels
    double mean_sigma_kept = 0.0;      ///< mean FG-channel uncertainty over pixels FG in both

    std::string to_json_line() const;
};

struct RefinementReport {
    std::vector<RefinementRecord> images;

    /// One JSON record per line.
    std::string to_json_lines() const;
};

struct SemiSupervisedConfig {
    PrototypeOptions support;    ///< N_s clusters, lambda_p, k-means iterations
    PrototypeOptions unlabeled;  ///< N_u clusters
    double temperature = kDefaultTemperature;
    Refinement refinement = Refinement::Sigma;
    bool use_query_as_unlabeled = false;
    /// Unlabeled images to use; -1 uses every image in the episode.
    int max_unlabeled = -1;
    /// Also compute the query sigma map (diagnostic only).
    bool query_sigma = false;
};

/// Pseudo label and diagnostics for one unlabeled image.
struct PseudoLabelResult {
    ProbabilityMap mu;
    ProbabilityMap uncertainty;  ///< sigma, entropy or zeros depending on the strategy
    ProbabilityMap mu_refined;
    LabelMask label;
    RefinementRecord record;
};

/// Pseudo label for one unlabeled feature map against the support prototypes,
/// all at feature resolution. `net` is required for Refinement::Sigma.
PseudoLabelResult pseudo_label_image(const FeatureMap& image, const PrototypeSet& support_protos,
                                     const UncertaintyNet* net, const SemiSupervisedConfig& cfg);

struct UnlabeledPrototypes {
    PrototypeSet prototypes;
    RefinementReport report;
};

/// Prototypes from pseudo-labeled unlabeled images, concatenated in input
/// order with unlabeled provenance.
UnlabeledPrototypes unlabeled_prototypes(std::span<const FeatureMap> unlabeled, const PrototypeSet& support_protos,
                                         const UncertaintyNet* net, const SemiSupervisedConfig& cfg);

/// Support-only prototypes pooled over all K shots.
PrototypeSet support_prototypes(const Episode& episode, const PrototypeOptions& options);

struct SemiSupervisedResult {
    LabelMask mask;
    ProbabilityMap mu;
    ProbabilityMap sigma;  ///< empty unless cfg.query_sigma and a net is given
    RefinementReport report;
    PrototypeSet support_prototypes;
    PrototypeSet unlabeled_prototypes;
};

/// Output resolution for the query: the truth mask size when present,
/// otherwise the feature resolution.
std::pair<int, int> query_output_size(const Episode& episode);

/// Supervised baseline: support prototypes only.
Segmentation segment_supervised(const Episode& episode, const SemiSupervisedConfig& cfg);

/// Full pipeline: P_s from supports, P_u from pseudo-labeled unlabeled images
/// (plus the query when requested), query segmented with P_s and P_u together.
SemiSupervisedResult segment_semisupervised(const Episode& episode, const UncertaintyNet* net,
                                            const SemiSupervisedConfig& cfg);

} // namespace protoseg
