#pragma once

#include <vector>

#include "protoseg/protogen.hpp"
#include "protoseg/tensor.hpp"

namespace protoseg {

/// Softmax multiplier applied to cosine similarities.
inline constexpr double kDefaultTemperature = 20.0;

/// Per-pixel best cosine similarity per class and the index of the prototype
/// that achieved it (first index wins ties).
struct SimilarityMaps {
    int width = 0;
    int height = 0;
    std::vector<double> fg;
    std::vector<double> bg;
    std::vector<int> fg_nearest;
    std::vector<int> bg_nearest;

    std::size_t pixel_count() const { return fg.size(); }
};

/// Requires at least one FG and one BG prototype with matching channels.
SimilarityMaps similarity(const FeatureMap& query, const PrototypeSet& protos);

/// Two-class softmax of temperature-scaled similarities, bilinearly resized
/// to (out_width, out_height).
ProbabilityMap mu_from_similarity(const SimilarityMaps& sims, double temperature, int out_width, int out_height);

/// Same as above at feature resolution.
ProbabilityMap mu_from_similarity(const SimilarityMaps& sims, double temperature);

/// FG where mu_FG > mu_BG; exact ties go to BG.
LabelMask argmax_label(const ProbabilityMap& prob);

struct Segmentation {
    LabelMask mask;
    ProbabilityMap mu;
};

/// similarity -> mu -> argmax in one call.
Segmentation segment(const FeatureMap& query, const PrototypeSet& protos, double temperature, int out_width,
                     int out_height);

} // namespace protoseg
