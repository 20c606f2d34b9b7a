#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoseg/tensor.hpp"

namespace protoseg {

/// Generative model for desk-scale episodes.
///
/// Every class owns `fg_parts` part centroids, unit vectors mixing a shared
/// class direction (weight `separation`) with a per-part direction. The last
/// `novel_parts` of them never appear in support images; `mode_coverage`
/// controls how much of the object in unlabeled and query images they
/// occupy. Background pixels come from a codebook shared by all classes.
/// Distractors are background blobs whose features point almost along an FG
/// part but with a different norm and a small shared offset; they only occur
/// in unlabeled and query images. Pixel features are centroid + N(0, noise^2).
struct SyntheticTaskSpec {
    int channels = 32;
    int grid = 24;                  ///< feature map width and height
    int fg_parts = 3;
    int novel_parts = 1;
    int bg_parts = 8;               ///< shared background codebook size
    int bg_parts_per_image = 3;
    double separation = 1.0;
    double noise_std = 0.1;
    double fg_area_min = 0.15;
    double fg_area_max = 0.35;
    double mode_coverage = 0.0;     ///< in [0, 1]
    double novel_area_share = 0.5;  ///< share of the object given to novel parts at coverage 1
    double distractor_area = 0.0;   ///< image fraction covered by a distractor blob, 0 disables
    double distractor_mix = 0.5;
    double distractor_scale = 2.0;
    int n_classes = 20;
    int folds = 4;
    std::uint64_t codebook_seed = 1;
    std::uint64_t episode_seed = 1;

    /// Throws ConfigError on out-of-range fields.
    void validate() const;
};

/// Centroids drawn from the codebook seed.
struct Codebook {
    int channels = 0;
    std::vector<std::vector<std::vector<double>>> fg;          ///< [class][part]
    std::vector<std::vector<std::vector<double>>> distractor;  ///< [class][common part]
    std::vector<std::vector<double>> bg;                       ///< [part]
};

Codebook make_codebook(const SyntheticTaskSpec& spec);

/// Per-pixel generating component, kept alongside a generated image.
enum class ComponentKind : std::uint8_t { Foreground, Background, Distractor };

struct ComponentMap {
    std::vector<ComponentKind> kind;
    std::vector<int> part;  ///< index into the matching codebook list
};

struct SyntheticImage {
    FeatureMap features;
    LabelMask truth;
    ComponentMap components;
};

nlohmann::json to_json(const SyntheticTaskSpec& spec);

/// Returns `base` with the fields present in `overrides` replaced. Unknown
/// keys and mistyped values raise ConfigError. The result is validated.
SyntheticTaskSpec apply_overrides(SyntheticTaskSpec base, const nlohmann::json& overrides);

/// Fold of a class: classes are split into `folds` contiguous groups.
int class_fold(const SyntheticTaskSpec& spec, int class_index);

/// Class drawn for the index-th episode; folds are visited round-robin.
int episode_class(const SyntheticTaskSpec& spec, std::size_t index);

struct GeneratedEpisode {
    Episode episode;
    int class_index = 0;
    std::vector<SyntheticImage> supports;
    std::vector<SyntheticImage> unlabeled;
    SyntheticImage query;
};

/// Deterministic in (spec, class_index, episode_index). Unlabeled image m
/// does not depend on M, so smaller M gives a prefix of larger M.
GeneratedEpisode generate_episode(const SyntheticTaskSpec& spec, const Codebook& codebook, int class_index,
                                  std::size_t episode_index, int k_shot, int m_unlabeled);

/// Convenience wrapper returning only the Episode.
Episode gen_episode(const SyntheticTaskSpec& spec, int class_index, std::size_t episode_index, int k_shot,
                    int m_unlabeled);

std::string class_name(int class_index);

/// Named task distributions.
namespace presets {

/// Query and unlabeled objects devote half their area to a part the
/// supports never show.
SyntheticTaskSpec two_mode();

/// Unlabeled and query images carry a distractor blob that the support
/// prototypes score as confident foreground.
SyntheticTaskSpec adversarial();

/// Looks up "default", "two-mode" or "adversarial"; throws ConfigError otherwise.
SyntheticTaskSpec by_name(const std::string& name);

} // namespace presets

} // namespace protoseg
