#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protoseg/tensor.hpp"

namespace protoseg {

enum class Provenance : std::uint8_t { Support = 0, Unlabeled = 1 };

const char* to_string(Provenance p);

struct Prototype {
    std::vector<double> values;
    Provenance source = Provenance::Support;
};

/// Per-class prototype collections for one episode class.
struct PrototypeSet {
    std::string class_id;
    std::vector<Prototype> fg;
    std::vector<Prototype> bg;

    bool empty() const { return fg.empty() && bg.empty(); }
    /// Channel count of the stored vectors, 0 when the set is empty.
    int channels() const;
    const std::vector<Prototype>& of(std::uint8_t cls) const { return cls == kForeground ? fg : bg; }
};

struct ClusterAssignment {
    std::vector<int> labels;                     ///< cluster index per input point
    std::vector<std::vector<double>> centroids;  ///< mean of the member points
    std::vector<double> sse_history;             ///< within-cluster SSE after each Lloyd iteration
};

/// Lloyd's k-means with k-means++ seeding drawn from `seed`.
///
/// When there are fewer points than clusters the cluster count drops to the
/// point count. A cluster that empties during an iteration is re-seeded with
/// the point farthest from its own centroid. Clusters that are still empty
/// at the end (possible with duplicate points) are dropped, so every
/// returned centroid has at least one member.
ClusterAssignment kmeans(const Matrix& points, int n_clusters, int iters, std::uint64_t seed);

/// Sum of squared distances from each point to its assigned centroid.
double within_cluster_sse(const Matrix& points, const ClusterAssignment& assignment);

struct PrototypeOptions {
    int clusters_per_class = 5;
    double lambda_p = 0.8;
    int kmeans_iters = 10;
    std::uint64_t seed = 0;
};

/// Feature map with its mask already at feature resolution.
struct LabeledView {
    const FeatureMap& features;
    const LabelMask& mask;
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Global-context augmentation within one class:
///   p_i = p~_i + lambda * sum_{j != i} a_ij p~_j,
///   a_ij = d(p~_i, p~_j) / sum_{j != i} d(p~_i, p~_j),  d = max(cos, 0).
/// A prototype with no positively similar neighbour is left unchanged.
std::vector<std::vector<double>> augment_with_context(const std::vector<std::vector<double>>& raw, double lambda_p);

/// Part-aware prototypes from one or more labeled feature maps. Features of
/// each class are pooled across all inputs, clustered (FG first, then BG)
/// and augmented with global context. A class without pixels yields no
/// prototypes.
PrototypeSet build_part_prototypes(std::span<const LabeledView> images, const PrototypeOptions& options,
                                   Provenance source = Provenance::Support, std::string class_id = {});

PrototypeSet build_part_prototypes(const FeatureMap& features, const LabelMask& mask,
                                   const PrototypeOptions& options, Provenance source = Provenance::Support,
                                   std::string class_id = {});

/// Concatenation `a` then `b`, provenance preserved. Class ids must agree
/// unless one side is empty.
PrototypeSet merge_prototype_sets(const PrototypeSet& a, const PrototypeSet& b);

/// Rows of all prototypes of one class, for the interchange dump.
Matrix prototype_matrix(const std::vector<Prototype>& protos);

} // namespace protoseg
