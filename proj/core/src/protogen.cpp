#include "protoseg/protogen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "protoseg/error.hpp"

namespace protoseg {

const char* to_string(Provenance p) { return p == Provenance::Support ? "support" : "unlabeled"; }

int PrototypeSet::channels() const {
    if (!fg.empty()) return static_cast<int>(fg.front().values.size());
    if (!bg.empty()) return static_cast<int>(bg.front().values.size());
    return 0;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::vector<std::size_t> seed_plus_plus(const Matrix& points, int k, std::mt19937_64& rng) {
    const std::size_t n = points.rows();
    std::vector<std::size_t> chosen;
    chosen.reserve(k);
    std::vector<bool> taken(n, false);
    chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    taken[chosen.back()] = true;

    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(chosen.size()) < k) {
        const auto last = points.row(chosen.back());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), last));
            total += d2[i];
        }
        std::size_t next = n;
        if (total > 0.0) {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                next = i;
                r -= d2[i];
                if (r <= 0.0) break;
            }
        } else {
            // All remaining points coincide with a chosen centre: take them in index order.
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i]) {
                    next = i;
                    break;
                }
            }
        }
        chosen.push_back(next);
        taken[next] = true;
    }
    return chosen;
}

} // namespace

ClusterAssignment kmeans(const Matrix& points, int n_clusters, int iters, std::uint64_t seed) {
    if (points.empty()) throw DimensionError("kmeans: empty point list");
    if (n_clusters < 1) throw ConfigError("kmeans: n_clusters must be >= 1");
    if (iters < 1) throw ConfigError("kmeans: iters must be >= 1");

    const std::size_t n = points.rows();
    const std::size_t dims = points.cols();
    const int k = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(n_clusters)));

    std::mt19937_64 rng(seed);
    ClusterAssignment out;
    out.centroids.reserve(k);
    for (std::size_t idx : seed_plus_plus(points, k, rng)) {
        const auto r = points.row(idx);
        out.centroids.emplace_back(r.begin(), r.end());
    }
    out.labels.assign(n, -1);

    std::vector<int> counts(k);
    std::vector<double> point_d2(n);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = squared_distance(points.row(i), out.centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (out.labels[i] != best) changed = true;
            out.labels[i] = best;
            point_d2[i] = best_d;
        }

        std::fill(counts.begin(), counts.end(), 0);
        for (int l : out.labels) ++counts[l];
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            // Steal the point farthest from its centroid, from a cluster that can spare it.
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[out.labels[i]] > 1 && point_d2[i] > far_d) {
                    far_d = point_d2[i];
                    far = i;
                }
            }
            if (far == n || far_d <= 0.0) continue;
            --counts[out.labels[far]];
            out.labels[far] = c;
            point_d2[far] = 0.0;
            counts[c] = 1;
            changed = true;
        }

        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            std::fill(out.centroids[c].begin(), out.centroids[c].end(), 0.0);
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto& cen = out.centroids[out.labels[i]];
            const auto r = points.row(i);
            for (std::size_t d = 0; d < dims; ++d) cen[d] += r[d];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (auto& v : out.centroids[c]) v /= counts[c];
        }
        out.sse_history.push_back(within_cluster_sse(points, out));
        if (!changed && it > 0) break;
    }

    // Drop clusters that never received a point and compact the labels.
    std::vector<int> remap(k, -1);
    std::vector<std::vector<double>> kept;
    for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        remap[c] = static_cast<int>(kept.size());
        kept.push_back(std::move(out.centroids[c]));
    }
    out.centroids = std::move(kept);
    for (auto& l : out.labels) l = remap[l];
    return out;
}

double within_cluster_sse(const Matrix& points, const ClusterAssignment& assignment) {
    double sse = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
        sse += squared_distance(points.row(i), assignment.centroids[assignment.labels[i]]);
    }
    return sse;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::vector<double>> augment_with_context(const std::vector<std::vector<double>>& raw, double lambda_p) {
    const std::size_t n = raw.size();
    if (n < 2 || lambda_p == 0.0) return raw;

    std::vector<double> sim(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = std::max(0.0, cosine_similarity(raw[i], raw[j]));
            sim[i * n + j] = d;
            sim[j * n + i] = d;
        }
    }
    std::vector<std::vector<double>> out = raw;
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) norm += sim[i * n + j];
        }
        if (norm <= 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || sim[i * n + j] == 0.0) continue;
            const double w = lambda_p * sim[i * n + j] / norm;
            for (std::size_t c = 0; c < out[i].size(); ++c) out[i][c] += w * raw[j][c];
        }
    }
    return out;
}

namespace {

std::vector<Prototype> class_prototypes(std::span<const LabeledView> images, std::uint8_t cls,
                                        const PrototypeOptions& options, Provenance source) {
    Matrix points;
    for (const auto& img : images) {
        if (img.features.width() != img.mask.width() || img.features.height() != img.mask.height()) {
            throw DimensionError("build_part_prototypes: mask is not at feature resolution");
        }
        for (std::size_t i = 0; i < img.features.pixel_count(); ++i) {
            if (img.mask[i] == cls) points.append(img.features.pixel(i));
        }
    }
    if (points.empty()) return {};

    // FG and BG draw from decorrelated streams of the same seed.
    const std::uint64_t seed = options.seed * 2 + cls;
    const auto assignment = kmeans(points, options.clusters_per_class, options.kmeans_iters, seed);
    const auto augmented = augment_with_context(assignment.centroids, options.lambda_p);

    std::vector<Prototype> out;
    out.reserve(augmented.size());
    for (const auto& v : augmented) out.push_back({v, source});
    return out;
}

} // namespace

PrototypeSet build_part_prototypes(std::span<const LabeledView> images, const PrototypeOptions& options,
                                   Provenance source, std::string class_id) {
    if (options.clusters_per_class < 1) throw ConfigError("build_part_prototypes: clusters_per_class must be >= 1");
    if (options.lambda_p < 0.0) throw ConfigError("build_part_prototypes: lambda_p must be >= 0");
    if (!images.empty()) {
        const int c = images.front().features.channels();
        for (const auto& img : images) {
            if (img.features.channels() != c) throw DimensionError("build_part_prototypes: channel mismatch");
        }
    }
    PrototypeSet set;
    set.class_id = std::move(class_id);
    set.fg = class_prototypes(images, kForeground, options, source);
    set.bg = class_prototypes(images, kBackground, options, source);
    return set;
}

PrototypeSet build_part_prototypes(const FeatureMap& features, const LabelMask& mask, const PrototypeOptions& options,
                                   Provenance source, std::string class_id) {
    const LabeledView view{features, mask};
    return build_part_prototypes(std::span<const LabeledView>(&view, 1), options, source, std::move(class_id));
}

PrototypeSet merge_prototype_sets(const PrototypeSet& a, const PrototypeSet& b) {
    if (!a.class_id.empty() && !b.class_id.empty() && a.class_id != b.class_id) {
        throw ConfigError("merge_prototype_sets: class mismatch '" + a.class_id + "' vs '" + b.class_id + "'");
    }
    if (!a.empty() && !b.empty() && a.channels() != b.channels()) {
        throw DimensionError("merge_prototype_sets: channel mismatch");
    }
    PrototypeSet out;
    out.class_id = a.class_id.empty() ? b.class_id : a.class_id;
    out.fg = a.fg;
    out.fg.insert(out.fg.end(), b.fg.begin(), b.fg.end());
    out.bg = a.bg;
    out.bg.insert(out.bg.end(), b.bg.begin(), b.bg.end());
    return out;
}

Matrix prototype_matrix(const std::vector<Prototype>& protos) {
    Matrix m;
    for (const auto& p : protos) m.append(std::span<const double>(p.values));
    return m;
}

} // namespace protoseg
