#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoseg/metrics.hpp"
#include "protoseg/pseudolabel.hpp"
#include "protoseg/synthetic.hpp"
#include "protoseg/uncertainty.hpp"

namespace protoseg {

/// Supplies episodes by index.
class EpisodeSource {
public:
    virtual ~EpisodeSource() = default;
    virtual Episode episode(std::size_t index, int k_shot, int m_unlabeled) const = 0;
    virtual int fold(std::size_t index) const = 0;
    /// Number of distinct episodes; synthetic sources are unbounded.
    virtual std::size_t size() const = 0;
    virtual nlohmann::json describe() const = 0;
};

class SyntheticSource final : public EpisodeSource {
public:
    explicit SyntheticSource(SyntheticTaskSpec spec);

    Episode episode(std::size_t index, int k_shot, int m_unlabeled) const override;
    GeneratedEpisode generated(std::size_t index, int k_shot, int m_unlabeled) const;
    int fold(std::size_t index) const override;
    std::size_t size() const override;
    nlohmann::json describe() const override;

    const SyntheticTaskSpec& spec() const { return spec_; }
    const Codebook& codebook() const { return codebook_; }

private:
    SyntheticTaskSpec spec_;
    Codebook codebook_;
};

/// Episode fixture directories, cycled by index. Supports and unlabeled
/// images are truncated to the requested K and M.
class DirectorySource final : public EpisodeSource {
public:
    explicit DirectorySource(std::vector<std::filesystem::path> dirs);

    Episode episode(std::size_t index, int k_shot, int m_unlabeled) const override;
    int fold(std::size_t) const override { return 0; }
    std::size_t size() const override { return dirs_.size(); }
    nlohmann::json describe() const override;

private:
    std::vector<std::filesystem::path> dirs_;
};

struct BenchmarkConfig {
    int k_shot = 1;
    int m_unlabeled = 0;
    bool use_query_as_unlabeled = false;
    Refinement refinement = Refinement::Sigma;
    int episodes = 100;
    std::uint64_t seed = 0;
    int threads = 1;
    int clusters_support = 5;
    int clusters_unlabeled = 5;
    double lambda_p = 0.8;
    int kmeans_iters = 10;
    double temperature = kDefaultTemperature;

    /// Pipeline settings for the episode with the given index.
    SemiSupervisedConfig pipeline(std::size_t index) const;
    nlohmann::json to_json() const;
};

struct FoldMetrics {
    int fold = 0;
    double mean_iou = 0.0;
    double binary_iou = 0.0;
    std::size_t n_episodes = 0;
};

struct BenchmarkReport {
    nlohmann::json config;
    std::vector<FoldMetrics> folds;
    FoldMetrics aggregate;  ///< fold-averaged metrics, total episode count
    double wall_time_s = 0.0;

    nlohmann::json to_json(bool include_timing = true) const;
};

/// Called once per evaluated episode, possibly from several threads.
using EpisodeCallback =
    std::function<void(std::size_t index, const Episode& episode, const SemiSupervisedResult& result)>;

/// Evaluates `cfg.episodes` episodes and reports per-fold and aggregate
/// mean-IoU / binary-IoU. Results do not depend on the thread count.
BenchmarkReport run_benchmark(const EpisodeSource& source, const UncertaintyNet* net, const BenchmarkConfig& cfg,
                              const EpisodeCallback& on_episode = {});

struct TrainOptions {
    int steps = 2000;
    int batch = 32;
    double lr = 1e-3;
    int k_shot = 1;
    std::uint64_t seed = 0;
    int clusters = 5;
    double lambda_p = 0.8;
    int kmeans_iters = 10;
    double temperature = kDefaultTemperature;
};

/// First episode index used for training; evaluation uses lower indices.
inline constexpr std::size_t kTrainingEpisodeOffset = std::size_t{1} << 40;

/// Pixel samples from one labeled query, as seen by the net during training.
std::vector<TrainingSample> episode_samples(const Episode& episode, const TrainOptions& options, std::size_t count,
                                            std::uint64_t seed);

/// Held-out samples for tracking the NLL, drawn from `episodes` episodes
/// placed just below the training range.
std::vector<TrainingSample> validation_samples(const EpisodeSource& source, const TrainOptions& options, int episodes,
                                               std::size_t per_episode);

/// Adam on the gaussian NLL, one fresh training episode per step.
TrainState train_uncertainty(TrainState state, const EpisodeSource& source, const TrainOptions& options,
                             const std::function<void(long, double)>& on_step = {});

} // namespace protoseg
