#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoseg/benchmark.hpp"
#include "protoseg/synthetic.hpp"

namespace protoseg::cli {

/// Fully resolved settings for one CLI run. Resolution order is defaults,
/// then the --config file, then explicit flags.
struct RunConfig {
    std::string command;
    std::uint64_t seed = 0;
    int k_shot = 1;
    int m_unlabeled = 0;
    int episodes = 100;
    std::string refinement = "sigma";
    bool use_query_as_unlabeled = false;
    int threads = 1;
    std::filesystem::path out;

    int clusters_support = 5;
    int clusters_unlabeled = 5;
    double lambda_p = 0.8;
    int kmeans_iters = 10;
    double temperature = kDefaultTemperature;
    double sigma_min = kDefaultSigmaMin;

    int steps = 3000;
    int batch = 32;
    double lr = 1e-3;

    std::string preset = "default";
    nlohmann::json synthetic = nlohmann::json::object();  ///< field overrides on top of the preset
    std::vector<std::filesystem::path> episode_dirs;       ///< replaces the synthetic source when non-empty
    std::filesystem::path checkpoint;
    std::size_t index = 0;  ///< episode index for dump-embeddings
    int dump_maps = 0;      ///< eval: episodes whose maps are written as tensors

    /// Throws ConfigError on out-of-range values.
    void validate() const;
    nlohmann::json to_json() const;
};

/// Defaults with `threads` set to the available cores.
RunConfig default_config();

/// Overrides the fields present in `j`. Unknown keys and wrong types raise ConfigError.
void apply_json(RunConfig& cfg, const nlohmann::json& j);

/// Preset plus the `synthetic` overrides, validated.
SyntheticTaskSpec resolve_spec(const RunConfig& cfg);

BenchmarkConfig benchmark_config(const RunConfig& cfg);
TrainOptions train_options(const RunConfig& cfg);

} // namespace protoseg::cli
