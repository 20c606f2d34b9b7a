#include "protoseg/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "protoseg/episode_io.hpp"
#include "protoseg/error.hpp"

namespace protoseg {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

SyntheticSource::SyntheticSource(SyntheticTaskSpec spec) : spec_(std::move(spec)), codebook_(make_codebook(spec_)) {}

GeneratedEpisode SyntheticSource::generated(std::size_t index, int k_shot, int m_unlabeled) const {
    return generate_episode(spec_, codebook_, episode_class(spec_, index), index, k_shot, m_unlabeled);
}

Episode SyntheticSource::episode(std::size_t index, int k_shot, int m_unlabeled) const {
    return generated(index, k_shot, m_unlabeled).episode;
}

int SyntheticSource::fold(std::size_t index) const { return class_fold(spec_, episode_class(spec_, index)); }

std::size_t SyntheticSource::size() const { return std::numeric_limits<std::size_t>::max(); }

nlohmann::json SyntheticSource::describe() const { return {{"kind", "synthetic"}, {"spec", to_json(spec_)}}; }

DirectorySource::DirectorySource(std::vector<std::filesystem::path> dirs) : dirs_(std::move(dirs)) {
    if (dirs_.empty()) throw ConfigError("DirectorySource: no episode directories given");
}

Episode DirectorySource::episode(std::size_t index, int k_shot, int m_unlabeled) const {
    Episode ep = io::load_episode(dirs_[index % dirs_.size()]);
    if (k_shot > 0 && static_cast<std::size_t>(k_shot) < ep.supports.size()) ep.supports.resize(k_shot);
    if (m_unlabeled >= 0 && static_cast<std::size_t>(m_unlabeled) < ep.unlabeled.size()) ep.unlabeled.resize(m_unlabeled);
    return ep;
}

nlohmann::json DirectorySource::describe() const {
    nlohmann::json dirs = nlohmann::json::array();
    for (const auto& d : dirs_) dirs.push_back(d.generic_string());
    return {{"kind", "directory"}, {"episodes", dirs}};
}

SemiSupervisedConfig BenchmarkConfig::pipeline(std::size_t index) const {
    SemiSupervisedConfig p;
    const std::uint64_t s = mix_seed(seed, index);
    p.support = {clusters_support, lambda_p, kmeans_iters, s};
    p.unlabeled = {clusters_unlabeled, lambda_p, kmeans_iters, s ^ 0xa5a5a5a5ULL};
    p.temperature = temperature;
    p.refinement = refinement;
    p.use_query_as_unlabeled = use_query_as_unlabeled;
    p.max_unlabeled = m_unlabeled;
    return p;
}

nlohmann::json BenchmarkConfig::to_json() const {
    return {{"k_shot", k_shot},
            {"m_unlabeled", m_unlabeled},
            {"use_query_as_unlabeled", use_query_as_unlabeled},
            {"refinement", to_string(refinement)},
            {"episodes", episodes},
            {"seed", seed},
            {"threads", threads},
            {"clusters_support", clusters_support},
            {"clusters_unlabeled", clusters_unlabeled},
            {"lambda_p", lambda_p},
            {"kmeans_iters", kmeans_iters},
            {"temperature", temperature}};
}

nlohmann::json BenchmarkReport::to_json(bool include_timing) const {
    nlohmann::json j;
    j["config"] = config;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : folds) {
        j["folds"].push_back(
            {{"fold", f.fold}, {"mean_iou", f.mean_iou}, {"binary_iou", f.binary_iou}, {"n_episodes", f.n_episodes}});
    }
    j["aggregate"] = {{"mean_iou", aggregate.mean_iou},
                      {"binary_iou", aggregate.binary_iou},
                      {"n_episodes", aggregate.n_episodes}};
    if (include_timing) j["wall_time_s"] = wall_time_s;
    return j;
}

BenchmarkReport run_benchmark(const EpisodeSource& source, const UncertaintyNet* net, const BenchmarkConfig& cfg,
                              const EpisodeCallback& on_episode) {
    if (cfg.episodes < 1) throw ConfigError("run_benchmark: episodes must be >= 1");
    if (cfg.k_shot < 1) throw ConfigError("run_benchmark: K must be >= 1");
    if (cfg.m_unlabeled < 0) throw ConfigError("run_benchmark: M must be >= 0");
    if (cfg.refinement == Refinement::Sigma && net == nullptr &&
        (cfg.m_unlabeled > 0 || cfg.use_query_as_unlabeled)) {
        throw ConfigError("run_benchmark: sigma refinement requires an uncertainty net");
    }
    const auto start = std::chrono::steady_clock::now();
    const int threads = std::max(1, std::min(cfg.threads, cfg.episodes));
    const auto n = static_cast<std::size_t>(cfg.episodes);

    std::vector<std::map<int, MetricAccumulator>> partial(threads);
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto work = [&](int worker) {
        try {
            for (std::size_t i = worker; i < n; i += threads) {
                const Episode ep = source.episode(i, cfg.k_shot, cfg.m_unlabeled);
                if (!ep.query_truth) throw ConfigError("run_benchmark: episode " + std::to_string(i) + " has no query truth");
                const SemiSupervisedResult r = segment_semisupervised(ep, net, cfg.pipeline(i));
                partial[worker][source.fold(i)].add(ep.class_id, r.mask, *ep.query_truth);
                if (on_episode) on_episode(i, ep, r);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::map<int, MetricAccumulator> per_fold;
    for (const auto& p : partial) {
        for (const auto& [fold, acc] : p) per_fold[fold].merge(acc);
    }

    BenchmarkReport report;
    report.config = cfg.to_json();
    report.config["source"] = source.describe();
    for (const auto& [fold, acc] : per_fold) {
        report.folds.push_back({fold, mean_iou(acc), binary_iou(acc), acc.episodes()});
        report.aggregate.mean_iou += report.folds.back().mean_iou;
        report.aggregate.binary_iou += report.folds.back().binary_iou;
        report.aggregate.n_episodes += acc.episodes();
    }
    report.aggregate.fold = -1;
    report.aggregate.mean_iou /= static_cast<double>(report.folds.size());
    report.aggregate.binary_iou /= static_cast<double>(report.folds.size());
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::vector<TrainingSample> episode_samples(const Episode& episode, const TrainOptions& options, std::size_t count,
                                            std::uint64_t seed) {
    if (!episode.query_truth) throw ConfigError("episode_samples: query truth is required");
    const PrototypeSet protos =
        support_prototypes(episode, {options.clusters, options.lambda_p, options.kmeans_iters, seed});
    const SimilarityMaps sims = similarity(episode.query, protos);
    const ProbabilityMap mu = mu_from_similarity(sims, options.temperature);
    const LabelMask truth = mask_at_feature_resolution(*episode.query_truth, episode.query);

    std::vector<std::size_t> pixels(episode.query.pixel_count());
    std::iota(pixels.begin(), pixels.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(pixels.begin(), pixels.end(), rng);
    pixels.resize(std::min(count, pixels.size()));
    return collect_samples(episode.query, protos, sims, mu, truth, pixels);
}

std::vector<TrainingSample> validation_samples(const EpisodeSource& source, const TrainOptions& options, int episodes,
                                               std::size_t per_episode) {
    std::vector<TrainingSample> out;
    for (int e = 0; e < episodes; ++e) {
        const std::size_t index = kTrainingEpisodeOffset - 1 - static_cast<std::size_t>(e);
        auto s = episode_samples(source.episode(index, options.k_shot, 0), options, per_episode,
                                 mix_seed(options.seed ^ 0x7a11d, index));
        out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    return out;
}

TrainState train_uncertainty(TrainState state, const EpisodeSource& source, const TrainOptions& options,
                             const std::function<void(long, double)>& on_step) {
    if (options.steps < 0) throw ConfigError("train_uncertainty: steps must be >= 0");
    if (options.batch < 1) throw ConfigError("train_uncertainty: batch must be >= 1");
    if (!(options.lr > 0.0)) throw ConfigError("train_uncertainty: learning rate must be > 0");
    for (int step = 0; step < options.steps; ++step) {
        const std::size_t index = kTrainingEpisodeOffset + mix_seed(options.seed, step) % (std::size_t{1} << 32);
        const Episode ep = source.episode(index, options.k_shot, 0);
        const auto batch =
            episode_samples(ep, options, static_cast<std::size_t>(options.batch), mix_seed(options.seed, index));
        state = train_step(std::move(state), batch, options.lr);
        if (on_step) on_step(state.step, state.loss_history.back());
    }
    return state;
}

} // namespace protoseg
