#include "run_config.hpp"

#include <algorithm>
#include <thread>
#include <type_traits>

#include "protoseg/error.hpp"
#include "protoseg/pseudolabel.hpp"

namespace protoseg::cli {

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const std::string& key, T& target) {
    const bool ok = [&] {
        if constexpr (std::is_same_v<T, bool>) return j.is_boolean();
        else if constexpr (std::is_unsigned_v<T>) return j.is_number_unsigned();
        else if constexpr (std::is_integral_v<T>) return j.is_number_integer();
        else if constexpr (std::is_floating_point_v<T>) return j.is_number();
        else return j.is_string();
    }();
    if (!ok) throw ConfigError("config: key '" + key + "' has the wrong type");
    target = j.get<T>();
}

} // namespace

RunConfig default_config() {
    RunConfig cfg;
    cfg.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    return cfg;
}

void apply_json(RunConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "seed") read_field(v, key, cfg.seed);
        else if (key == "k") read_field(v, key, cfg.k_shot);
        else if (key == "m") read_field(v, key, cfg.m_unlabeled);
        else if (key == "episodes") read_field(v, key, cfg.episodes);
        else if (key == "refinement") read_field(v, key, cfg.refinement);
        else if (key == "use_query_as_unlabeled") read_field(v, key, cfg.use_query_as_unlabeled);
        else if (key == "threads") read_field(v, key, cfg.threads);
        else if (key == "out") {
            std::string s;
            read_field(v, key, s);
            cfg.out = s;
        } else if (key == "clusters_support") read_field(v, key, cfg.clusters_support);
        else if (key == "clusters_unlabeled") read_field(v, key, cfg.clusters_unlabeled);
        else if (key == "lambda_p") read_field(v, key, cfg.lambda_p);
        else if (key == "kmeans_iters") read_field(v, key, cfg.kmeans_iters);
        else if (key == "temperature") read_field(v, key, cfg.temperature);
        else if (key == "sigma_min") read_field(v, key, cfg.sigma_min);
        else if (key == "steps") read_field(v, key, cfg.steps);
        else if (key == "batch") read_field(v, key, cfg.batch);
        else if (key == "lr") read_field(v, key, cfg.lr);
        else if (key == "preset") read_field(v, key, cfg.preset);
        else if (key == "synthetic") {
            if (!v.is_object()) throw ConfigError("config: key 'synthetic' must be an object");
            cfg.synthetic.update(v);
        } else if (key == "episode_dirs") {
            if (!v.is_array()) throw ConfigError("config: key 'episode_dirs' must be an array of paths");
            cfg.episode_dirs.clear();
            for (const auto& d : v) {
                std::string s;
                read_field(d, key, s);
                cfg.episode_dirs.emplace_back(s);
            }
        } else if (key == "checkpoint") {
            std::string s;
            read_field(v, key, s);
            cfg.checkpoint = s;
        } else if (key == "index") read_field(v, key, cfg.index);
        else if (key == "dump_maps") read_field(v, key, cfg.dump_maps);
        else if (key == "command") continue;
        else throw ConfigError("config: unknown key '" + key + "'");
    }
}

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (k_shot < 1) fail("k must be >= 1");
    if (m_unlabeled < 0) fail("m must be >= 0");
    if (episodes < 1) fail("episodes must be >= 1");
    parse_refinement(refinement);
    if (threads < 1) fail("threads must be >= 1");
    if (clusters_support < 1 || clusters_unlabeled < 1) fail("cluster counts must be >= 1");
    if (!(lambda_p >= 0.0)) fail("lambda_p must be >= 0");
    if (kmeans_iters < 0) fail("kmeans_iters must be >= 0");
    if (!(temperature > 0.0)) fail("temperature must be > 0");
    if (!(sigma_min > 0.0 && sigma_min < 1.0)) fail("sigma_min must be in (0, 1)");
    if (steps < 0) fail("steps must be >= 0");
    if (batch < 1) fail("batch must be >= 1");
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (dump_maps < 0) fail("dump_maps must be >= 0");
    if (out.empty()) fail("--out is required");
    if (episode_dirs.empty()) resolve_spec(*this);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json dirs = nlohmann::json::array();
    for (const auto& d : episode_dirs) dirs.push_back(d.generic_string());
    nlohmann::json j{{"command", command},
                     {"seed", seed},
                     {"k", k_shot},
                     {"m", m_unlabeled},
                     {"episodes", episodes},
                     {"refinement", refinement},
                     {"use_query_as_unlabeled", use_query_as_unlabeled},
                     {"threads", threads},
                     {"out", out.generic_string()},
                     {"clusters_support", clusters_support},
                     {"clusters_unlabeled", clusters_unlabeled},
                     {"lambda_p", lambda_p},
                     {"kmeans_iters", kmeans_iters},
                     {"temperature", temperature},
                     {"sigma_min", sigma_min},
                     {"steps", steps},
                     {"batch", batch},
                     {"lr", lr},
                     {"preset", preset},
                     {"episode_dirs", dirs},
                     {"checkpoint", checkpoint.generic_string()},
                     {"index", index},
                     {"dump_maps", dump_maps}};
    j["synthetic"] = episode_dirs.empty() ? protoseg::to_json(resolve_spec(*this)) : nlohmann::json(nullptr);
    return j;
}

SyntheticTaskSpec resolve_spec(const RunConfig& cfg) {
    return apply_overrides(presets::by_name(cfg.preset), cfg.synthetic);
}

BenchmarkConfig benchmark_config(const RunConfig& cfg) {
    BenchmarkConfig b;
    b.k_shot = cfg.k_shot;
    b.m_unlabeled = cfg.m_unlabeled;
    b.use_query_as_unlabeled = cfg.use_query_as_unlabeled;
    b.refinement = parse_refinement(cfg.refinement);
    b.episodes = cfg.episodes;
    b.seed = cfg.seed;
    b.threads = cfg.threads;
    b.clusters_support = cfg.clusters_support;
    b.clusters_unlabeled = cfg.clusters_unlabeled;
    b.lambda_p = cfg.lambda_p;
    b.kmeans_iters = cfg.kmeans_iters;
    b.temperature = cfg.temperature;
    return b;
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions t;
    t.steps = cfg.steps;
    t.batch = cfg.batch;
    t.lr = cfg.lr;
    t.k_shot = cfg.k_shot;
    t.seed = cfg.seed;
    t.clusters = cfg.clusters_support;
    t.lambda_p = cfg.lambda_p;
    t.kmeans_iters = cfg.kmeans_iters;
    t.temperature = cfg.temperature;
    return t;
}

} // namespace protoseg::cli
