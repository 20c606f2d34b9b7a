#include "protoseg/episode_io.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "protoseg/error.hpp"
#include "protoseg/interchange.hpp"

namespace protoseg::io {

namespace fs = std::filesystem;
using nlohmann::json;

void save_episode(const fs::path& dir, const Episode& episode) {
    episode.validate();
    fs::create_directories(dir);
    json j;
    j["class_id"] = episode.class_id;
    j["supports"] = json::array();
    for (std::size_t k = 0; k < episode.supports.size(); ++k) {
        const std::string f = "support_" + std::to_string(k) + "/features";
        const std::string m = "support_" + std::to_string(k) + "/mask";
        save_feature_map(dir / f, episode.supports[k].features, "support_" + std::to_string(k) + ".features");
        save_mask(dir / m, episode.supports[k].mask, "support_" + std::to_string(k) + ".mask");
        j["supports"].push_back({{"features", f}, {"mask", m}});
    }
    j["unlabeled"] = json::array();
    for (std::size_t u = 0; u < episode.unlabeled.size(); ++u) {
        const std::string f = "unlabeled_" + std::to_string(u);
        save_feature_map(dir / f, episode.unlabeled[u], f);
        j["unlabeled"].push_back(f);
    }
    save_feature_map(dir / "query", episode.query, "query");
    j["query"] = "query";
    if (episode.query_truth) {
        save_mask(dir / "query_truth", *episode.query_truth, "query_truth");
        j["query_truth"] = "query_truth";
    }
    std::ofstream out(dir / kEpisodeFile);
    if (!out) throw FormatError("cannot write " + (dir / kEpisodeFile).string());
    out << j.dump(2) << '\n';
}

Episode load_episode(const fs::path& dir) {
    const fs::path file = dir / kEpisodeFile;
    std::ifstream in(file);
    if (!in) throw FormatError("missing episode descriptor " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": invalid JSON: " + e.what());
    }

    Episode ep;
    try {
        ep.class_id = j.value("class_id", std::string{});
        for (const auto& s : j.at("supports")) {
            ep.supports.push_back({load_feature_map(dir / s.at("features").get<std::string>()),
                                   load_mask(dir / s.at("mask").get<std::string>())});
        }
        if (j.contains("unlabeled")) {
            for (const auto& u : j.at("unlabeled")) ep.unlabeled.push_back(load_feature_map(dir / u.get<std::string>()));
        }
        ep.query = load_feature_map(dir / j.at("query").get<std::string>());
        if (j.contains("query_truth") && !j.at("query_truth").is_null()) {
            ep.query_truth = load_mask(dir / j.at("query_truth").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
    try {
        ep.validate();
    } catch (const DimensionError& e) {
        throw DimensionError(file.string() + ": " + e.what());
    }
    return ep;
}

} // namespace protoseg::io
