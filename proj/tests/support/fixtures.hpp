#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "protoseg/protogen.hpp"
#include "protoseg/tensor.hpp"

namespace fixtures {

inline protoseg::FeatureMap random_features(int w, int h, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<float> n(0.0f, static_cast<float>(scale));
    std::vector<float> data(static_cast<std::size_t>(w) * h * c);
    for (auto& v : data) v = n(rng);
    return {w, h, c, std::move(data)};
}

inline protoseg::LabelMask random_mask(int w, int h, std::mt19937_64& rng, double p_fg = 0.5) {
    std::bernoulli_distribution b(p_fg);
    std::vector<std::uint8_t> v(static_cast<std::size_t>(w) * h);
    for (auto& x : v) x = b(rng) ? protoseg::kForeground : protoseg::kBackground;
    return {w, h, std::move(v)};
}

inline std::vector<double> random_vector(int c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(c);
    for (auto& x : v) x = n(rng);
    return v;
}

inline protoseg::PrototypeSet random_prototypes(int n_fg, int n_bg, int c, std::mt19937_64& rng) {
    protoseg::PrototypeSet s;
    s.class_id = "c";
    for (int i = 0; i < n_fg; ++i) s.fg.push_back({random_vector(c, rng), protoseg::Provenance::Support});
    for (int i = 0; i < n_bg; ++i) s.bg.push_back({random_vector(c, rng), protoseg::Provenance::Support});
    return s;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "protoseg") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

} // namespace fixtures
