#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protoseg/tensor.hpp"

namespace protoseg::io {

// A tensor directory holds `manifest.json` ({name, dtype, shape, byte_order})
// and `data.bin` (raw little-endian values, row-major, channel-last).

enum class DType { F32, U8 };

std::string to_string(DType dtype);
std::size_t element_size(DType dtype);

struct TensorManifest {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::size_t> shape;

    std::size_t element_count() const;
    std::size_t byte_count() const { return element_count() * element_size(dtype); }
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kDataFile = "data.bin";

void write_tensor(const std::filesystem::path& dir, const TensorManifest& manifest,
                  std::span<const float> values);
void write_tensor(const std::filesystem::path& dir, const TensorManifest& manifest,
                  std::span<const std::uint8_t> values);

TensorManifest read_manifest(const std::filesystem::path& dir);
std::vector<float> read_f32(const std::filesystem::path& dir, TensorManifest* manifest = nullptr);
std::vector<std::uint8_t> read_u8(const std::filesystem::path& dir, TensorManifest* manifest = nullptr);

void save_feature_map(const std::filesystem::path& dir, const FeatureMap& map, const std::string& name);
FeatureMap load_feature_map(const std::filesystem::path& dir);

void save_mask(const std::filesystem::path& dir, const LabelMask& mask, const std::string& name);
LabelMask load_mask(const std::filesystem::path& dir);

/// Stored as f32 with shape [H, W, 2].
void save_probability_map(const std::filesystem::path& dir, const ProbabilityMap& map, const std::string& name);
ProbabilityMap load_probability_map(const std::filesystem::path& dir);

/// Stored as f32 with shape [N, C].
void save_matrix(const std::filesystem::path& dir, const Matrix& rows, const std::string& name);
Matrix load_matrix(const std::filesystem::path& dir);

} // namespace protoseg::io
