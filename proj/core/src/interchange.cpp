#include "protoseg/interchange.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "protoseg/error.hpp"

namespace protoseg::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "u8"; }

std::size_t element_size(DType dtype) { return dtype == DType::F32 ? 4 : 1; }

std::size_t TensorManifest::element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

DType parse_dtype(const std::string& s, const fs::path& file) {
    if (s == "f32") return DType::F32;
    if (s == "u8") return DType::U8;
    throw FormatError(file.string() + ": unsupported dtype '" + s + "'");
}

void write_manifest(const fs::path& dir, const TensorManifest& m) {
    fs::create_directories(dir);
    json j;
    j["name"] = m.name;
    j["dtype"] = to_string(m.dtype);
    j["shape"] = m.shape;
    j["byte_order"] = "little";
    std::ofstream out(dir / kManifestFile);
    if (!out) throw FormatError("cannot write " + (dir / kManifestFile).string());
    out << j.dump(2) << '\n';
}

void write_bytes(const fs::path& file, const void* data, std::size_t size) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + file.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw FormatError("short write to " + file.string());
}

std::vector<char> read_payload(const fs::path& dir, const TensorManifest& m) {
    const fs::path file = dir / kDataFile;
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("missing tensor data file " + file.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    if (size != m.byte_count()) {
        throw FormatError(file.string() + ": expected " + std::to_string(m.byte_count()) + " bytes for shape " +
                          json(m.shape).dump() + " (" + to_string(m.dtype) + "), found " + std::to_string(size));
    }
    std::vector<char> bytes(size);
    in.seekg(0);
    in.read(bytes.data(), static_cast<std::streamsize>(size));
    return bytes;
}

std::uint32_t byteswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void require_dtype(const TensorManifest& m, DType expected, const fs::path& dir) {
    if (m.dtype != expected) {
        throw FormatError((dir / kManifestFile).string() + ": dtype is " + to_string(m.dtype) + ", expected " +
                          to_string(expected));
    }
}

} // namespace

void write_tensor(const fs::path& dir, const TensorManifest& manifest, std::span<const float> values) {
    if (manifest.dtype != DType::F32) throw FormatError("write_tensor: manifest dtype must be f32");
    if (manifest.element_count() != values.size()) {
        throw DimensionError("write_tensor: shape does not match value count for " + manifest.name);
    }
    write_manifest(dir, manifest);
    if constexpr (std::endian::native == std::endian::little) {
        write_bytes(dir / kDataFile, values.data(), values.size_bytes());
    } else {
        std::vector<std::uint32_t> swapped(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) swapped[i] = byteswap32(std::bit_cast<std::uint32_t>(values[i]));
        write_bytes(dir / kDataFile, swapped.data(), swapped.size() * 4);
    }
}

void write_tensor(const fs::path& dir, const TensorManifest& manifest, std::span<const std::uint8_t> values) {
    if (manifest.dtype != DType::U8) throw FormatError("write_tensor: manifest dtype must be u8");
    if (manifest.element_count() != values.size()) {
        throw DimensionError("write_tensor: shape does not match value count for " + manifest.name);
    }
    write_manifest(dir, manifest);
    write_bytes(dir / kDataFile, values.data(), values.size());
}

TensorManifest read_manifest(const fs::path& dir) {
    const fs::path file = dir / kManifestFile;
    std::ifstream in(file);
    if (!in) throw FormatError("missing tensor manifest " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": invalid JSON: " + e.what());
    }
    TensorManifest m;
    try {
        m.name = j.value("name", std::string{});
        m.dtype = parse_dtype(j.at("dtype").get<std::string>(), file);
        m.shape = j.at("shape").get<std::vector<std::size_t>>();
        const auto order = j.value("byte_order", std::string{"little"});
        if (order != "little") throw FormatError(file.string() + ": unsupported byte_order '" + order + "'");
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
    if (m.shape.empty()) throw FormatError(file.string() + ": empty shape");
    return m;
}

std::vector<float> read_f32(const fs::path& dir, TensorManifest* manifest) {
    TensorManifest m = read_manifest(dir);
    require_dtype(m, DType::F32, dir);
    const auto bytes = read_payload(dir, m);
    std::vector<float> values(m.element_count());
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(values.data(), bytes.data(), bytes.size());
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::uint32_t raw;
            std::memcpy(&raw, bytes.data() + i * 4, 4);
            values[i] = std::bit_cast<float>(byteswap32(raw));
        }
    }
    if (manifest) *manifest = std::move(m);
    return values;
}

std::vector<std::uint8_t> read_u8(const fs::path& dir, TensorManifest* manifest) {
    TensorManifest m = read_manifest(dir);
    require_dtype(m, DType::U8, dir);
    const auto bytes = read_payload(dir, m);
    std::vector<std::uint8_t> values(bytes.begin(), bytes.end());
    if (manifest) *manifest = std::move(m);
    return values;
}

void save_feature_map(const fs::path& dir, const FeatureMap& map, const std::string& name) {
    TensorManifest m{name, DType::F32,
                     {static_cast<std::size_t>(map.height()), static_cast<std::size_t>(map.width()),
                      static_cast<std::size_t>(map.channels())}};
    write_tensor(dir, m, map.data());
}

FeatureMap load_feature_map(const fs::path& dir) {
    TensorManifest m;
    auto values = read_f32(dir, &m);
    if (m.shape.size() != 3) {
        throw FormatError((dir / kManifestFile).string() + ": feature map shape must be [H,W,C]");
    }
    return FeatureMap(static_cast<int>(m.shape[1]), static_cast<int>(m.shape[0]), static_cast<int>(m.shape[2]),
                      std::move(values));
}

void save_mask(const fs::path& dir, const LabelMask& mask, const std::string& name) {
    TensorManifest m{name, DType::U8,
                     {static_cast<std::size_t>(mask.height()), static_cast<std::size_t>(mask.width())}};
    write_tensor(dir, m, mask.values());
}

LabelMask load_mask(const fs::path& dir) {
    TensorManifest m;
    auto values = read_u8(dir, &m);
    if (m.shape.size() != 2) throw FormatError((dir / kManifestFile).string() + ": mask shape must be [H,W]");
    try {
        return LabelMask(static_cast<int>(m.shape[1]), static_cast<int>(m.shape[0]), std::move(values));
    } catch (const DimensionError& e) {
        throw FormatError((dir / kDataFile).string() + ": " + e.what());
    }
}

void save_probability_map(const fs::path& dir, const ProbabilityMap& map, const std::string& name) {
    TensorManifest m{name, DType::F32,
                     {static_cast<std::size_t>(map.height()), static_cast<std::size_t>(map.width()), 2}};
    std::vector<float> values(map.values().begin(), map.values().end());
    write_tensor(dir, m, values);
}

ProbabilityMap load_probability_map(const fs::path& dir) {
    TensorManifest m;
    auto values = read_f32(dir, &m);
    if (m.shape.size() != 3 || m.shape[2] != 2) {
        throw FormatError((dir / kManifestFile).string() + ": probability map shape must be [H,W,2]");
    }
    return ProbabilityMap(static_cast<int>(m.shape[1]), static_cast<int>(m.shape[0]),
                          std::vector<double>(values.begin(), values.end()));
}

void save_matrix(const fs::path& dir, const Matrix& rows, const std::string& name) {
    TensorManifest m{name, DType::F32, {rows.rows(), rows.cols()}};
    std::vector<float> values(rows.data().begin(), rows.data().end());
    write_tensor(dir, m, values);
}

Matrix load_matrix(const fs::path& dir) {
    TensorManifest m;
    auto values = read_f32(dir, &m);
    if (m.shape.size() != 2) throw FormatError((dir / kManifestFile).string() + ": matrix shape must be [N,C]");
    Matrix out(m.shape[0], m.shape[1]);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < out.cols(); ++c) row[c] = values[r * out.cols() + c];
    }
    return out;
}

} // namespace protoseg::io
