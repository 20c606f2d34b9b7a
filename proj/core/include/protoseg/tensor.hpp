#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoseg/error.hpp"

namespace protoseg {

/// Mask values; also the channel order of probability maps.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kForeground = 1;

/// Dense W'xH'xC feature grid, row-major with channels last ([H][W][C]).
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int width, int height, int channels);
    /// Validates the length and that every value is finite.
    FeatureMap(int width, int height, int channels, std::vector<float> data);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

    std::span<const float> pixel(std::size_t index) const {
        return {data_.data() + index * channels_, static_cast<std::size_t>(channels_)};
    }
    std::span<float> pixel(std::size_t index) {
        return {data_.data() + index * channels_, static_cast<std::size_t>(channels_)};
    }
    std::span<const float> pixel(int x, int y) const {
        return pixel(static_cast<std::size_t>(y) * width_ + x);
    }
    std::span<float> pixel(int x, int y) { return pixel(static_cast<std::size_t>(y) * width_ + x); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    bool operator==(const FeatureMap&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

/// Hard binary label per pixel, values in {0 = BG, 1 = FG}.
class LabelMask {
public:
    LabelMask() = default;
    LabelMask(int width, int height, std::uint8_t fill = kBackground);
    /// Throws if any value is outside {0, 1}.
    LabelMask(int width, int height, std::vector<std::uint8_t> values);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return values_.size(); }

    std::uint8_t operator[](std::size_t index) const { return values_[index]; }
    std::uint8_t at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(std::size_t index, std::uint8_t value);
    void set(int x, int y, std::uint8_t value) { set(static_cast<std::size_t>(y) * width_ + x, value); }

    std::size_t count(std::uint8_t cls) const;
    std::span<const std::uint8_t> values() const { return values_; }

    bool operator==(const LabelMask&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> values_;
};

/// Two-channel (BG, FG) per-pixel map. Holds softmax outputs (mu), uncertainty
/// (sigma) and refined scores (mu'). Values are in [0, 1]; only softmax maps
/// are expected to sum to one per pixel.
class ProbabilityMap {
public:
    static constexpr int kChannels = 2;

    ProbabilityMap() = default;
    ProbabilityMap(int width, int height, double fill = 0.0);
    ProbabilityMap(int width, int height, std::vector<double> values);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

    double bg(std::size_t index) const { return values_[index * 2]; }
    double fg(std::size_t index) const { return values_[index * 2 + 1]; }
    double& bg(std::size_t index) { return values_[index * 2]; }
    double& fg(std::size_t index) { return values_[index * 2 + 1]; }
    double at(int x, int y, int channel) const {
        return values_[(static_cast<std::size_t>(y) * width_ + x) * 2 + channel];
    }
    double& at(int x, int y, int channel) {
        return values_[(static_cast<std::size_t>(y) * width_ + x) * 2 + channel];
    }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    bool operator==(const ProbabilityMap&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> values_;
};

/// Row-major list of equally sized real vectors (points for clustering,
/// prototype dumps).
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0; }

    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    template <typename T>
    void append(std::span<const T> values);

    std::span<const double> data() const { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

template <typename T>
void Matrix::append(std::span<const T> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw DimensionError("Matrix::append: row width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

/// A support sample: features plus their binary mask. The mask may be at a
/// higher resolution than the features; consumers downsample it.
struct LabeledImage {
    FeatureMap features;
    LabelMask mask;
};

/// One 1-way few-shot task.
struct Episode {
    std::vector<LabeledImage> supports;
    std::vector<FeatureMap> unlabeled;
    FeatureMap query;
    std::optional<LabelMask> query_truth;
    std::string class_id;

    int channels() const { return query.channels(); }
    /// Throws DimensionError when the episode breaks a structural invariant.
    void validate() const;
};

/// Nearest-neighbour resize of a label mask: target row i samples source row
/// floor(i * H / H'), likewise for columns.
LabelMask downsample_mask(const LabelMask& mask, int target_width, int target_height);

/// Bilinear resize per channel using half-pixel centres, clamped at borders.
ProbabilityMap upsample_probmap(const ProbabilityMap& map, int target_width, int target_height);

/// Mean feature over pixels whose mask equals `cls`; nullopt when none match.
std::optional<std::vector<double>> masked_mean(const FeatureMap& features, const LabelMask& mask,
                                               std::uint8_t cls);

/// Returns `mask` at the feature resolution of `features`, resizing if needed.
LabelMask mask_at_feature_resolution(const LabelMask& mask, const FeatureMap& features);

} // namespace protoseg
