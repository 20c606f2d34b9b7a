#include "protoseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace protoseg {

namespace {

void require_positive_dims(int width, int height, const char* what) {
    if (width < 1 || height < 1) {
        throw DimensionError(std::string(what) + ": dimensions must be >= 1, got " +
                             std::to_string(width) + "x" + std::to_string(height));
    }
}

} // namespace

FeatureMap::FeatureMap(int width, int height, int channels)
    : width_(width), height_(height), channels_(channels) {
    require_positive_dims(width, height, "FeatureMap");
    if (channels < 1) throw DimensionError("FeatureMap: channels must be >= 1");
    data_.assign(pixel_count() * channels_, 0.0f);
}

FeatureMap::FeatureMap(int width, int height, int channels, std::vector<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    require_positive_dims(width, height, "FeatureMap");
    if (channels < 1) throw DimensionError("FeatureMap: channels must be >= 1");
    if (data_.size() != pixel_count() * channels_) {
        throw DimensionError("FeatureMap: expected " + std::to_string(pixel_count() * channels_) +
                             " values, got " + std::to_string(data_.size()));
    }
    for (float v : data_) {
        if (!std::isfinite(v)) throw NumericError("FeatureMap: non-finite feature value");
    }
}

LabelMask::LabelMask(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    require_positive_dims(width, height, "LabelMask");
    if (fill > kForeground) throw DimensionError("LabelMask: fill value must be 0 or 1");
    values_.assign(static_cast<std::size_t>(width) * height, fill);
}

LabelMask::LabelMask(int width, int height, std::vector<std::uint8_t> values)
    : width_(width), height_(height), values_(std::move(values)) {
    require_positive_dims(width, height, "LabelMask");
    if (values_.size() != static_cast<std::size_t>(width) * height) {
        throw DimensionError("LabelMask: expected " + std::to_string(width * height) + " values, got " +
                             std::to_string(values_.size()));
    }
    for (auto v : values_) {
        if (v > kForeground) throw DimensionError("LabelMask: values must be 0 or 1");
    }
}

void LabelMask::set(std::size_t index, std::uint8_t value) {
    if (value > kForeground) throw DimensionError("LabelMask: values must be 0 or 1");
    values_[index] = value;
}

std::size_t LabelMask::count(std::uint8_t cls) const {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), cls));
}

ProbabilityMap::ProbabilityMap(int width, int height, double fill) : width_(width), height_(height) {
    require_positive_dims(width, height, "ProbabilityMap");
    values_.assign(pixel_count() * kChannels, fill);
}

ProbabilityMap::ProbabilityMap(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
    require_positive_dims(width, height, "ProbabilityMap");
    if (values_.size() != pixel_count() * kChannels) {
        throw DimensionError("ProbabilityMap: expected " + std::to_string(pixel_count() * kChannels) +
                             " values, got " + std::to_string(values_.size()));
    }
}

void Episode::validate() const {
    if (supports.empty()) throw DimensionError("episode: at least one support image is required");
    const int c = query.channels();
    if (c < 1) throw DimensionError("episode: query feature map is empty");
    for (std::size_t k = 0; k < supports.size(); ++k) {
        const auto& s = supports[k];
        if (s.features.channels() != c) {
            throw DimensionError("episode: support " + std::to_string(k) + " has " +
                                 std::to_string(s.features.channels()) + " channels, query has " +
                                 std::to_string(c));
        }
        if (s.mask.width() < s.features.width() || s.mask.height() < s.features.height()) {
            throw DimensionError("episode: support " + std::to_string(k) +
                                 " mask is smaller than its feature map");
        }
    }
    for (std::size_t m = 0; m < unlabeled.size(); ++m) {
        if (unlabeled[m].channels() != c) {
            throw DimensionError("episode: unlabeled " + std::to_string(m) + " has " +
                                 std::to_string(unlabeled[m].channels()) + " channels, query has " +
                                 std::to_string(c));
        }
    }
    if (query_truth && (query_truth->width() < query.width() || query_truth->height() < query.height())) {
        throw DimensionError("episode: query truth is smaller than the query feature map");
    }
}

LabelMask downsample_mask(const LabelMask& mask, int target_width, int target_height) {
    if (target_width < 1 || target_height < 1) {
        throw DimensionError("downsample_mask: target dimensions must be >= 1");
    }
    if (mask.width() < target_width || mask.height() < target_height) {
        throw DimensionError("downsample_mask: target " + std::to_string(target_width) + "x" +
                             std::to_string(target_height) + " exceeds source " +
                             std::to_string(mask.width()) + "x" + std::to_string(mask.height()));
    }
    LabelMask out(target_width, target_height);
    for (int y = 0; y < target_height; ++y) {
        const int sy = static_cast<int>(static_cast<long long>(y) * mask.height() / target_height);
        for (int x = 0; x < target_width; ++x) {
            const int sx = static_cast<int>(static_cast<long long>(x) * mask.width() / target_width);
            out.set(x, y, mask.at(sx, sy));
        }
    }
    return out;
}

namespace {

struct Tap {
    int lo;
    int hi;
    double frac;
};

Tap bilinear_tap(int i, int src, int dst) {
    const double scale = static_cast<double>(src) / dst;
    double pos = (i + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, src - 1);
    return {lo, hi, pos - lo};
}

} // namespace

ProbabilityMap upsample_probmap(const ProbabilityMap& map, int target_width, int target_height) {
    if (target_width < map.width() || target_height < map.height()) {
        throw DimensionError("upsample_probmap: target " + std::to_string(target_width) + "x" +
                             std::to_string(target_height) + " is smaller than source " +
                             std::to_string(map.width()) + "x" + std::to_string(map.height()));
    }
    if (target_width == map.width() && target_height == map.height()) return map;

    ProbabilityMap out(target_width, target_height);
    std::vector<Tap> xs(target_width);
    for (int x = 0; x < target_width; ++x) xs[x] = bilinear_tap(x, map.width(), target_width);
    for (int y = 0; y < target_height; ++y) {
        const Tap ty = bilinear_tap(y, map.height(), target_height);
        for (int x = 0; x < target_width; ++x) {
            const Tap& tx = xs[x];
            for (int c = 0; c < ProbabilityMap::kChannels; ++c) {
                const double top = map.at(tx.lo, ty.lo, c) * (1.0 - tx.frac) + map.at(tx.hi, ty.lo, c) * tx.frac;
                const double bottom =
                    map.at(tx.lo, ty.hi, c) * (1.0 - tx.frac) + map.at(tx.hi, ty.hi, c) * tx.frac;
                out.at(x, y, c) = top * (1.0 - ty.frac) + bottom * ty.frac;
            }
        }
    }
    return out;
}

std::optional<std::vector<double>> masked_mean(const FeatureMap& features, const LabelMask& mask,
                                               std::uint8_t cls) {
    if (features.width() != mask.width() || features.height() != mask.height()) {
        throw DimensionError("masked_mean: mask " + std::to_string(mask.width()) + "x" +
                             std::to_string(mask.height()) + " does not match features " +
                             std::to_string(features.width()) + "x" + std::to_string(features.height()));
    }
    std::vector<double> sum(features.channels(), 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < features.pixel_count(); ++i) {
        if (mask[i] != cls) continue;
        const auto f = features.pixel(i);
        for (std::size_t c = 0; c < f.size(); ++c) sum[c] += f[c];
        ++n;
    }
    if (n == 0) return std::nullopt;
    for (auto& v : sum) v /= static_cast<double>(n);
    return sum;
}

LabelMask mask_at_feature_resolution(const LabelMask& mask, const FeatureMap& features) {
    if (mask.width() == features.width() && mask.height() == features.height()) return mask;
    return downsample_mask(mask, features.width(), features.height());
}

} // namespace protoseg
