#include "protoseg/metrics.hpp"

#include "protoseg/error.hpp"

namespace protoseg {

void MetricAccumulator::add(const std::string& class_id, const LabelMask& prediction, const LabelMask& truth) {
    if (prediction.width() != truth.width() || prediction.height() != truth.height()) {
        throw DimensionError("MetricAccumulator: prediction and truth dimensions differ");
    }
    IoUCounts fg, bg;
    for (std::size_t i = 0; i < truth.pixel_count(); ++i) {
        const bool p = prediction[i] == kForeground;
        const bool t = truth[i] == kForeground;
        fg.intersection += p && t;
        fg.union_ += p || t;
        bg.intersection += !p && !t;
        bg.union_ += !p || !t;
    }
    per_class_[class_id] += fg;
    fg_ += fg;
    bg_ += bg;
    ++episodes_;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
    for (const auto& [cls, counts] : other.per_class_) per_class_[cls] += counts;
    fg_ += other.fg_;
    bg_ += other.bg_;
    episodes_ += other.episodes_;
}

double mean_iou(const MetricAccumulator& acc) {
    if (acc.episodes() == 0) throw ConfigError("mean_iou: no episodes accumulated");
    double sum = 0.0;
    for (const auto& [cls, counts] : acc.per_class()) sum += counts.iou();
    return sum / static_cast<double>(acc.per_class().size());
}

double binary_iou(const MetricAccumulator& acc) {
    if (acc.episodes() == 0) throw ConfigError("binary_iou: no episodes accumulated");
    return 0.5 * (acc.foreground().iou() + acc.background().iou());
}

} // namespace protoseg
