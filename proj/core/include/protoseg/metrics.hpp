#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "protoseg/tensor.hpp"

namespace protoseg {

struct IoUCounts {
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;

    /// Empty union counts as perfect agreement.
    double iou() const { return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_); }
    IoUCounts& operator+=(const IoUCounts& o) {
        intersection += o.intersection;
        union_ += o.union_;
        return *this;
    }
    bool operator==(const IoUCounts&) const = default;
};

/// Running intersection/union counts over evaluated episodes. Counts are
/// plain sums, so accumulation order does not matter.
class MetricAccumulator {
public:
    void add(const std::string& class_id, const LabelMask& prediction, const LabelMask& truth);
    void merge(const MetricAccumulator& other);

    std::size_t episodes() const { return episodes_; }
    const std::map<std::string, IoUCounts>& per_class() const { return per_class_; }
    const IoUCounts& foreground() const { return fg_; }
    const IoUCounts& background() const { return bg_; }

    bool operator==(const MetricAccumulator&) const = default;

private:
    std::map<std::string, IoUCounts> per_class_;
    IoUCounts fg_;
    IoUCounts bg_;
    std::size_t episodes_ = 0;
};

/// Foreground IoU per class, averaged over classes.
double mean_iou(const MetricAccumulator& acc);

/// Average of the merged-foreground IoU and the background IoU.
double binary_iou(const MetricAccumulator& acc);

} // namespace protoseg
