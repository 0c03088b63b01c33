#pragma once

#include "agnet/tensorops.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace agnet {

using Matrix = TimeMatrix<double>;

struct ScoredItem {
  double score = 0.0;
  bool positive = false;
};

/// Uninterpolated all-point average precision. Items are ranked by score,
/// descending, ties kept in input order. `total_positives` defaults to the
/// number of positive items; event AP passes the ground-truth count instead.
/// Returns nullopt when there is nothing to recall.
std::optional<double> average_precision(std::span<const ScoredItem> items,
                                        std::optional<std::size_t> total_positives = {});

/// Frame AP of one class; nullopt (class excluded) when no item is positive.
std::optional<double> frame_ap(std::span<const ScoredItem> items);

struct APResult {
  std::vector<std::optional<double>> per_class;  // nullopt: no positives, excluded
  std::vector<int> excluded;
  double map = 0.0;

  int included_count() const;
};

/// Pools every frame of every video into one ranked list per class.
APResult frame_map(std::span<const Matrix> probs, std::span<const Matrix> labels);

struct Interval {
  Index start = 0;  // inclusive
  Index end = 0;    // exclusive
};

/// |a ∩ b| / |a ∪ b| on half-open frame intervals.
double temporal_iou(Interval a, Interval b);

struct EventDetection {
  int class_id = 0;
  Index start = 0;
  Index end = 0;
  double score = 0.0;
};

struct GroundTruthEvent {
  int class_id = 0;
  Index start = 0;
  Index end = 0;
};

/// Maximal runs with prob >= tau become events scored by their mean prob.
std::vector<EventDetection> extract_events(const Matrix& probs, double tau);

/// Per class: detections across all videos in descending score order each
/// claim the unmatched same-video ground truth of highest IoU; IoU >= theta is
/// a true positive. AP uses the number of ground-truth events as positives.
APResult event_map(const std::vector<std::vector<EventDetection>>& detections,
                   const std::vector<std::vector<GroundTruthEvent>>& ground_truth, int n_classes,
                   double theta);

struct ReportRow {
  int class_id = 0;
  std::string name;
  long long instances = 0;
  std::optional<double> ap;
};

/// Rows sorted by instance count descending, ties by class id.
std::vector<ReportRow> per_class_report(const APResult& result,
                                        std::span<const std::string> class_names,
                                        std::span<const long long> instance_counts);

/// Tab-separated table, one row per class (id, name, instances, frame AP,
/// event AP per threshold), ordered as per_class_report, then a "mAP" row.
std::string format_results(std::span<const std::string> class_names,
                           std::span<const long long> instance_counts, const APResult& frame,
                           std::span<const double> thresholds, std::span<const APResult> events);

void write_results(const std::filesystem::path& path, std::span<const std::string> class_names,
                   std::span<const long long> instance_counts, const APResult& frame,
                   std::span<const double> thresholds, std::span<const APResult> events);

}  // namespace agnet
