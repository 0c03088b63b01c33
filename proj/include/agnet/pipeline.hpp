#pragma once

// Glue between datasets, models and metrics.

#include "agnet/eval.hpp"
#include "agnet/synthetic.hpp"
#include "agnet/train.hpp"

#include <set>
#include <span>
#include <string>
#include <vector>

namespace agnet {

/// Training samples with segment-resolution labels. Attention features are
/// attached when the dataset has them.
std::vector<VideoSample> make_samples(const Dataset& dataset, std::span<const std::string> ids);

/// Segment-resolution probabilities for each listed video.
std::vector<Matrix> predict_videos(const ModelState& model, const Dataset& dataset,
                                   std::span<const std::string> ids);

/// Ground-truth segment labels used as predictions.
std::vector<Matrix> ground_truth_predictions(const Dataset& dataset,
                                             std::span<const std::string> ids);

struct Evaluation {
  APResult frame;
  std::vector<double> thresholds;
  std::vector<APResult> events;
  std::vector<long long> instance_counts;  // ground-truth events per class
};

/// Frame mAP on upsampled predictions and event mAP at each threshold.
Evaluation evaluate(const Dataset& dataset, std::span<const std::string> ids,
                    std::span<const Matrix> segment_probs, double tau,
                    std::span<const double> thresholds);

/// Frame mAP only.
double frame_map_of(const Dataset& dataset, std::span<const std::string> ids,
                    std::span<const Matrix> segment_probs);

std::set<int> subjects_of(const Manifest& manifest);
std::set<int> cameras_of(const Manifest& manifest);

/// First round(11/18 * n) subjects train, the rest test.
Split default_cross_subject(const Manifest& manifest);
/// Cameras {1,3,4,6,7} train and {2,5} test, restricted to cameras present.
Split default_cross_view(const Manifest& manifest);

}  // namespace agnet
