#include "agnet/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace agnet {

std::vector<VideoSample> make_samples(const Dataset& ds, std::span<const std::string> ids) {
  std::vector<VideoSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const std::size_t i = ds.index_of(id);
    VideoSample s;
    s.id = id;
    s.main = ds.main[i].features;
    if (ds.has_attention()) s.attention = ds.attention[i].features;
    s.labels = labels_to_matrix(ds.annotations[i], Resolution::segments, ds.classes.size(),
                                ds.segment_len);
    if (s.labels.rows() != s.main.rows())
      throw std::invalid_argument("video " + id + ": label length " +
                                  std::to_string(s.labels.rows()) + " != feature length " +
                                  std::to_string(s.main.rows()));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Matrix> predict_videos(const ModelState& model, const Dataset& ds,
                                   std::span<const std::string> ids) {
  std::vector<Matrix> out;
  for (const auto& id : ids) {
    const std::size_t i = ds.index_of(id);
    const Matrix* att = nullptr;
    if (model.config.use_attention()) {
      if (!ds.has_attention())
        throw std::invalid_argument("model needs attention-stream features; dataset has none");
      att = &ds.attention[i].features;
    }
    out.push_back(predict(model, ds.main[i].features, att));
  }
  return out;
}

std::vector<Matrix> ground_truth_predictions(const Dataset& ds, std::span<const std::string> ids) {
  std::vector<Matrix> out;
  for (const auto& id : ids) {
    const std::size_t i = ds.index_of(id);
    out.push_back(labels_to_matrix(ds.annotations[i], Resolution::segments, ds.classes.size(),
                                   ds.segment_len));
  }
  return out;
}

namespace {

void frame_level(const Dataset& ds, std::span<const std::string> ids,
                 std::span<const Matrix> segment_probs, std::vector<Matrix>& probs,
                 std::vector<Matrix>& labels) {
  if (ids.size() != segment_probs.size())
    throw std::invalid_argument("one prediction matrix per video required");
  for (std::size_t v = 0; v < ids.size(); ++v) {
    const auto& ann = ds.annotations[ds.index_of(ids[v])];
    if (segment_probs[v].cols() != ds.classes.size())
      throw std::invalid_argument("predictions have " + std::to_string(segment_probs[v].cols()) +
                                  " classes, dataset has " + std::to_string(ds.classes.size()));
    probs.push_back(upsample_to_frames(segment_probs[v], ds.segment_len, ann.total_frames));
    labels.push_back(labels_to_matrix(ann, Resolution::frames, ds.classes.size()));
  }
}

}  // namespace

double frame_map_of(const Dataset& ds, std::span<const std::string> ids,
                    std::span<const Matrix> segment_probs) {
  std::vector<Matrix> probs, labels;
  frame_level(ds, ids, segment_probs, probs, labels);
  return frame_map(probs, labels).map;
}

Evaluation evaluate(const Dataset& ds, std::span<const std::string> ids,
                    std::span<const Matrix> segment_probs, double tau,
                    std::span<const double> thresholds) {
  std::vector<Matrix> probs, labels;
  frame_level(ds, ids, segment_probs, probs, labels);
  Evaluation ev;
  ev.frame = frame_map(probs, labels);
  ev.thresholds.assign(thresholds.begin(), thresholds.end());

  std::vector<std::vector<EventDetection>> detections;
  std::vector<std::vector<GroundTruthEvent>> truth;
  ev.instance_counts.assign(static_cast<std::size_t>(ds.classes.size()), 0);
  for (std::size_t v = 0; v < ids.size(); ++v) {
    detections.push_back(extract_events(probs[v], tau));
    std::vector<GroundTruthEvent> gt;
    for (const auto& iv : ds.annotations[ds.index_of(ids[v])].intervals) {
      gt.push_back({iv.class_id, iv.start, iv.end});
      ++ev.instance_counts[static_cast<std::size_t>(iv.class_id)];
    }
    truth.push_back(std::move(gt));
  }
  for (double th : thresholds)
    ev.events.push_back(event_map(detections, truth, ds.classes.size(), th));
  return ev;
}

std::set<int> subjects_of(const Manifest& m) {
  std::set<int> s;
  for (const auto& e : m) s.insert(e.subject);
  return s;
}

std::set<int> cameras_of(const Manifest& m) {
  std::set<int> s;
  for (const auto& e : m) s.insert(e.camera);
  return s;
}

Split default_cross_subject(const Manifest& m) {
  const auto subjects = subjects_of(m);
  if (subjects.size() < 2) throw std::invalid_argument("cross-subject split needs >= 2 subjects");
  const auto n = static_cast<long>(subjects.size());
  const long n_train = std::clamp(std::lround(static_cast<double>(n) * 11.0 / 18.0), 1L, n - 1);
  std::set<int> train, test;
  long i = 0;
  for (int s : subjects) (i++ < n_train ? train : test).insert(s);
  return split_cross_subject(m, train, test);
}

Split default_cross_view(const Manifest& m) {
  const auto cameras = cameras_of(m);
  std::set<int> train, test;
  for (int c : cameras) {
    if (c == 2 || c == 5)
      test.insert(c);
    else
      train.insert(c);
  }
  return split_cross_view(m, train, test);
}

}  // namespace agnet
