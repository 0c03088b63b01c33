#include "agnet/eval.hpp"

#include "agnet/io.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace agnet {

std::optional<double> average_precision(std::span<const ScoredItem> items,
                                        std::optional<std::size_t> total_positives) {
  std::size_t positives = 0;
  for (const auto& it : items) positives += it.positive ? 1 : 0;
  const std::size_t denom = total_positives.value_or(positives);
  if (positives > denom) throw std::invalid_argument("more true positives than ground truths");
  if (denom == 0) return std::nullopt;

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].score > items[b].score; });

  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!items[order[rank]].positive) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return ap / static_cast<double>(denom);
}

std::optional<double> frame_ap(std::span<const ScoredItem> items) {
  return average_precision(items);
}

int APResult::included_count() const {
  return static_cast<int>(per_class.size() - excluded.size());
}

namespace {

void finish(APResult& r) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (r.per_class[c]) {
      sum += *r.per_class[c];
      ++n;
    } else {
      r.excluded.push_back(static_cast<int>(c));
    }
  }
  if (n == 0) throw std::invalid_argument("no class has a positive instance; mAP undefined");
  r.map = sum / n;
}

}  // namespace

APResult frame_map(std::span<const Matrix> probs, std::span<const Matrix> labels) {
  if (probs.empty()) throw std::invalid_argument("frame_map: empty test set");
  if (probs.size() != labels.size())
    throw std::invalid_argument("frame_map: prediction and label counts differ");
  const Index classes = probs[0].cols();
  std::size_t frames = 0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    if (probs[v].rows() != labels[v].rows() || probs[v].cols() != labels[v].cols() ||
        probs[v].cols() != classes)
      throw ShapeError("frame_map: video " + std::to_string(v) + " predictions " +
                       detail::dims(probs[v].rows(), probs[v].cols()) + " vs labels " +
                       detail::dims(labels[v].rows(), labels[v].cols()));
    frames += static_cast<std::size_t>(probs[v].rows());
  }
  APResult r;
  std::vector<ScoredItem> items(frames);
  for (Index c = 0; c < classes; ++c) {
    std::size_t k = 0;
    for (std::size_t v = 0; v < probs.size(); ++v)
      for (Index t = 0; t < probs[v].rows(); ++t)
        items[k++] = {probs[v](t, c), labels[v](t, c) != 0.0};
    r.per_class.push_back(frame_ap(items));
  }
  finish(r);
  return r;
}

double temporal_iou(Interval a, Interval b) {
  if (a.start >= a.end || b.start >= b.end)
    throw std::invalid_argument("temporal_iou: intervals must satisfy start < end");
  const Index inter = std::max<Index>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const Index uni = (a.end - a.start) + (b.end - b.start) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<EventDetection> extract_events(const Matrix& probs, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must be in (0, 1)");
  std::vector<EventDetection> events;
  for (Index c = 0; c < probs.cols(); ++c) {
    Index t = 0;
    while (t < probs.rows()) {
      if (probs(t, c) < tau) {
        ++t;
        continue;
      }
      const Index start = t;
      double sum = 0.0;
      while (t < probs.rows() && probs(t, c) >= tau) sum += probs(t++, c);
      events.push_back({static_cast<int>(c), start, t, sum / static_cast<double>(t - start)});
    }
  }
  return events;
}

APResult event_map(const std::vector<std::vector<EventDetection>>& detections,
                   const std::vector<std::vector<GroundTruthEvent>>& ground_truth, int n_classes,
                   double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("IoU threshold must be in (0, 1]");
  if (detections.size() != ground_truth.size())
    throw std::invalid_argument("event_map: detection and ground-truth video counts differ");
  if (detections.empty()) throw std::invalid_argument("event_map: empty test set");

  struct Ref {
    std::size_t video;
    const EventDetection* det;
  };
  APResult r;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<Ref> dets;
    std::vector<std::vector<const GroundTruthEvent*>> gts(ground_truth.size());
    std::size_t n_gt = 0;
    for (std::size_t v = 0; v < detections.size(); ++v) {
      for (const auto& d : detections[v])
        if (d.class_id == c) dets.push_back({v, &d});
      for (const auto& g : ground_truth[v])
        if (g.class_id == c) {
          gts[v].push_back(&g);
          ++n_gt;
        }
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Ref& a, const Ref& b) { return a.det->score > b.det->score; });
    std::vector<std::vector<bool>> matched(gts.size());
    for (std::size_t v = 0; v < gts.size(); ++v) matched[v].assign(gts[v].size(), false);

    std::vector<ScoredItem> items;
    items.reserve(dets.size());
    for (const Ref& ref : dets) {
      const auto& cand = gts[ref.video];
      double best = -1.0;
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        if (matched[ref.video][i]) continue;
        const double iou = temporal_iou({ref.det->start, ref.det->end}, {cand[i]->start, cand[i]->end});
        if (iou > best) {
          best = iou;
          best_i = i;
        }
      }
      const bool tp = best >= theta;
      if (tp) matched[ref.video][best_i] = true;
      items.push_back({ref.det->score, tp});
    }
    r.per_class.push_back(average_precision(items, n_gt));
  }
  finish(r);
  return r;
}

std::vector<ReportRow> per_class_report(const APResult& result,
                                        std::span<const std::string> class_names,
                                        std::span<const long long> instance_counts) {
  const std::size_t n = result.per_class.size();
  if (class_names.size() != n || instance_counts.size() != n)
    throw std::invalid_argument("per_class_report: metadata does not match class count");
  std::vector<ReportRow> rows;
  for (std::size_t c = 0; c < n; ++c)
    rows.push_back({static_cast<int>(c), class_names[c], instance_counts[c], result.per_class[c]});
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.instances > b.instances;
  });
  return rows;
}

namespace {
std::string ap_cell(const std::optional<double>& ap) {
  return ap ? io::format_double(*ap) : std::string("-");
}
}  // namespace

std::string format_results(std::span<const std::string> class_names,
                           std::span<const long long> instance_counts, const APResult& frame,
                           std::span<const double> thresholds, std::span<const APResult> events) {
  if (thresholds.size() != events.size())
    throw std::invalid_argument("format_results: one event result per threshold required");
  std::ostringstream out;
  out << "class_id\tname\tinstances\tframe_ap";
  for (double th : thresholds) out << "\tevent_ap@" << io::format_double(th);
  out << '\n';
  for (const auto& row : per_class_report(frame, class_names, instance_counts)) {
    out << row.class_id << '\t' << row.name << '\t' << row.instances << '\t' << ap_cell(row.ap);
    for (const auto& e : events) out << '\t' << ap_cell(e.per_class.at(row.class_id));
    out << '\n';
  }
  long long total = 0;
  for (auto n : instance_counts) total += n;
  out << "mAP\tall\t" << total << '\t' << io::format_double(frame.map);
  for (const auto& e : events) out << '\t' << io::format_double(e.map);
  out << '\n';
  return out.str();
}

void write_results(const std::filesystem::path& path, std::span<const std::string> class_names,
                   std::span<const long long> instance_counts, const APResult& frame,
                   std::span<const double> thresholds, std::span<const APResult> events) {
  io::write_file_atomic(path,
                        format_results(class_names, instance_counts, frame, thresholds, events));
}

}  // namespace agnet
