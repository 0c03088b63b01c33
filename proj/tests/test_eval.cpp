#include "oracles.hpp"

#include "agnet/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace agnet;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST(AveragePrecision, PerfectRanking) {
  const std::vector<ScoredItem> items{{0.9, true}, {0.8, true}, {0.3, false}, {0.1, false}};
  EXPECT_EQ(frame_ap(items), 1.0);
}

TEST(AveragePrecision, HandExample) {
  const std::vector<ScoredItem> items{{0.9, true}, {0.8, false}, {0.2, true}, {0.1, false}};
  EXPECT_NEAR(*frame_ap(items), 1.0 * 0.5 + (2.0 / 3.0) * 0.5, 1e-15);
  EXPECT_NEAR(*frame_ap(items), 0.833333, 1e-6);
}

TEST(AveragePrecision, SinglePositiveAtRankR) {
  // Every permutation of n <= 5 scores; the lone positive's rank r gives 1/r.
  for (int n = 1; n <= 5; ++n) {
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = 0.1 * (i + 1);
    std::sort(scores.begin(), scores.end());
    do {
      std::vector<ScoredItem> items;
      for (int i = 0; i < n; ++i) items.push_back({scores[static_cast<std::size_t>(i)], i == 0});
      int rank = 1;
      for (int i = 1; i < n; ++i) rank += scores[static_cast<std::size_t>(i)] > scores[0];
      EXPECT_NEAR(*frame_ap(items), 1.0 / rank, 1e-15);
    } while (std::next_permutation(scores.begin(), scores.end()));
  }
}

TEST(AveragePrecision, TiesKeepInputOrder) {
  const std::vector<ScoredItem> a{{0.5, false}, {0.5, true}};
  const std::vector<ScoredItem> b{{0.5, true}, {0.5, false}};
  EXPECT_DOUBLE_EQ(*frame_ap(a), 0.5);
  EXPECT_DOUBLE_EQ(*frame_ap(b), 1.0);
}

TEST(AveragePrecision, NoPositivesIsUndefined) {
  EXPECT_FALSE(frame_ap(std::vector<ScoredItem>{{0.3, false}}).has_value());
  EXPECT_FALSE(frame_ap(std::vector<ScoredItem>{}).has_value());
}

TEST(AveragePrecision, MissedPositivesCountAgainstRecall) {
  const std::vector<ScoredItem> items{{0.9, true}};
  EXPECT_DOUBLE_EQ(*average_precision(items, 4), 0.25);
  EXPECT_THROW(average_precision(items, 0), std::invalid_argument);
}

TEST(AveragePrecision, RankOnlyDependence) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredItem> items, moved;
    for (int i = 0; i < 30; ++i) {
      const double s = u(rng);
      const bool p = coin(rng) || i == 0;
      items.push_back({s, p});
      moved.push_back({std::exp(2 * s) + 5, p});
    }
    EXPECT_DOUBLE_EQ(*frame_ap(items), *frame_ap(moved));
    EXPECT_NEAR(*frame_ap(items), *oracle::ap_by_rank(items), 1e-12);
  }
}

TEST(FrameMap, PerfectAndInverted) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Matrix> labels(2, Matrix(8, 3)), inverted;
    for (auto& m : labels)
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = coin(rng);
    labels[0](0, 0) = labels[0](0, 1) = labels[0](0, 2) = 1;  // every class has a positive
    for (const auto& m : labels) inverted.push_back(Matrix::Ones(8, 3) - m);
    EXPECT_DOUBLE_EQ(frame_map(labels, labels).map, 1.0);

    const APResult r = frame_map(inverted, labels);
    double sum = 0;
    for (Index c = 0; c < 3; ++c) {
      std::vector<ScoredItem> items;
      for (const auto& m : labels)
        for (Index t = 0; t < 8; ++t) items.push_back({1.0 - m(t, c), m(t, c) == 1.0});
      sum += *oracle::ap_by_rank(items);
    }
    EXPECT_NEAR(r.map, sum / 3, 1e-12);
  }
}

TEST(FrameMap, HandExampleAndExclusion) {
  const std::vector<Matrix> probs{col({0.9, 0.8, 0.2, 0.1})}, labels{col({1, 0, 1, 0})};
  EXPECT_NEAR(frame_map(probs, labels).map, 0.833333, 1e-6);

  Matrix p(3, 2), y(3, 2);
  p << 0.9, 0.1, 0.2, 0.7, 0.4, 0.3;
  y << 1, 0, 0, 0, 0, 0;
  const auto r = frame_map(std::vector<Matrix>{p}, std::vector<Matrix>{y});
  EXPECT_EQ(r.excluded, std::vector<int>{1});
  EXPECT_FALSE(r.per_class[1].has_value());
  EXPECT_DOUBLE_EQ(r.map, 1.0);
  EXPECT_EQ(r.included_count(), 1);

  EXPECT_THROW(frame_map(std::vector<Matrix>{p}, std::vector<Matrix>{Matrix::Zero(3, 2)}),
               std::invalid_argument);
  EXPECT_THROW(frame_map(std::vector<Matrix>{}, std::vector<Matrix>{}), std::invalid_argument);
  EXPECT_THROW(frame_map(std::vector<Matrix>{p}, std::vector<Matrix>{Matrix::Zero(2, 2)}),
               std::invalid_argument);
}

TEST(Events, ExtractionExample) {
  const auto ev = extract_events(col({0.1, 0.7, 0.8, 0.6, 0.2, 0.9}), 0.5);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].start, 1);
  EXPECT_EQ(ev[0].end, 4);
  EXPECT_NEAR(ev[0].score, 0.7, 1e-15);
  EXPECT_EQ(ev[1].start, 5);
  EXPECT_EQ(ev[1].end, 6);
  EXPECT_DOUBLE_EQ(ev[1].score, 0.9);
}

TEST(Events, ExtractionEdges) {
  EXPECT_TRUE(extract_events(col({0.1, 0.2, 0.49}), 0.5).empty());
  const auto all = extract_events(col({0.6, 0.9, 0.5}), 0.5);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].start, 0);
  EXPECT_EQ(all[0].end, 3);
  EXPECT_THROW(extract_events(col({0.5}), 0.0), std::invalid_argument);
  EXPECT_THROW(extract_events(col({0.5}), 1.0), std::invalid_argument);
}

TEST(Iou, Values) {
  EXPECT_EQ(temporal_iou({3, 9}, {3, 9}), 1.0);
  EXPECT_EQ(temporal_iou({0, 5}, {5, 9}), 0.0);
  EXPECT_EQ(temporal_iou({0, 2}, {7, 9}), 0.0);
  EXPECT_DOUBLE_EQ(temporal_iou({0, 10}, {5, 15}), 1.0 / 3.0);
}

TEST(EventMap, Examples) {
  using Dets = std::vector<std::vector<EventDetection>>;
  using Gts = std::vector<std::vector<GroundTruthEvent>>;
  const Gts gt{{{0, 0, 10}}};
  const Dets one{{{0, 5, 15, 0.9}}};
  EXPECT_DOUBLE_EQ(event_map(one, gt, 1, 0.3).map, 1.0);
  EXPECT_DOUBLE_EQ(event_map(one, gt, 1, 0.5).map, 0.0);

  // IoU([0,10),[0,6)) = 0.6 at 0.9; IoU([0,10),[0,9)) = 0.9 at 0.8.
  const Dets two{{{0, 0, 6, 0.9}, {0, 0, 9, 0.8}}};
  EXPECT_DOUBLE_EQ(event_map(two, gt, 1, 0.5).map, 1.0);

  const Gts many{{{0, 0, 4}, {1, 6, 20}}, {{0, 3, 8}}};
  Dets exact(2);
  for (std::size_t v = 0; v < many.size(); ++v)
    for (const auto& g : many[v]) exact[v].push_back({g.class_id, g.start, g.end, 1.0});
  for (double th : {0.3, 0.5, 0.7, 1.0}) EXPECT_DOUBLE_EQ(event_map(exact, many, 2, th).map, 1.0);

  EXPECT_THROW(event_map(one, gt, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(event_map(one, Gts{}, 1, 0.5), std::invalid_argument);
}

TEST(EventMap, DetectionsOnlyMatchTheirOwnVideo) {
  const std::vector<std::vector<GroundTruthEvent>> gt{{{0, 0, 10}}, {}};
  const std::vector<std::vector<EventDetection>> dets{{}, {{0, 0, 10, 0.9}}};
  EXPECT_DOUBLE_EQ(event_map(dets, gt, 1, 0.5).map, 0.0);
}

TEST(EventMap, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> nd(0, 6), ng(1, 4), pos(0, 12), len(1, 6), vid(0, 1);
  std::uniform_real_distribution<double> score(0, 1);
  for (int trial = 0; trial < 300; ++trial) {
    oracle::EventCase c;
    std::vector<std::vector<EventDetection>> dets(2);
    std::vector<std::vector<GroundTruthEvent>> gts(2);
    const int n_gt = ng(rng), n_det = nd(rng);
    for (int i = 0; i < n_gt; ++i) {
      const Index s = pos(rng);
      const std::size_t v = static_cast<std::size_t>(vid(rng));
      c.gts.push_back({0, s, s + len(rng)});
      c.gt_video.push_back(v);
      gts[v].push_back(c.gts.back());
    }
    for (int i = 0; i < n_det; ++i) {
      const Index s = pos(rng);
      const std::size_t v = static_cast<std::size_t>(vid(rng));
      // Coarse scores so ties occur.
      c.dets.push_back({0, s, s + len(rng), std::round(score(rng) * 4) / 4});
      c.det_video.push_back(v);
      dets[v].push_back(c.dets.back());
    }
    // The oracle's input order is video-major, matching the library's scan.
    oracle::EventCase ordered;
    for (std::size_t v = 0; v < 2; ++v)
      for (const auto& d : dets[v]) {
        ordered.dets.push_back(d);
        ordered.det_video.push_back(v);
      }
    // Ground truth in per-video order, as the library sees it.
    for (std::size_t v = 0; v < 2; ++v)
      for (const auto& g : gts[v]) {
        ordered.gts.push_back(g);
        ordered.gt_video.push_back(v);
      }
    for (double th : {0.3, 0.5, 0.7})
      EXPECT_NEAR(event_map(dets, gts, 1, th).map, *oracle::event_ap_exhaustive(ordered, th), 1e-9)
          << "trial " << trial << " theta " << th;
  }
}

TEST(Report, OrderingAndFormat) {
  APResult r;
  r.per_class = {0.5, 0.25, std::nullopt};
  r.excluded = {2};
  r.map = 0.375;
  const std::vector<std::string> names{"a", "b", "c"};
  const std::vector<long long> counts{5, 9, 2};
  const auto rows = per_class_report(r, names, counts);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].class_id, 1);
  EXPECT_EQ(rows[1].class_id, 0);
  EXPECT_EQ(rows[2].class_id, 2);

  const std::vector<long long> tied{4, 4, 4};
  const auto t = per_class_report(r, names, tied);
  EXPECT_EQ(t[0].class_id, 0);
  EXPECT_EQ(t[2].class_id, 2);

  APResult single;
  single.per_class = {0.7};
  single.map = 0.7;
  const std::vector<std::string> one{"x"};
  const std::vector<long long> n1{3};
  const std::vector<double> th{0.5};
  const std::vector<APResult> ev{single};
  const std::string text = format_results(one, n1, single, th, ev);
  EXPECT_EQ(text,
            "class_id\tname\tinstances\tframe_ap\tevent_ap@0.5\n"
            "0\tx\t3\t0.7\t0.7\n"
            "mAP\tall\t3\t0.7\t0.7\n");
}
