#pragma once

// Synthetic untrimmed multi-label videos with the statistical structure of a
// daily-living corpus: Zipf class frequencies, per-class log-normal durations,
// composite activities that contain elementary ones, and at most four
// concurrent labels per frame.

#include "agnet/data.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace agnet {

struct SyntheticConfig {
  /// Total classes; the last `n_composite` ids are composite activities.
  int n_classes = 10;
  int n_composite = 0;
  /// composite_map[i] lists the elementary constituents of composite class
  /// n_classes - n_composite + i. Generated from the seed when empty.
  std::vector<std::vector<int>> composite_map;
  int constituents_per_composite = 3;

  double zipf_exponent = 1.0;

  /// Elementary median durations (segments) are log-spaced over this range
  /// and assigned to classes in shuffled order.
  double min_median_duration = 3.0;
  double max_median_duration = 30.0;
  double composite_median_duration = 60.0;
  double duration_log_sigma = 0.5;

  /// Scenes (recordings); each is emitted once per view.
  int n_videos = 20;
  int views_per_scene = 1;
  int frames_per_video = 3200;
  int segment_len = kDefaultSegmentLength;
  /// Mean of the Poisson-distributed number of instances per video.
  double instances_per_video = 8.0;

  int channels = 32;
  int attention_channels = 16;
  /// Per-element signal-to-noise power ratios; infinity means noiseless.
  double snr = 4.0;
  double attention_snr = 4.0;
  double subject_offset = 0.5;

  int n_subjects = 4;
  int n_cameras = 2;
  std::uint64_t seed = 0;

  void validate() const;
  bool is_composite(int class_id) const { return class_id >= n_classes - n_composite; }
  /// Zipf probability of drawing class `class_id` (rank = id + 1).
  double class_probability(int class_id) const;

  /// "key=value" lines, round-trip exact.
  std::string to_text() const;
  static SyntheticConfig from_text(std::string_view text);

  /// 51 classes (5 composite over 16 elementary), ~76 instances per video,
  /// 20-minute videos.
  static SyntheticConfig tsu_scale();
};

struct Dataset {
  ClassList classes;
  Manifest manifest;
  std::vector<AnnotationSet> annotations;  // aligned with manifest
  std::vector<FeatureSequence> main;       // aligned with manifest
  std::vector<FeatureSequence> attention;  // aligned with manifest; empty if absent
  int segment_len = kDefaultSegmentLength;

  std::size_t index_of(const std::string& video_id) const;
  bool has_attention() const { return !attention.empty(); }
};

/// Deterministic in config (including seed). Throws std::invalid_argument
/// when the expected activity mass cannot fit in four concurrent tracks.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Directory layout: classes.txt, manifest.tsv, annotations.tsv,
/// features/<video>.tsf and, when present, attention/<video>.tsf.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace agnet
