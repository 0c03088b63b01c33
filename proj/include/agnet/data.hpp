#pragma once

#include "agnet/io.hpp"
#include "agnet/tensorops.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace agnet {

using Matrix = TimeMatrix<double>;

inline constexpr int kDefaultSegmentLength = 16;

/// Per-segment encodings of one video, time-major.
struct FeatureSequence {
  std::string video_id;
  Matrix features;  // T x C
  int segment_len = kDefaultSegmentLength;
};

/// "TSF1" file: magic, u32 LE (version=1, T, C, segment_len), then T*C
/// little-endian f32 values, time-major. Values are narrowed to float.
std::string serialize_features(const FeatureSequence& seq);
FeatureSequence deserialize_features(std::string_view bytes, std::string video_id = {});
void write_features(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence read_features(const std::filesystem::path& path);

/// Ordered class names; line index is the class id.
struct ClassList {
  std::vector<std::string> names;

  int id(std::string_view name) const;  // -1 if unknown
  int size() const { return static_cast<int>(names.size()); }
};

ClassList read_class_list(const std::filesystem::path& path);
void write_class_list(const std::filesystem::path& path, const ClassList& classes);

struct ActivityInterval {
  int class_id = 0;
  Index start = 0;  // frame, inclusive
  Index end = 0;    // frame, exclusive

  bool operator==(const ActivityInterval&) const = default;
};

struct AnnotationSet {
  std::string video_id;
  Index total_frames = 0;
  std::vector<ActivityInterval> intervals;

  void validate(int n_classes) const;
  bool operator==(const AnnotationSet&) const = default;
};

/// Tab-separated records with header "video class start end total".
/// Videos come out in order of first appearance.
std::vector<AnnotationSet> parse_annotations(std::string_view text, const ClassList& classes);
std::vector<AnnotationSet> read_annotations(const std::filesystem::path& path,
                                            const ClassList& classes);
std::string format_annotations(std::span<const AnnotationSet> sets, const ClassList& classes);
void write_annotations(const std::filesystem::path& path, std::span<const AnnotationSet> sets,
                       const ClassList& classes);

enum class Resolution { frames, segments };

/// Number of segments covering `total_frames`.
Index segment_count(Index total_frames, int segment_len);

/// Binary T x n_classes label matrix. A segment is positive for a class when
/// at least half of its nominal frames carry the label.
Matrix labels_to_matrix(const AnnotationSet& ann, Resolution resolution, int n_classes,
                        int segment_len = kDefaultSegmentLength);

/// Replicates each segment row over its frames, truncated to total_frames.
Matrix upsample_to_frames(const Matrix& segment_probs, int segment_len, Index total_frames);

/// merge_map[source class] = target class. Same-target intervals from distinct
/// source classes that overlap or touch are coalesced into their union.
AnnotationSet merge_classes(const AnnotationSet& ann, std::span<const int> merge_map);

struct ManifestEntry {
  std::string video_id;
  int subject = 0;
  int camera = 0;
  int scene = -1;  // synchronized recordings share a scene; -1 when unknown

  bool operator==(const ManifestEntry&) const = default;
};

using Manifest = std::vector<ManifestEntry>;

/// Tab-separated with header "video subject camera [scene]".
Manifest parse_manifest(std::string_view text);
Manifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Partitions by subject id. The sets must be disjoint, non-empty and cover
/// every subject in the manifest.
Split split_cross_subject(const Manifest& manifest, const std::set<int>& train_subjects,
                          const std::set<int>& test_subjects);
/// Same, by camera id.
Split split_cross_view(const Manifest& manifest, const std::set<int>& train_cameras,
                       const std::set<int>& test_cameras);

/// Tab-separated "video split" with split in {train, test}.
Split read_split_file(const std::filesystem::path& path, const Manifest& manifest);

struct ClassStats {
  long long instances = 0;
  double mean_duration = 0.0;      // frames
  double duration_variance = 0.0;  // population variance, frames^2
};

struct DatasetStats {
  std::vector<ClassStats> classes;
  /// concurrency[k] = frames carrying exactly k labels, k >= 1.
  std::vector<long long> concurrency;
  long long labeled_frames = 0;
  long long total_instances = 0;
  std::size_t videos = 0;
  double instances_per_video = 0.0;
};

DatasetStats dataset_stats(std::span<const AnnotationSet> annotations, const Manifest& manifest,
                           int n_classes);
std::string format_stats(const DatasetStats& stats, const ClassList& classes);

}  // namespace agnet
