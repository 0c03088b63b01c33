#include "agnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace agnet {

namespace {

constexpr std::string_view kFeatureMagic = "TSF1";
constexpr std::uint32_t kFeatureVersion = 1;

template <typename Int>
Int parse_integer(std::string_view s, const std::string& where) {
  Int v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw FormatError(where + ": expected an integer, got '" + std::string(s) + "'");
  return v;
}

/// Splits a TSV document into rows, skipping blanks and '#' comments, and
/// checks the header names. Each row is paired with its 1-based line number.
std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_tsv(
    std::string_view text, std::span<const std::string_view> required,
    std::span<const std::string_view> optional_tail, const std::string& what) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  bool header_seen = false;
  std::size_t columns = 0;
  std::size_t line_no = 0;
  for (const auto& raw : io::split(text, '\n')) {
    ++line_no;
    auto line = raw;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (io::trim(line).empty() || io::trim(line).front() == '#') continue;
    auto fields = io::split(line, '\t');
    for (auto& f : fields) f = std::string(io::trim(f));
    if (!header_seen) {
      if (fields.size() < required.size() || fields.size() > required.size() + optional_tail.size())
        throw FormatError(what + " line " + std::to_string(line_no) + ": bad header");
      for (std::size_t i = 0; i < fields.size(); ++i) {
        auto expect = i < required.size() ? required[i] : optional_tail[i - required.size()];
        if (fields[i] != expect)
          throw FormatError(what + " line " + std::to_string(line_no) + ": header column " +
                            std::to_string(i + 1) + " must be '" + std::string(expect) + "'");
      }
      columns = fields.size();
      header_seen = true;
      continue;
    }
    if (fields.size() != columns)
      throw FormatError(what + " line " + std::to_string(line_no) + ": expected " +
                        std::to_string(columns) + " fields, found " + std::to_string(fields.size()));
    rows.emplace_back(line_no, std::move(fields));
  }
  if (!header_seen) throw FormatError(what + ": missing header line");
  return rows;
}

}  // namespace

std::string serialize_features(const FeatureSequence& seq) {
  const Matrix& m = seq.features;
  if (m.rows() < 1 || m.cols() < 1) throw std::invalid_argument("feature sequence is empty");
  if (!m.allFinite()) throw std::invalid_argument("feature sequence holds non-finite values");
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max())
    throw std::invalid_argument("feature sequence too large for TSF1");
  if (seq.segment_len < 1) throw std::invalid_argument("segment length must be positive");
  std::string out(kFeatureMagic);
  out.reserve(20 + static_cast<std::size_t>(m.size()) * 4);
  io::put_u32(out, kFeatureVersion);
  io::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  io::put_u32(out, static_cast<std::uint32_t>(seq.segment_len));
  for (Index i = 0; i < m.size(); ++i) io::put_f32(out, static_cast<float>(m.data()[i]));
  return out;
}

FeatureSequence deserialize_features(std::string_view bytes, std::string video_id) {
  io::Reader r(bytes);
  if (bytes.size() < 4 || r.take(4, "magic") != kFeatureMagic)
    throw FormatError("bad magic: not a TSF1 feature file");
  const auto version = r.u32("version");
  if (version != kFeatureVersion)
    throw FormatError("unsupported TSF1 version " + std::to_string(version));
  const std::uint64_t t = r.u32("T");
  const std::uint64_t c = r.u32("C");
  const auto seg = r.u32("segment_len");
  if (t == 0 || c == 0) throw FormatError("TSF1 header declares an empty matrix");
  if (seg == 0) throw FormatError("TSF1 header declares segment_len 0");
  const std::uint64_t count = t * c;
  if (count > std::numeric_limits<std::uint64_t>::max() / 4 ||
      count > static_cast<std::uint64_t>(std::numeric_limits<Index>::max()))
    throw FormatError("TSF1 header T*C overflows");
  if (count * 4 > r.remaining())
    throw FormatError("truncated payload: header declares " + std::to_string(count) +
                      " floats, body holds " + std::to_string(r.remaining() / 4));
  if (count * 4 < r.remaining()) throw FormatError("trailing bytes after TSF1 payload");
  FeatureSequence seq;
  seq.video_id = std::move(video_id);
  seq.segment_len = static_cast<int>(seg);
  seq.features.resize(static_cast<Index>(t), static_cast<Index>(c));
  for (Index i = 0; i < seq.features.size(); ++i) {
    const float v = r.f32("features");
    if (!std::isfinite(v)) throw FormatError("TSF1 payload holds a non-finite value");
    seq.features.data()[i] = v;
  }
  return seq;
}

void write_features(const std::filesystem::path& path, const FeatureSequence& seq) {
  io::write_file_atomic(path, serialize_features(seq));
}

FeatureSequence read_features(const std::filesystem::path& path) {
  return deserialize_features(io::read_file(path), path.stem().string());
}

int ClassList::id(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

ClassList read_class_list(const std::filesystem::path& path) {
  ClassList cl;
  for (const auto& line : io::split(io::read_file(path), '\n')) {
    auto name = io::trim(line);
    if (name.empty()) continue;
    if (cl.id(name) >= 0) throw FormatError("duplicate class name '" + std::string(name) + "'");
    cl.names.emplace_back(name);
  }
  if (cl.names.empty()) throw FormatError("class list " + path.string() + " is empty");
  return cl;
}

void write_class_list(const std::filesystem::path& path, const ClassList& classes) {
  std::string out;
  for (const auto& n : classes.names) out += n + '\n';
  io::write_file_atomic(path, out);
}

void AnnotationSet::validate(int n_classes) const {
  if (total_frames < 1) throw std::invalid_argument("video " + video_id + ": no frames");
  for (const auto& iv : intervals) {
    if (iv.class_id < 0 || iv.class_id >= n_classes)
      throw std::invalid_argument("video " + video_id + ": class id out of range");
    if (!(0 <= iv.start && iv.start < iv.end && iv.end <= total_frames))
      throw std::invalid_argument("video " + video_id + ": interval [" +
                                  std::to_string(iv.start) + "," + std::to_string(iv.end) +
                                  ") outside [0," + std::to_string(total_frames) + ")");
  }
}

std::vector<AnnotationSet> parse_annotations(std::string_view text, const ClassList& classes) {
  static constexpr std::string_view header[] = {"video", "class", "start", "end", "total"};
  std::vector<AnnotationSet> sets;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& [line, f] : parse_tsv(text, header, {}, "annotations")) {
    const std::string where = "annotations line " + std::to_string(line);
    if (f[1] == "-") {
      // A video with no activity: class, start and end are all "-".
      if (f[2] != "-" || f[3] != "-") throw FormatError(where + ": empty record needs '-' bounds");
      const auto total = parse_integer<long long>(f[4], where);
      if (total < 1) throw FormatError(where + ": no frames");
      if (!index.try_emplace(f[0], sets.size()).second)
        throw FormatError(where + ": empty record for annotated video " + f[0]);
      sets.push_back({f[0], total, {}});
      continue;
    }
    const int cls = classes.id(f[1]);
    if (cls < 0) throw FormatError(where + ": unknown class '" + f[1] + "'");
    const auto start = parse_integer<long long>(f[2], where);
    const auto end = parse_integer<long long>(f[3], where);
    const auto total = parse_integer<long long>(f[4], where);
    if (start < 0) throw FormatError(where + ": negative start");
    if (start >= end) throw FormatError(where + ": start must be < end");
    if (end > total) throw FormatError(where + ": end exceeds total frames");
    auto [it, inserted] = index.try_emplace(f[0], sets.size());
    if (inserted) sets.push_back({f[0], total, {}});
    AnnotationSet& set = sets[it->second];
    if (set.total_frames != total)
      throw FormatError(where + ": total frames disagree with earlier records of " + f[0]);
    set.intervals.push_back({cls, start, end});
  }
  return sets;
}

std::vector<AnnotationSet> read_annotations(const std::filesystem::path& path,
                                            const ClassList& classes) {
  return parse_annotations(io::read_file(path), classes);
}

std::string format_annotations(std::span<const AnnotationSet> sets, const ClassList& classes) {
  std::ostringstream out;
  out << "video\tclass\tstart\tend\ttotal\n";
  for (const auto& s : sets) {
    if (s.intervals.empty()) out << s.video_id << "\t-\t-\t-\t" << s.total_frames << '\n';
    for (const auto& iv : s.intervals)
      out << s.video_id << '\t' << classes.names.at(static_cast<std::size_t>(iv.class_id)) << '\t'
          << iv.start << '\t' << iv.end << '\t' << s.total_frames << '\n';
  }
  return out.str();
}

void write_annotations(const std::filesystem::path& path, std::span<const AnnotationSet> sets,
                       const ClassList& classes) {
  io::write_file_atomic(path, format_annotations(sets, classes));
}

Index segment_count(Index total_frames, int segment_len) {
  if (segment_len < 1) throw std::invalid_argument("segment length must be positive");
  return (total_frames + segment_len - 1) / segment_len;
}

Matrix labels_to_matrix(const AnnotationSet& ann, Resolution resolution, int n_classes,
                        int segment_len) {
  ann.validate(n_classes);
  Matrix frames = Matrix::Zero(ann.total_frames, n_classes);
  for (const auto& iv : ann.intervals)
    frames.block(iv.start, iv.class_id, iv.end - iv.start, 1).setOnes();
  if (resolution == Resolution::frames) return frames;

  const Index segments = segment_count(ann.total_frames, segment_len);
  Matrix out = Matrix::Zero(segments, n_classes);
  for (Index s = 0; s < segments; ++s) {
    const Index begin = s * segment_len;
    const Index len = std::min<Index>(segment_len, ann.total_frames - begin);
    const Eigen::RowVectorXd covered = frames.middleRows(begin, len).colwise().sum();
    for (Index c = 0; c < n_classes; ++c)
      out(s, c) = 2 * covered(c) >= segment_len ? 1.0 : 0.0;
  }
  return out;
}

Matrix upsample_to_frames(const Matrix& segment_probs, int segment_len, Index total_frames) {
  if (segment_len < 1) throw std::invalid_argument("segment length must be positive");
  if (segment_probs.rows() * segment_len < total_frames)
    throw std::invalid_argument("segments cover fewer frames than total_frames");
  Matrix out(total_frames, segment_probs.cols());
  for (Index f = 0; f < total_frames; ++f) out.row(f) = segment_probs.row(f / segment_len);
  return out;
}

AnnotationSet merge_classes(const AnnotationSet& ann, std::span<const int> merge_map) {
  struct Item {
    ActivityInterval iv;
    int source;
  };
  std::map<int, std::vector<Item>> by_target;
  bool merged = false;
  for (const auto& iv : ann.intervals) {
    if (iv.class_id < 0 || static_cast<std::size_t>(iv.class_id) >= merge_map.size())
      throw std::invalid_argument("class " + std::to_string(iv.class_id) +
                                  " missing from merge map");
    const int target = merge_map[static_cast<std::size_t>(iv.class_id)];
    if (target < 0) throw std::invalid_argument("merge map sends class to a negative id");
    by_target[target].push_back({{target, iv.start, iv.end}, iv.class_id});
  }

  AnnotationSet out{ann.video_id, ann.total_frames, {}};
  for (auto& [target, items] : by_target) {
    std::stable_sort(items.begin(), items.end(),
                     [](const Item& a, const Item& b) { return a.iv.start < b.iv.start; });
    std::size_t i = 0;
    while (i < items.size()) {
      ActivityInterval cur = items[i].iv;
      std::set<int> sources{items[i].source};
      std::size_t j = i + 1;
      for (; j < items.size(); ++j) {
        const Item& next = items[j];
        const bool touches = next.iv.start <= cur.end;
        const bool distinct = sources.size() > 1 || !sources.contains(next.source);
        if (!touches || !distinct) break;
        cur.end = std::max(cur.end, next.iv.end);
        sources.insert(next.source);
        merged = true;
      }
      out.intervals.push_back(cur);
      i = j;
    }
  }
  if (!merged) {
    out.intervals.clear();
    for (const auto& iv : ann.intervals)
      out.intervals.push_back({merge_map[static_cast<std::size_t>(iv.class_id)], iv.start, iv.end});
    return out;
  }
  std::stable_sort(out.intervals.begin(), out.intervals.end(),
                   [](const ActivityInterval& a, const ActivityInterval& b) {
                     return a.start < b.start;
                   });
  return out;
}

Manifest parse_manifest(std::string_view text) {
  static constexpr std::string_view header[] = {"video", "subject", "camera"};
  static constexpr std::string_view tail[] = {"scene"};
  Manifest m;
  std::set<std::string> seen;
  for (const auto& [line, f] : parse_tsv(text, header, tail, "manifest")) {
    const std::string where = "manifest line " + std::to_string(line);
    if (!seen.insert(f[0]).second) throw FormatError(where + ": duplicate video " + f[0]);
    ManifestEntry e{f[0], parse_integer<int>(f[1], where), parse_integer<int>(f[2], where), -1};
    if (f.size() > 3) e.scene = parse_integer<int>(f[3], where);
    m.push_back(std::move(e));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(io::read_file(path));
}

std::string format_manifest(const Manifest& manifest) {
  const bool scenes =
      std::any_of(manifest.begin(), manifest.end(), [](const auto& e) { return e.scene >= 0; });
  std::ostringstream out;
  out << "video\tsubject\tcamera" << (scenes ? "\tscene" : "") << '\n';
  for (const auto& e : manifest) {
    out << e.video_id << '\t' << e.subject << '\t' << e.camera;
    if (scenes) out << '\t' << e.scene;
    out << '\n';
  }
  return out.str();
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  io::write_file_atomic(path, format_manifest(manifest));
}

namespace {

Split split_by(const Manifest& manifest, const std::set<int>& train, const std::set<int>& test,
               int ManifestEntry::*key, const char* what) {
  if (train.empty()) throw std::invalid_argument(std::string("empty training ") + what + " set");
  if (test.empty()) throw std::invalid_argument(std::string("empty test ") + what + " set");
  for (int v : train)
    if (test.contains(v))
      throw std::invalid_argument(std::string(what) + " " + std::to_string(v) +
                                  " is in both training and test sets");
  Split s;
  for (const auto& e : manifest) {
    const int k = e.*key;
    if (train.contains(k))
      s.train.push_back(e.video_id);
    else if (test.contains(k))
      s.test.push_back(e.video_id);
    else
      throw std::invalid_argument(std::string(what) + " " + std::to_string(k) + " of video " +
                                  e.video_id + " is in neither set");
  }
  return s;
}

}  // namespace

Split split_cross_subject(const Manifest& manifest, const std::set<int>& train_subjects,
                          const std::set<int>& test_subjects) {
  return split_by(manifest, train_subjects, test_subjects, &ManifestEntry::subject, "subject");
}

Split split_cross_view(const Manifest& manifest, const std::set<int>& train_cameras,
                       const std::set<int>& test_cameras) {
  return split_by(manifest, train_cameras, test_cameras, &ManifestEntry::camera, "camera");
}

Split read_split_file(const std::filesystem::path& path, const Manifest& manifest) {
  static constexpr std::string_view header[] = {"video", "split"};
  std::set<std::string> known;
  for (const auto& e : manifest) known.insert(e.video_id);
  std::set<std::string> seen;
  Split s;
  for (const auto& [line, f] : parse_tsv(io::read_file(path), header, {}, "split file")) {
    const std::string where = "split file line " + std::to_string(line);
    if (!known.contains(f[0])) throw FormatError(where + ": unknown video " + f[0]);
    if (!seen.insert(f[0]).second) throw FormatError(where + ": video listed twice: " + f[0]);
    if (f[1] == "train")
      s.train.push_back(f[0]);
    else if (f[1] == "test")
      s.test.push_back(f[0]);
    else
      throw FormatError(where + ": split must be 'train' or 'test', got '" + f[1] + "'");
  }
  if (s.test.empty()) throw std::invalid_argument("split file assigns no test videos");
  return s;
}

DatasetStats dataset_stats(std::span<const AnnotationSet> annotations, const Manifest& manifest,
                           int n_classes) {
  if (annotations.empty() && manifest.empty())
    throw std::invalid_argument("dataset_stats: empty dataset");
  DatasetStats st;
  st.classes.resize(static_cast<std::size_t>(n_classes));
  std::vector<std::vector<double>> durations(st.classes.size());
  std::set<std::string> videos;
  for (const auto& e : manifest) videos.insert(e.video_id);
  for (const auto& ann : annotations) {
    videos.insert(ann.video_id);
    for (const auto& iv : ann.intervals) {
      auto& c = st.classes.at(static_cast<std::size_t>(iv.class_id));
      const double d = static_cast<double>(iv.end - iv.start);
      ++c.instances;
      durations[static_cast<std::size_t>(iv.class_id)].push_back(d);
      ++st.total_instances;
    }
    const Matrix frames = labels_to_matrix(ann, Resolution::frames, n_classes);
    for (Index t = 0; t < frames.rows(); ++t) {
      const auto k = static_cast<std::size_t>(frames.row(t).sum());
      if (k == 0) continue;
      if (st.concurrency.size() <= k) st.concurrency.resize(k + 1, 0);
      ++st.concurrency[k];
      ++st.labeled_frames;
    }
  }
  for (std::size_t c = 0; c < st.classes.size(); ++c) {
    auto& cs = st.classes[c];
    if (cs.instances == 0) continue;
    const double n = static_cast<double>(cs.instances);
    double sum = 0.0, sq = 0.0;
    for (double d : durations[c]) sum += d;
    cs.mean_duration = sum / n;
    for (double d : durations[c]) sq += (d - cs.mean_duration) * (d - cs.mean_duration);
    cs.duration_variance = sq / n;
  }
  st.videos = videos.size();
  st.instances_per_video =
      st.videos ? static_cast<double>(st.total_instances) / static_cast<double>(st.videos) : 0.0;
  return st;
}

std::string format_stats(const DatasetStats& stats, const ClassList& classes) {
  std::ostringstream out;
  out << "class_id\tname\tinstances\tmean_duration\tduration_variance\n";
  std::vector<std::size_t> order(stats.classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return stats.classes[a].instances > stats.classes[b].instances;
  });
  for (std::size_t c : order) {
    const auto& cs = stats.classes[c];
    out << c << '\t' << (c < classes.names.size() ? classes.names[c] : std::to_string(c)) << '\t'
        << cs.instances << '\t' << io::format_double(cs.mean_duration) << '\t'
        << io::format_double(cs.duration_variance) << '\n';
  }
  out << "\nconcurrent_labels\tframes\n";
  for (std::size_t k = 1; k < stats.concurrency.size(); ++k)
    out << k << '\t' << stats.concurrency[k] << '\n';
  out << "\nvideos\t" << stats.videos << '\n'
      << "instances\t" << stats.total_instances << '\n'
      << "instances_per_video\t" << io::format_double(stats.instances_per_video) << '\n'
      << "labeled_frames\t" << stats.labeled_frames << '\n';
  return out.str();
}

}  // namespace agnet
