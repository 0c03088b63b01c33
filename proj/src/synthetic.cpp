#include "agnet/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

namespace agnet {

namespace {

constexpr int kMaxConcurrent = 4;

}  // namespace

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("SyntheticConfig: " + what);
  };
  if (n_classes < 1) fail("n_classes must be >= 1");
  if (n_composite < 0 || n_composite >= n_classes) fail("n_composite must be in [0, n_classes)");
  if (n_videos < 1) fail("n_videos must be >= 1");
  if (views_per_scene < 1) fail("views_per_scene must be >= 1");
  if (views_per_scene > n_cameras) fail("views_per_scene cannot exceed n_cameras");
  if (segment_len < 1) fail("segment_len must be >= 1");
  if (frames_per_video < segment_len || frames_per_video % segment_len != 0)
    fail("frames_per_video must be a positive multiple of segment_len");
  if (!(instances_per_video > 0.0)) fail("instances_per_video must be positive");
  if (channels < 1 || attention_channels < 1) fail("channel counts must be >= 1");
  if (!(snr > 0.0) || !(attention_snr > 0.0)) fail("snr values must be positive (inf allowed)");
  if (!(zipf_exponent >= 0.0)) fail("zipf_exponent must be >= 0");
  if (!(min_median_duration >= 1.0) || !(max_median_duration >= min_median_duration))
    fail("median durations must satisfy 1 <= min <= max");
  if (n_composite > 0 && !(composite_median_duration >= 2.0))
    fail("composite_median_duration must be >= 2");
  if (!(duration_log_sigma >= 0.0)) fail("duration_log_sigma must be >= 0");
  if (n_subjects < 1 || n_cameras < 1) fail("need at least one subject and one camera");
  if (!(subject_offset >= 0.0)) fail("subject_offset must be >= 0");
  const int n_elem = n_classes - n_composite;
  if (!composite_map.empty()) {
    if (static_cast<int>(composite_map.size()) != n_composite)
      fail("composite_map needs one entry per composite class");
    for (const auto& parts : composite_map) {
      if (parts.size() < 2) fail("a composite needs at least two constituents");
      for (int c : parts)
        if (c < 0 || c >= n_elem) fail("composite constituents must be elementary classes");
    }
  } else if (n_composite > 0) {
    if (constituents_per_composite < 2) fail("constituents_per_composite must be >= 2");
    if (constituents_per_composite > n_elem) fail("not enough elementary classes for composites");
  }
}

double SyntheticConfig::class_probability(int class_id) const {
  double norm = 0.0;
  for (int r = 1; r <= n_classes; ++r) norm += std::pow(r, -zipf_exponent);
  return std::pow(class_id + 1, -zipf_exponent) / norm;
}

std::string SyntheticConfig::to_text() const {
  std::ostringstream ss;
  auto d = [](double v) { return io::format_double(v); };
  ss << "n_classes=" << n_classes << '\n'
     << "n_composite=" << n_composite << '\n'
     << "composite_map=";
  for (std::size_t i = 0; i < composite_map.size(); ++i) {
    if (i) ss << ';';
    for (std::size_t j = 0; j < composite_map[i].size(); ++j)
      ss << (j ? "," : "") << composite_map[i][j];
  }
  ss << '\n'
     << "constituents_per_composite=" << constituents_per_composite << '\n'
     << "zipf_exponent=" << d(zipf_exponent) << '\n'
     << "min_median_duration=" << d(min_median_duration) << '\n'
     << "max_median_duration=" << d(max_median_duration) << '\n'
     << "composite_median_duration=" << d(composite_median_duration) << '\n'
     << "duration_log_sigma=" << d(duration_log_sigma) << '\n'
     << "n_videos=" << n_videos << '\n'
     << "views_per_scene=" << views_per_scene << '\n'
     << "frames_per_video=" << frames_per_video << '\n'
     << "segment_len=" << segment_len << '\n'
     << "instances_per_video=" << d(instances_per_video) << '\n'
     << "channels=" << channels << '\n'
     << "attention_channels=" << attention_channels << '\n'
     << "snr=" << d(snr) << '\n'
     << "attention_snr=" << d(attention_snr) << '\n'
     << "subject_offset=" << d(subject_offset) << '\n'
     << "n_subjects=" << n_subjects << '\n'
     << "n_cameras=" << n_cameras << '\n'
     << "seed=" << seed << '\n';
  return ss.str();
}

SyntheticConfig SyntheticConfig::from_text(std::string_view text) {
  std::map<std::string, std::string> f;
  for (const auto& line : io::split(text, '\n')) {
    auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos) throw FormatError("config line without '=': " + line);
    f[std::string(io::trim(t.substr(0, eq)))] = std::string(io::trim(t.substr(eq + 1)));
  }
  auto num = [&](const char* key, auto& out) {
    auto it = f.find(key);
    if (it == f.end()) return;
    const auto& s = it->second;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw FormatError(std::string("config field ") + key + ": bad value '" + s + "'");
  };
  SyntheticConfig c;
  num("n_classes", c.n_classes);
  num("n_composite", c.n_composite);
  if (auto it = f.find("composite_map"); it != f.end() && !it->second.empty()) {
    for (const auto& group : io::split(it->second, ';')) {
      std::vector<int> parts;
      for (const auto& p : io::split(group, ',')) {
        int v = 0;
        auto res = std::from_chars(p.data(), p.data() + p.size(), v);
        if (res.ec != std::errc{}) throw FormatError("config field composite_map: bad value");
        parts.push_back(v);
      }
      c.composite_map.push_back(std::move(parts));
    }
  }
  num("constituents_per_composite", c.constituents_per_composite);
  num("zipf_exponent", c.zipf_exponent);
  num("min_median_duration", c.min_median_duration);
  num("max_median_duration", c.max_median_duration);
  num("composite_median_duration", c.composite_median_duration);
  num("duration_log_sigma", c.duration_log_sigma);
  num("n_videos", c.n_videos);
  num("views_per_scene", c.views_per_scene);
  num("frames_per_video", c.frames_per_video);
  num("segment_len", c.segment_len);
  num("instances_per_video", c.instances_per_video);
  num("channels", c.channels);
  num("attention_channels", c.attention_channels);
  num("snr", c.snr);
  num("attention_snr", c.attention_snr);
  num("subject_offset", c.subject_offset);
  num("n_subjects", c.n_subjects);
  num("n_cameras", c.n_cameras);
  num("seed", c.seed);
  c.validate();
  return c;
}

SyntheticConfig SyntheticConfig::tsu_scale() {
  SyntheticConfig c;
  c.n_classes = 51;
  c.n_composite = 5;
  // 16 elementary classes take part in the 5 composites.
  c.composite_map = {{4, 9, 13, 20}, {6, 11, 17}, {8, 15, 22}, {10, 19, 27}, {12, 24, 31}};
  c.min_median_duration = 2.0;
  c.max_median_duration = 100.0;
  c.composite_median_duration = 300.0;
  c.duration_log_sigma = 0.6;
  c.n_videos = 20;
  c.frames_per_video = 30000;  // 20 minutes at 25 fps
  c.instances_per_video = 76.0;
  c.channels = 64;
  c.attention_channels = 32;
  c.n_subjects = 18;
  c.n_cameras = 7;
  return c;
}

std::size_t Dataset::index_of(const std::string& video_id) const {
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (manifest[i].video_id == video_id) return i;
  throw std::invalid_argument("unknown video " + video_id);
}

namespace {

/// Columns scaled to norm sqrt(rows) (unit RMS per element). The first
/// `orthogonal` columns are orthonormalized when rows allow it; the rest are
/// projected off their span.
Eigen::MatrixXd signatures(Index rows, Index cols, Index orthogonal, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
  const Index q = std::min(rows, cols);
  Eigen::MatrixXd out = g;
  if (rows >= orthogonal) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(rows, q);
    out.leftCols(q) = basis;
    if (cols > q) {
      // More vectors than dimensions: keep the extra ones, minus their
      // component along the protected (class) directions.
      const auto protected_basis = basis.leftCols(orthogonal);
      for (Index j = q; j < cols; ++j)
        out.col(j) -= protected_basis * (protected_basis.transpose() * out.col(j));
    }
  }
  const double scale = std::sqrt(static_cast<double>(rows));
  for (Index j = 0; j < cols; ++j) {
    const double n = out.col(j).norm();
    if (n > 1e-12) out.col(j) *= scale / n;
  }
  return out;
}

struct Scene {
  std::vector<ActivityInterval> intervals;  // segment units
};

class Placer {
 public:
  Placer(Index segments, int n_classes)
      : occupancy_(static_cast<std::size_t>(segments), 0),
        active_(static_cast<std::size_t>(n_classes),
                std::vector<char>(static_cast<std::size_t>(segments), 0)) {}

  // Same-class intervals keep a gap so they stay distinct events.
  // `extra` counts labels about to be stacked on the same frames.
  bool fits(int cls, Index start, Index end, int extra = 0) const {
    const auto& own = active_[cls];
    if ((start > 0 && own[start - 1]) || (end < static_cast<Index>(own.size()) && own[end]))
      return false;
    for (Index t = start; t < end; ++t)
      if (occupancy_[t] + extra >= kMaxConcurrent || active_[cls][t]) return false;
    return true;
  }

  void mark(int cls, Index start, Index end) {
    for (Index t = start; t < end; ++t) {
      ++occupancy_[t];
      active_[cls][t] = 1;
    }
  }

  /// Random start in [lo, hi - len]; nullopt after `tries` failures.
  std::optional<Index> place(int cls, Index len, Index lo, Index hi, std::mt19937_64& rng,
                             int tries = 50) {
    if (len > hi - lo) return std::nullopt;
    std::uniform_int_distribution<Index> pick(lo, hi - len);
    for (int i = 0; i < tries; ++i) {
      const Index s = pick(rng);
      if (fits(cls, s, s + len)) {
        mark(cls, s, s + len);
        return s;
      }
    }
    return std::nullopt;
  }

 private:
  std::vector<int> occupancy_;
  std::vector<std::vector<char>> active_;
};

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int n_elem = config.n_classes - config.n_composite;
  const Index segments = config.frames_per_video / config.segment_len;

  auto composites = config.composite_map;
  if (composites.empty() && config.n_composite > 0) {
    std::vector<int> pool(static_cast<std::size_t>(n_elem));
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t next = 0;
    for (int i = 0; i < config.n_composite; ++i) {
      std::vector<int> parts;
      for (int j = 0; j < config.constituents_per_composite; ++j)
        parts.push_back(pool[next++ % pool.size()]);
      std::sort(parts.begin(), parts.end());
      parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
      composites.push_back(std::move(parts));
    }
  }

  std::vector<double> median(static_cast<std::size_t>(config.n_classes));
  {
    std::vector<int> order(static_cast<std::size_t>(n_elem));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double lo = std::log(config.min_median_duration);
    const double hi = std::log(config.max_median_duration);
    for (int i = 0; i < n_elem; ++i) {
      const double frac = n_elem > 1 ? static_cast<double>(i) / (n_elem - 1) : 0.5;
      median[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
          std::exp(lo + frac * (hi - lo));
    }
    for (int c = n_elem; c < config.n_classes; ++c)
      median[static_cast<std::size_t>(c)] = config.composite_median_duration;
  }

  // Expected labeled mass per video must fit in kMaxConcurrent tracks.
  {
    const double spread = std::exp(0.5 * config.duration_log_sigma * config.duration_log_sigma);
    double mass = 0.0, instances = 0.0;
    for (int c = 0; c < config.n_classes; ++c) {
      const double p = config.class_probability(c);
      const double dur = std::min<double>(median[static_cast<std::size_t>(c)] * spread, segments);
      if (config.is_composite(c)) {
        const auto& parts = composites[static_cast<std::size_t>(c - n_elem)];
        const double m = (2.0 + std::min<double>(4.0, parts.size())) / 2.0;
        mass += p * 2.0 * dur;
        instances += p * (1.0 + m);
      } else {
        mass += p * dur;
        instances += p;
      }
    }
    const double expected = config.instances_per_video * mass / instances;
    if (expected > kMaxConcurrent * static_cast<double>(segments))
      throw std::invalid_argument(
          "infeasible packing: expected activity mass " + io::format_double(expected) +
          " segments exceeds " + std::to_string(kMaxConcurrent) + " tracks x " +
          std::to_string(segments) + " segments");
  }

  std::vector<double> weights(static_cast<std::size_t>(config.n_classes));
  for (int c = 0; c < config.n_classes; ++c)
    weights[static_cast<std::size_t>(c)] = std::pow(c + 1, -config.zipf_exponent);
  std::discrete_distribution<int> draw_class(weights.begin(), weights.end());

  const Eigen::MatrixXd main_sig =
      signatures(config.channels, config.n_classes + config.n_subjects, config.n_classes, rng);
  const Eigen::MatrixXd att_sig =
      signatures(config.attention_channels, config.n_classes, config.n_classes, rng);

  auto sample_duration = [&](int cls, Index cap) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double d = std::exp(std::log(median[static_cast<std::size_t>(cls)]) +
                              config.duration_log_sigma * normal(rng));
    return std::clamp<Index>(static_cast<Index>(std::llround(d)), 1, cap);
  };

  Dataset ds;
  ds.segment_len = config.segment_len;
  for (int c = 0; c < config.n_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "%s%02d", config.is_composite(c) ? "composite" : "activity", c);
    ds.classes.names.emplace_back(name);
  }

  const double noise_std = std::isinf(config.snr) ? 0.0 : 1.0 / std::sqrt(config.snr);
  const double att_noise_std =
      std::isinf(config.attention_snr) ? 0.0 : 1.0 / std::sqrt(config.attention_snr);

  for (int scene = 0; scene < config.n_videos; ++scene) {
    std::poisson_distribution<int> count(config.instances_per_video);
    const int target = std::max(1, count(rng));
    Placer placer(segments, config.n_classes);
    Scene sc;
    int emitted = 0;
    for (int attempt = 0; emitted < target && attempt < 50 * target; ++attempt) {
      const int cls = draw_class(rng);
      if (!config.is_composite(cls)) {
        const Index len = sample_duration(cls, segments);
        if (auto s = placer.place(cls, len, 0, segments, rng)) {
          sc.intervals.push_back({cls, *s, *s + len});
          ++emitted;
        }
        continue;
      }
      auto parts = composites[static_cast<std::size_t>(cls - n_elem)];
      const int max_parts = std::min<int>(4, static_cast<int>(parts.size()));
      const int m = std::uniform_int_distribution<int>(2, max_parts)(rng);
      const Index len = std::max<Index>(m, sample_duration(cls, segments));
      if (len > segments) continue;
      // The composite and all of its pieces are placed together or not at all.
      std::shuffle(parts.begin(), parts.end(), rng);
      std::uniform_int_distribution<Index> pick(0, segments - len);
      std::vector<Index> candidates(static_cast<std::size_t>(len - 1));
      for (int tries = 0; tries < 50; ++tries) {
        const Index s = pick(rng);
        std::iota(candidates.begin(), candidates.end(), Index{1});
        std::shuffle(candidates.begin(), candidates.end(), rng);
        std::vector<Index> cuts(candidates.begin(), candidates.begin() + (m - 1));
        std::sort(cuts.begin(), cuts.end());
        cuts.insert(cuts.begin(), 0);
        cuts.push_back(len);
        bool ok = placer.fits(cls, s, s + len);
        for (int p = 0; ok && p < m; ++p)
          ok = placer.fits(parts[static_cast<std::size_t>(p)], s + cuts[static_cast<std::size_t>(p)],
                           s + cuts[static_cast<std::size_t>(p) + 1], 1);
        if (!ok) continue;
        placer.mark(cls, s, s + len);
        sc.intervals.push_back({cls, s, s + len});
        ++emitted;
        for (int p = 0; p < m; ++p) {
          const Index a = s + cuts[static_cast<std::size_t>(p)];
          const Index b = s + cuts[static_cast<std::size_t>(p) + 1];
          const int part = parts[static_cast<std::size_t>(p)];
          placer.mark(part, a, b);
          sc.intervals.push_back({part, a, b});
          ++emitted;
        }
        break;
      }
    }
    std::sort(sc.intervals.begin(), sc.intervals.end(),
              [](const ActivityInterval& a, const ActivityInterval& b) {
                return std::tie(a.start, a.class_id) < std::tie(b.start, b.class_id);
              });

    AnnotationSet ann;
    ann.total_frames = config.frames_per_video;
    for (const auto& iv : sc.intervals)
      ann.intervals.push_back(
          {iv.class_id, iv.start * config.segment_len, iv.end * config.segment_len});

    Matrix activity = Matrix::Zero(segments, config.n_classes);
    for (const auto& iv : sc.intervals)
      activity.block(iv.start, iv.class_id, iv.end - iv.start, 1).setOnes();

    const int subject = scene % config.n_subjects + 1;
    for (int view = 0; view < config.views_per_scene; ++view) {
      const int camera = (scene + view) % config.n_cameras + 1;
      char id[48];
      if (config.views_per_scene > 1)
        std::snprintf(id, sizeof(id), "s%04d_c%d", scene, camera);
      else
        std::snprintf(id, sizeof(id), "v%04d", scene);

      std::seed_seq seq{config.seed, std::uint64_t(scene), std::uint64_t(view), std::uint64_t(7)};
      std::mt19937_64 noise_rng(seq);
      std::normal_distribution<double> normal(0.0, 1.0);

      Matrix main = activity * main_sig.leftCols(config.n_classes).transpose();
      main.rowwise() +=
          config.subject_offset * main_sig.col(config.n_classes + subject - 1).transpose();
      Matrix att = activity * att_sig.transpose();
      for (Index i = 0; i < main.size(); ++i)
        main.data()[i] = static_cast<float>(main.data()[i] + noise_std * normal(noise_rng));
      for (Index i = 0; i < att.size(); ++i)
        att.data()[i] = static_cast<float>(att.data()[i] + att_noise_std * normal(noise_rng));

      AnnotationSet view_ann = ann;
      view_ann.video_id = id;
      ds.manifest.push_back({id, subject, camera, scene});
      ds.annotations.push_back(std::move(view_ann));
      ds.main.push_back({id, std::move(main), config.segment_len});
      ds.attention.push_back({id, std::move(att), config.segment_len});
    }
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  write_class_list(dir / "classes.txt", ds.classes);
  write_manifest(dir / "manifest.tsv", ds.manifest);
  write_annotations(dir / "annotations.tsv", ds.annotations, ds.classes);
  for (const auto& f : ds.main) write_features(dir / "features" / (f.video_id + ".tsf"), f);
  if (ds.has_attention()) {
    fs::create_directories(dir / "attention");
    for (const auto& f : ds.attention) write_features(dir / "attention" / (f.video_id + ".tsf"), f);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::invalid_argument("dataset directory " + dir.string() + " not found");
  Dataset ds;
  ds.classes = read_class_list(dir / "classes.txt");
  ds.manifest = read_manifest(dir / "manifest.tsv");
  if (ds.manifest.empty()) throw std::invalid_argument("dataset " + dir.string() + " has no videos");
  auto anns = read_annotations(dir / "annotations.tsv", ds.classes);
  std::map<std::string, AnnotationSet> by_id;
  for (auto& a : anns) by_id.emplace(a.video_id, std::move(a));

  const bool attention = fs::is_directory(dir / "attention");
  for (std::size_t i = 0; i < ds.manifest.size(); ++i) {
    const auto& id = ds.manifest[i].video_id;
    auto main = read_features(dir / "features" / (id + ".tsf"));
    if (i == 0) ds.segment_len = main.segment_len;
    if (main.segment_len != ds.segment_len)
      throw FormatError("video " + id + ": segment length differs from the rest of the dataset");
    AnnotationSet ann;
    if (auto it = by_id.find(id); it != by_id.end()) {
      ann = std::move(it->second);
      by_id.erase(it);
    } else {
      ann = {id, main.features.rows() * main.segment_len, {}};
    }
    if (segment_count(ann.total_frames, ds.segment_len) != main.features.rows())
      throw std::invalid_argument("video " + id + ": " + std::to_string(ann.total_frames) +
                                  " annotated frames do not match " +
                                  std::to_string(main.features.rows()) + " feature segments");
    if (attention) {
      auto att = read_features(dir / "attention" / (id + ".tsf"));
      if (att.features.rows() != main.features.rows())
        throw std::invalid_argument("video " + id + ": attention stream length differs");
      ds.attention.push_back(std::move(att));
    }
    ds.main.push_back(std::move(main));
    ds.annotations.push_back(std::move(ann));
  }
  if (!by_id.empty())
    throw FormatError("annotations reference video " + by_id.begin()->first +
                      " absent from the manifest");
  return ds;
}

}  // namespace agnet
