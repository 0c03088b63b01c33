#pragma once

#include "agnet/model.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agnet {

struct BceResult {
  double loss = 0.0;
  Matrix grad;  // d(loss)/d(logits)
};

/// Mean multi-label binary cross-entropy over all T x C entries, from logits:
/// max(z,0) - z*y + log(1 + exp(-|z|)).
BceResult bce_multilabel(const Matrix& logits, const Matrix& labels);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments for one parameter list.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<const Kernel*>& params, AdamOptions options = {});

  /// Bias-corrected Adam update in place. Throws NonFiniteGradient (leaving
  /// parameters and moments untouched) if any gradient entry is not finite.
  void step(const std::vector<Kernel*>& params, const std::vector<Kernel>& grads);

  AdamOptions options;
  std::vector<Kernel> first_moment;
  std::vector<Kernel> second_moment;
  std::int64_t steps = 0;
};

/// Reduce-on-plateau: if the metric fails to strictly improve on the best
/// value for more than `patience` consecutive epochs, lr *= factor.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(double lr = 0.001, double factor = 0.3, int patience = 10,
                           double min_lr = 1e-7);

  /// Feeds one epoch's metric and returns the lr for the next epoch.
  double update(double metric);

  double lr() const { return lr_; }
  double factor() const { return factor_; }
  int patience() const { return patience_; }
  double min_lr() const { return min_lr_; }
  double best() const { return best_; }
  int epochs_since_improvement() const { return bad_epochs_; }
  const std::vector<double>& history() const { return history_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
  std::vector<double> history_;
};

/// One training/evaluation video: main features, optional attention
/// features and segment-level binary labels, all with the same T.
struct VideoSample {
  std::string id;
  Matrix main;
  Matrix attention;  // empty when the dataset has no second stream
  Matrix labels;     // T x C3
};

/// Validates shapes; throws std::invalid_argument naming the video.
void check_sample(const VideoSample& sample, const AGNetConfig& config);

enum class Monitor { train_loss, heldout_loss };

struct TrainConfig {
  int epochs = 300;
  int batch_size = 2;
  std::uint64_t seed = 0;
  Monitor monitor = Monitor::train_loss;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> heldout_loss;
};

/// "epoch<TAB>lr<TAB>train_loss<TAB>heldout_loss|-"
std::string format_log_line(const EpochRecord& r);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<Kernel> grads;  // aligned with ModelState::parameters()
};

/// One forward/backward pass of the BCE loss on one video.
LossAndGradient video_loss_and_gradient(const ModelState& state, const VideoSample& sample,
                                        bool training, std::mt19937_64& rng);

/// Mean per-video BCE loss in inference mode.
double mean_loss(const ModelState& state, const std::vector<VideoSample>& videos);

struct FitResult {
  ModelState model;
  std::vector<EpochRecord> log;
  std::int64_t optimizer_steps = 0;
};

/// Called after every epoch; returning true stops training.
using EpochCallback = std::function<bool(const EpochRecord&, const ModelState&)>;

/// Per epoch: seeded shuffle, mini-batches of per-video forward/backward with
/// summed gradients, one Adam step per batch, then a plateau update on the
/// monitored loss. One log line per epoch is appended to `log_out` if given.
FitResult fit(ModelState model, const std::vector<VideoSample>& train,
              const std::vector<VideoSample>* heldout, const TrainConfig& config,
              AdamState adam, PlateauSchedule schedule, const EpochCallback& on_epoch = {},
              std::ostream* log_out = nullptr);

}  // namespace agnet
