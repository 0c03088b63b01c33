#include "agnet/train.hpp"

#include "agnet/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace agnet {

BceResult bce_multilabel(const Matrix& logits, const Matrix& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw ShapeError("logits " + detail::dims(logits.rows(), logits.cols()) + " vs labels " +
                     detail::dims(labels.rows(), labels.cols()));
  if (logits.size() == 0) throw ShapeError("empty logits");
  const double n = static_cast<double>(logits.size());
  BceResult r;
  r.grad.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    const double y = labels.data()[i];
    if (y != 0.0 && y != 1.0)
      throw std::invalid_argument("labels must be 0 or 1, found " + io::format_double(y));
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    r.grad.data()[i] = (sigmoid(z) - y) / n;
  }
  r.loss = total / n;
  return r;
}

AdamState::AdamState(const std::vector<const Kernel*>& params, AdamOptions opts)
    : options(opts) {
  for (const Kernel* p : params) {
    first_moment.push_back(zeros_like(*p));
    second_moment.push_back(zeros_like(*p));
  }
}

void AdamState::step(const std::vector<Kernel*>& params, const std::vector<Kernel>& grads) {
  if (params.size() != grads.size() || params.size() != first_moment.size())
    throw ShapeError("Adam: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(first_moment.size()) + " moment buffers");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].weights.rows() != params[i]->weights.rows() ||
        grads[i].weights.cols() != params[i]->weights.cols() ||
        grads[i].bias.size() != params[i]->bias.size())
      throw ShapeError("Adam: gradient " + std::to_string(i) + " shape mismatch");
    if (!grads[i].weights.allFinite() || !grads[i].bias.allFinite())
      throw NonFiniteGradient("non-finite gradient in parameter " + std::to_string(i) +
                              "; step rejected");
  }
  ++steps;
  const double t = static_cast<double>(steps);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
    m = options.beta1 * m + (1.0 - options.beta1) * g;
    v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseProduct(g);
    theta.array() -= options.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options.epsilon);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(params[i]->weights, first_moment[i].weights, second_moment[i].weights, grads[i].weights);
    update(params[i]->bias, first_moment[i].bias, second_moment[i].bias, grads[i].bias);
  }
}

PlateauSchedule::PlateauSchedule(double lr, double factor, int patience, double min_lr)
    : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("factor must be in (0, 1)");
  if (patience < 0) throw std::invalid_argument("patience must be >= 0");
  if (min_lr < 0.0) throw std::invalid_argument("min_lr must be >= 0");
}

double PlateauSchedule::update(double metric) {
  if (!std::isfinite(metric)) throw std::invalid_argument("plateau metric must be finite");
  history_.push_back(metric);
  if (metric < best_) {
    best_ = metric;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
  }
  if (bad_epochs_ > patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    bad_epochs_ = 0;
  }
  return lr_;
}

void check_sample(const VideoSample& s, const AGNetConfig& config) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("video " + s.id + ": " + what);
  };
  if (s.main.rows() < 1) fail("no time steps");
  if (s.main.cols() != config.input_channels)
    fail("main features have " + std::to_string(s.main.cols()) + " channels, model expects " +
         std::to_string(config.input_channels));
  if (s.labels.rows() != s.main.rows())
    fail("label length " + std::to_string(s.labels.rows()) + " != feature length " +
         std::to_string(s.main.rows()));
  if (s.labels.cols() != config.n_classes)
    fail("labels have " + std::to_string(s.labels.cols()) + " classes, model expects " +
         std::to_string(config.n_classes));
  if (config.use_attention()) {
    if (s.attention.size() == 0) fail("missing attention-stream features");
    if (s.attention.rows() != s.main.rows())
      fail("attention length " + std::to_string(s.attention.rows()) + " != main length " +
           std::to_string(s.main.rows()));
    if (s.attention.cols() != config.attention_input_channels)
      fail("attention features have " + std::to_string(s.attention.cols()) +
           " channels, model expects " + std::to_string(config.attention_input_channels));
  }
}

std::string format_log_line(const EpochRecord& r) {
  return std::to_string(r.epoch) + '\t' + io::format_double(r.lr) + '\t' +
         io::format_double(r.train_loss) + '\t' +
         (r.heldout_loss ? io::format_double(*r.heldout_loss) : std::string("-"));
}

LossAndGradient video_loss_and_gradient(const ModelState& state, const VideoSample& sample,
                                        bool training, std::mt19937_64& rng) {
  Tape tape;
  ForwardOptions options;
  options.training = training;
  const Matrix* att = state.config.use_attention() ? &sample.attention : nullptr;
  auto graph = record_forward(tape, state, sample.main, att, options, &rng);
  auto bce = bce_multilabel(tape.value(graph.logits), sample.labels);
  auto grads = tape.backward(graph.logits, bce.grad);
  return {bce.loss, std::move(grads.parameters)};
}

double mean_loss(const ModelState& state, const std::vector<VideoSample>& videos) {
  if (videos.empty()) throw std::invalid_argument("mean_loss over an empty set");
  double total = 0.0;
  for (const auto& v : videos) {
    Tape tape;
    const Matrix* att = state.config.use_attention() ? &v.attention : nullptr;
    auto graph = record_forward(tape, state, v.main, att);
    total += bce_multilabel(tape.value(graph.logits), v.labels).loss;
  }
  return total / static_cast<double>(videos.size());
}

FitResult fit(ModelState model, const std::vector<VideoSample>& train,
              const std::vector<VideoSample>* heldout, const TrainConfig& config,
              AdamState adam, PlateauSchedule schedule, const EpochCallback& on_epoch,
              std::ostream* log_out) {
  if (config.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (train.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& v : train) check_sample(v, model.config);
  if (heldout)
    for (const auto& v : *heldout) check_sample(v, model.config);
  if (config.monitor == Monitor::heldout_loss && (heldout == nullptr || heldout->empty()))
    throw std::invalid_argument("held-out monitoring requires a non-empty held-out set");
  if (adam.first_moment.size() != model.parameters().size())
    adam = AdamState(static_cast<const ModelState&>(model).parameters(), adam.options);

  FitResult result;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    adam.options.lr = schedule.lr();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<Kernel> batch_grads;
      for (std::size_t i = start; i < stop; ++i) {
        auto lg = video_loss_and_gradient(model, train[order[i]], true, rng);
        epoch_loss += lg.loss;
        if (batch_grads.empty()) {
          batch_grads = std::move(lg.grads);
        } else {
          for (std::size_t p = 0; p < batch_grads.size(); ++p) {
            batch_grads[p].weights += lg.grads[p].weights;
            batch_grads[p].bias += lg.grads[p].bias;
          }
        }
      }
      adam.step(model.parameters(), batch_grads);
      ++result.optimizer_steps;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.lr = adam.options.lr;
    record.train_loss = epoch_loss / static_cast<double>(train.size());
    if (heldout && !heldout->empty()) record.heldout_loss = mean_loss(model, *heldout);
    schedule.update(config.monitor == Monitor::heldout_loss ? *record.heldout_loss
                                                            : record.train_loss);
    result.log.push_back(record);
    if (log_out) *log_out << format_log_line(record) << '\n' << std::flush;
    if (on_epoch && on_epoch(record, model)) break;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace agnet
