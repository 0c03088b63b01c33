#pragma once

// Attention-guided dilated temporal convolution network and its ablations.
//
// Main stream (SD-TCN), per block i with dilation d_i:
//   F^B_{i+1} = F^B_i + ReLU(Conv(F^B_i, k, d_i)) o A_i
// Attention stream, at width beta*C2:
//   h_i       = ReLU(Conv(F^A_i, k, d_i))
//   F^A_{i+1} = F^A_i + h_i
//   A_i       = Sigmoid(W_i h_i)
// Classifier: P = Sigmoid(W' F^B_{n+1}).

#include "agnet/tensorops.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace agnet {

using Matrix = TimeMatrix<double>;
using Kernel = ConvKernel<double>;
using Tape = GradTape<double>;

enum class ModelKind { agnet, sdtcn, bottleneck };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct AGNetConfig {
  ModelKind kind = ModelKind::agnet;
  int n_blocks = 5;
  int kernel_size = 3;
  /// Per-block dilations; empty means 2^(i-1) for block i = 1..n_blocks.
  std::vector<int> dilations;
  int input_channels = 1024;
  int attention_input_channels = 256;
  int hidden_channels = 512;
  double beta = 0.125;
  int n_classes = 51;
  double dropout_p = 0.5;

  bool use_attention() const { return kind == ModelKind::agnet; }
  /// round(beta * hidden_channels), at least 1.
  int attention_channels() const;
  /// Dilation of block `block` (0-based).
  int dilation(int block) const;
  /// Receptive field of the whole main stream, in time steps.
  Index receptive_field() const;

  void validate() const;

  /// "key=value" lines; doubles are printed with round-trip precision.
  std::string to_text() const;
  static AGNetConfig from_text(std::string_view text);

  bool operator==(const AGNetConfig&) const = default;
};

struct AGNetBlock {
  Kernel main_conv;  // C2 -> C2, k, d_i
  Kernel att_conv;   // bC2 -> bC2, k, d_i
  Kernel att_proj;   // W_i: bC2 -> C2, k = 1
};

/// All learnable weights. Which kernels exist depends on config.kind:
/// bottleneck keeps only `classifier` (C_in -> C3); sdtcn drops the attention
/// stream.
struct ModelState {
  AGNetConfig config;
  Kernel main_in;     // C_in -> C2
  Kernel att_in;      // C_in_att -> bC2
  std::vector<AGNetBlock> blocks;
  Kernel classifier;  // W': C2 -> C3 (or W'': C_in -> C3 for bottleneck)

  /// Present kernels in declaration order: main_in, att_in, then per block
  /// main_conv, att_conv, att_proj, then classifier.
  std::vector<Kernel*> parameters();
  std::vector<const Kernel*> parameters() const;
  Index parameter_count() const;

  bool operator==(const ModelState& o) const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights with fan_in = C_in * k, zero biases.
ModelState init_model(const AGNetConfig& config, std::uint64_t seed);

/// Intermediate maps of one forward pass. Attention-stream maps are empty for
/// models without attention.
struct ForwardTrace {
  std::vector<Matrix> attention_features;  // F^A_1 .. F^A_{n+1}
  std::vector<Matrix> main_features;       // F^B_1 .. F^B_{n+1}
  std::vector<Matrix> attention;           // A_1 .. A_n
  Matrix logits;                           // W' F^B_{n+1}
  Matrix probabilities;                    // Sigmoid(logits)
};

struct ForwardOptions {
  /// Replace every attention map by this constant (mask substitution).
  std::optional<double> attention_override;
  bool training = false;
};

/// Vars of a forward pass recorded on a tape.
struct ForwardGraph {
  std::vector<Var> attention_features;
  std::vector<Var> main_features;
  std::vector<Var> attention;
  Var logits;
};

/// Records the forward pass of `state` on `tape`. `x_att` may be null for
/// models without attention; `rng` is only needed for bottleneck training.
ForwardGraph record_forward(Tape& tape, const ModelState& state, const Matrix& x_main,
                            const Matrix* x_att, const ForwardOptions& options = {},
                            std::mt19937_64* rng = nullptr);

ForwardTrace forward_agnet(const ModelState& state, const Matrix& x_main, const Matrix& x_att,
                           const ForwardOptions& options = {});
ForwardTrace forward_sdtcn(const ModelState& state, const Matrix& x_main);
Matrix forward_bottleneck(const ModelState& state, const Matrix& x_main, bool training,
                          std::mt19937_64& rng);

/// Dispatches on state.config.kind; returns T x C3 probabilities (inference mode).
Matrix predict(const ModelState& state, const Matrix& x_main, const Matrix* x_att);

/// Elementwise mean of two synchronized probability matrices.
Matrix fuse_predictions(const Matrix& p1, const Matrix& p2);

/// Row i = channel mean of A_i per time step (n_blocks x T).
Matrix export_attention(const ForwardTrace& trace);

/// "AGN1" checkpoint: magic, u32 config length + config text, u32 kernel count,
/// then per kernel u32 (C_out, C_in, k, dilation) and little-endian f64
/// weights in [out][in][tap] order followed by the bias.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const ModelState& state);
ModelState deserialize_checkpoint(std::string_view bytes);

}  // namespace agnet
