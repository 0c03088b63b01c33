#include "agnet/model.hpp"
#include "agnet/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace agnet;

namespace {

AGNetConfig small_config(ModelKind kind = ModelKind::agnet) {
  AGNetConfig c;
  c.kind = kind;
  c.input_channels = 6;
  c.attention_input_channels = 4;
  c.hidden_channels = 8;
  c.beta = 0.5;
  c.n_classes = 3;
  return c;
}

Matrix random_matrix(Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// First and last time step whose output differs from `base`.
std::pair<Index, Index> changed_span(const Matrix& base, const Matrix& other) {
  Index lo = -1, hi = -1;
  for (Index t = 0; t < base.rows(); ++t)
    if (base.row(t) != other.row(t)) {
      if (lo < 0) lo = t;
      hi = t;
    }
  return {lo, hi};
}

}  // namespace

TEST(Config, Defaults) {
  const AGNetConfig c;
  EXPECT_EQ(c.n_blocks, 5);
  EXPECT_EQ(c.kernel_size, 3);
  EXPECT_EQ(c.hidden_channels, 512);
  EXPECT_EQ(c.attention_channels(), 64);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(c.dilation(i), 1 << i);
  EXPECT_EQ(c.receptive_field(), 63);
}

TEST(Config, AttentionWidthRounding) {
  AGNetConfig c;
  c.hidden_channels = 10;
  c.beta = 0.125;  // 1.25 -> 1
  EXPECT_EQ(c.attention_channels(), 1);
  c.beta = 0.01;  // 0.1 -> minimum 1
  EXPECT_EQ(c.attention_channels(), 1);
  c.beta = 0.35;  // 3.5 -> 4
  EXPECT_EQ(c.attention_channels(), 4);
}

TEST(Config, Validation) {
  AGNetConfig c;
  c.kernel_size = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.n_classes = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.dilations = {1, 2};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.dilations = {1, 2, 0, 8, 16};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.dilations = {1, 1, 3, 3, 5};
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.dilation(2), 3);
}

TEST(Config, TextRoundTrip) {
  AGNetConfig c = small_config(ModelKind::sdtcn);
  c.dilations = {1, 3, 9, 27, 81};
  EXPECT_EQ(AGNetConfig::from_text(c.to_text()), c);
  EXPECT_THROW(AGNetConfig::from_text("kind=agnet\nbogus=1\n"), std::exception);
}

TEST(ModelKind, Names) {
  for (auto k : {ModelKind::agnet, ModelKind::sdtcn, ModelKind::bottleneck})
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("tcn"), std::invalid_argument);
}

TEST(Init, ParameterCountByHand) {
  const AGNetConfig c = small_config();
  // main_in 6->8, att_in 4->4, per block 8x8x3 + 4x4x3 + 4->8, classifier 8->3.
  const Index per_block = (8 * 8 * 3 + 8) + (4 * 4 * 3 + 4) + (8 * 4 + 8);
  const Index want = (8 * 6 + 8) + (4 * 4 + 4) + 5 * per_block + (3 * 8 + 3);
  EXPECT_EQ(init_model(c, 1).parameter_count(), want);
  EXPECT_EQ(init_model(c, 2).parameter_count(), want);

  AGNetConfig b = small_config(ModelKind::bottleneck);
  EXPECT_EQ(init_model(b, 0).parameter_count(), 3 * 6 + 3);
}

TEST(Init, DeterministicWithZeroBias) {
  const AGNetConfig c = small_config();
  const ModelState a = init_model(c, 42), b = init_model(c, 42), other = init_model(c, 43);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == other);
  for (const Kernel* k : a.parameters()) EXPECT_TRUE(k->bias.isZero(0));
}

TEST(Init, WeightMeanWithinThreeSigma) {
  AGNetConfig c;
  c.input_channels = 64;
  c.attention_input_channels = 16;
  c.hidden_channels = 32;
  c.beta = 0.25;
  c.n_classes = 8;
  const ModelState s = init_model(c, 7);
  // Each kernel's weights are uniform on +-1/sqrt(fan_in): variance bound^2 / 3.
  double sum = 0.0, var_of_sum = 0.0;
  Index n = 0;
  for (const Kernel* k : s.parameters()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(k->weights.cols()));
    EXPECT_LE(k->weights.cwiseAbs().maxCoeff(), bound);
    sum += k->weights.sum();
    var_of_sum += static_cast<double>(k->weights.size()) * bound * bound / 3.0;
    n += k->weights.size();
  }
  ASSERT_GE(n, 10000);
  EXPECT_LE(std::abs(sum), 3.0 * std::sqrt(var_of_sum));
}

TEST(Forward, ShapesAndBounds) {
  const ModelState s = init_model(small_config(), 3);
  for (Index T : {1, 2, 17}) {
    const auto tr = forward_agnet(s, random_matrix(T, 6, T), random_matrix(T, 4, T + 100));
    EXPECT_EQ(tr.probabilities.rows(), T);
    EXPECT_EQ(tr.probabilities.cols(), 3);
    EXPECT_EQ(tr.attention.size(), 5u);
    EXPECT_EQ(tr.main_features.size(), 6u);
    EXPECT_EQ(tr.attention_features.size(), 6u);
    for (const auto& a : tr.attention) {
      EXPECT_EQ(a.cols(), 8);
      EXPECT_GT(a.minCoeff(), 0.0);
      EXPECT_LT(a.maxCoeff(), 1.0);
    }
    EXPECT_GT(tr.probabilities.minCoeff(), 0.0);
    EXPECT_LT(tr.probabilities.maxCoeff(), 1.0);
  }
}

TEST(Forward, ZeroProjectionGivesHalfAttention) {
  ModelState s = init_model(small_config(), 5);
  for (auto& b : s.blocks) {
    b.att_proj.weights.setZero();
    b.att_proj.bias.setZero();
  }
  const Matrix x = random_matrix(20, 6, 1), xa = random_matrix(20, 4, 2);
  const auto tr = forward_agnet(s, x, xa);
  for (const auto& a : tr.attention) EXPECT_TRUE((a.array() == 0.5).all());
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    const Kernel& k = s.blocks[i].main_conv;
    const Matrix full = relu(conv1d_dilated(tr.main_features[i], k, k.same_padding()));
    const Matrix step = tr.main_features[i + 1] - tr.main_features[i];
    EXPECT_TRUE(step.isApprox(0.5 * full, 1e-12));
  }
}

TEST(Forward, MaskUnityMatchesSdtcnBitExactly) {
  const ModelState s = init_model(small_config(), 9);
  const Matrix x = random_matrix(40, 6, 3), xa = random_matrix(40, 4, 4);
  ForwardOptions ones;
  ones.attention_override = 1.0;
  const auto agnet = forward_agnet(s, x, xa, ones);
  const auto sdtcn = forward_sdtcn(s, x);
  EXPECT_EQ(agnet.logits, sdtcn.logits);
  EXPECT_EQ(agnet.probabilities, sdtcn.probabilities);
}

TEST(Forward, TemporalLocality) {
  const ModelState s = init_model(small_config(), 11);
  const Index T = 100;
  const Matrix x = random_matrix(T, 6, 5), xa = random_matrix(T, 4, 6);
  const Matrix base = forward_agnet(s, x, xa).probabilities;
  const Matrix base_sd = forward_sdtcn(s, x).probabilities;
  for (Index t : {0, 31, 50, 70, 99}) {
    Matrix xp = x;
    xp.row(t).array() += 1.0;
    auto [lo, hi] = changed_span(base, forward_agnet(s, xp, xa).probabilities);
    EXPECT_GE(lo, std::max<Index>(0, t - 31));
    EXPECT_LE(hi, std::min<Index>(T - 1, t + 31));
    if (t == 50) {
      EXPECT_EQ(lo, 19);
      EXPECT_EQ(hi, 81);
    }
    auto [slo, shi] = changed_span(base_sd, forward_sdtcn(s, xp).probabilities);
    EXPECT_GE(slo, std::max<Index>(0, t - 31));
    EXPECT_LE(shi, std::min<Index>(T - 1, t + 31));

    Matrix xap = xa;
    xap.row(t).array() += 1.0;
    auto [alo, ahi] = changed_span(base, forward_agnet(s, x, xap).probabilities);
    EXPECT_GE(alo, std::max<Index>(0, t - 31));
    EXPECT_LE(ahi, std::min<Index>(T - 1, t + 31));
  }
}

TEST(Forward, TimeShiftEquivarianceAwayFromBorders) {
  const ModelState s = init_model(small_config(), 13);
  const Index T = 120, shift = 9;
  const Matrix x = random_matrix(T + shift, 6, 7), xa = random_matrix(T + shift, 4, 8);
  const Matrix p0 = forward_agnet(s, x.topRows(T), xa.topRows(T)).probabilities;
  const Matrix p1 = forward_agnet(s, x.bottomRows(T), xa.bottomRows(T)).probabilities;
  // p1[t] sees the input p0 sees at t + shift.
  for (Index t = 32; t + shift < T - 32; ++t) EXPECT_EQ(p1.row(t), p0.row(t + shift)) << t;
}

TEST(Forward, Deterministic) {
  const ModelState s = init_model(small_config(), 1);
  const Matrix x = random_matrix(30, 6, 1), xa = random_matrix(30, 4, 2);
  EXPECT_EQ(forward_agnet(s, x, xa).probabilities, forward_agnet(s, x, xa).probabilities);
}

TEST(Forward, InputErrors) {
  const ModelState s = init_model(small_config(), 1);
  EXPECT_THROW(forward_agnet(s, random_matrix(10, 5, 1), random_matrix(10, 4, 1)), ShapeError);
  EXPECT_THROW(forward_agnet(s, random_matrix(10, 6, 1), random_matrix(9, 4, 1)), ShapeError);
  EXPECT_THROW(predict(s, random_matrix(10, 6, 1), nullptr), std::invalid_argument);
  const ModelState b = init_model(small_config(ModelKind::bottleneck), 1);
  EXPECT_THROW(forward_sdtcn(b, random_matrix(10, 6, 1)), std::invalid_argument);
}

TEST(Bottleneck, PointwiseAndInference) {
  const ModelState s = init_model(small_config(ModelKind::bottleneck), 2);
  std::mt19937_64 rng(0);
  const Matrix x = random_matrix(25, 6, 9);
  const Matrix base = forward_bottleneck(s, x, false, rng);
  Matrix xp = x;
  xp.row(12).array() += 2.0;
  auto [lo, hi] = changed_span(base, forward_bottleneck(s, xp, false, rng));
  EXPECT_EQ(lo, 12);
  EXPECT_EQ(hi, 12);
  EXPECT_EQ(forward_bottleneck(s, x, false, rng), predict(s, x, nullptr));
  EXPECT_NE(forward_bottleneck(s, x, true, rng), base);

  ModelState z = s;
  z.classifier.weights.setZero();
  EXPECT_TRUE((forward_bottleneck(z, x, false, rng).array() == 0.5).all());
}

TEST(Fuse, Properties) {
  const Matrix p = sigmoid(random_matrix(5, 3, 1)), q = sigmoid(random_matrix(5, 3, 2));
  EXPECT_EQ(fuse_predictions(p, p), p);
  EXPECT_EQ(fuse_predictions(p, q), fuse_predictions(q, p));
  EXPECT_EQ(fuse_predictions(Matrix::Constant(1, 1, 0.2), Matrix::Constant(1, 1, 0.8))(0, 0), 0.5);
  EXPECT_THROW(fuse_predictions(p, Matrix::Zero(4, 3)), ShapeError);
}

TEST(ExportAttention, ChannelMeans) {
  ForwardTrace tr;
  Matrix a(2, 2);
  a << 0.2, 0.4, 0.6, 0.8;
  tr.attention = {a, Matrix::Constant(2, 2, 0.5)};
  const Matrix e = export_attention(tr);
  ASSERT_EQ(e.rows(), 2);
  ASSERT_EQ(e.cols(), 2);
  EXPECT_DOUBLE_EQ(e(0, 0), 0.3);
  EXPECT_DOUBLE_EQ(e(0, 1), 0.7);
  EXPECT_TRUE((e.row(1).array() == 0.5).all());
  EXPECT_THROW(export_attention(ForwardTrace{}), std::invalid_argument);
}

TEST(ExportAttention, ShapeFromModel) {
  const ModelState s = init_model(small_config(), 4);
  const auto e = export_attention(forward_agnet(s, random_matrix(33, 6, 1), random_matrix(33, 4, 1)));
  EXPECT_EQ(e.rows(), 5);
  EXPECT_EQ(e.cols(), 33);
  EXPECT_GT(e.minCoeff(), 0.0);
  EXPECT_LT(e.maxCoeff(), 1.0);
}

TEST(Checkpoint, RoundTripBitExact) {
  for (auto kind : {ModelKind::agnet, ModelKind::sdtcn, ModelKind::bottleneck}) {
    const ModelState s = init_model(small_config(kind), 21);
    const std::string bytes = serialize_checkpoint(s);
    EXPECT_EQ(bytes.substr(0, 4), "AGN1");
    const ModelState back = deserialize_checkpoint(bytes);
    EXPECT_TRUE(back == s);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
  }
  const auto path = std::filesystem::temp_directory_path() / "agnet_model_test.agn";
  const ModelState s = init_model(small_config(), 8);
  save_checkpoint(path, s);
  EXPECT_TRUE(load_checkpoint(path) == s);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruption) {
  const std::string bytes = serialize_checkpoint(init_model(small_config(), 1));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.agn"), std::exception);
}
