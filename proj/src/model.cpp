#include "agnet/model.hpp"

#include "agnet/io.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace agnet {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::agnet: return "agnet";
    case ModelKind::sdtcn: return "sdtcn";
    case ModelKind::bottleneck: return "bottleneck";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "agnet") return ModelKind::agnet;
  if (name == "sdtcn") return ModelKind::sdtcn;
  if (name == "bottleneck") return ModelKind::bottleneck;
  throw std::invalid_argument("unknown model kind '" + std::string(name) +
                              "' (expected agnet, sdtcn or bottleneck)");
}

int AGNetConfig::attention_channels() const {
  return std::max(1, static_cast<int>(std::lround(beta * hidden_channels)));
}

int AGNetConfig::dilation(int block) const {
  if (!dilations.empty()) return dilations.at(static_cast<std::size_t>(block));
  return 1 << block;
}

Index AGNetConfig::receptive_field() const {
  if (kind == ModelKind::bottleneck) return 1;
  Index field = 1;
  for (int i = 0; i < n_blocks; ++i) field += Index(dilation(i)) * (kernel_size - 1);
  return field;
}

void AGNetConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("AGNetConfig: " + what); };
  if (n_classes < 1) fail("n_classes must be >= 1");
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (kind == ModelKind::bottleneck) {
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
    return;
  }
  if (n_blocks < 1) fail("n_blocks must be >= 1");
  if (n_blocks > 30) fail("n_blocks too large");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd and positive");
  if (hidden_channels < 1) fail("hidden_channels must be >= 1");
  if (!dilations.empty() && dilations.size() != static_cast<std::size_t>(n_blocks))
    fail("dilations must list one value per block");
  for (int d : dilations)
    if (d < 1) fail("dilations must be >= 1");
  if (use_attention()) {
    if (!(beta > 0.0 && beta <= 1.0)) fail("beta must be in (0, 1]");
    if (attention_input_channels < 1) fail("attention_input_channels must be >= 1");
  }
}

std::string AGNetConfig::to_text() const {
  std::ostringstream ss;
  ss << "model=" << agnet::to_string(kind) << '\n'
     << "n_blocks=" << n_blocks << '\n'
     << "kernel_size=" << kernel_size << '\n'
     << "dilations=";
  for (std::size_t i = 0; i < dilations.size(); ++i) ss << (i ? "," : "") << dilations[i];
  ss << '\n'
     << "input_channels=" << input_channels << '\n'
     << "attention_input_channels=" << attention_input_channels << '\n'
     << "hidden_channels=" << hidden_channels << '\n'
     << "beta=" << io::format_double(beta) << '\n'
     << "attention_channels=" << attention_channels() << '\n'
     << "n_classes=" << n_classes << '\n'
     << "dropout_p=" << io::format_double(dropout_p) << '\n';
  return ss.str();
}

namespace {

int parse_int(const std::string& key, std::string_view v) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw FormatError("config field " + key + ": not an integer: '" + std::string(v) + "'");
  return out;
}

double parse_double(const std::string& key, std::string_view v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw FormatError("config field " + key + ": not a number: '" + std::string(v) + "'");
  return out;
}

}  // namespace

AGNetConfig AGNetConfig::from_text(std::string_view text) {
  std::map<std::string, std::string> fields;
  for (const auto& line : io::split(text, '\n')) {
    auto t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos) throw FormatError("config line without '=': " + line);
    fields[std::string(io::trim(t.substr(0, eq)))] = std::string(io::trim(t.substr(eq + 1)));
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw FormatError("config missing field " + key);
    return it->second;
  };
  AGNetConfig c;
  c.kind = parse_model_kind(get("model"));
  c.n_blocks = parse_int("n_blocks", get("n_blocks"));
  c.kernel_size = parse_int("kernel_size", get("kernel_size"));
  c.dilations.clear();
  if (const auto& d = get("dilations"); !d.empty())
    for (const auto& part : io::split(d, ',')) c.dilations.push_back(parse_int("dilations", part));
  c.input_channels = parse_int("input_channels", get("input_channels"));
  c.attention_input_channels =
      parse_int("attention_input_channels", get("attention_input_channels"));
  c.hidden_channels = parse_int("hidden_channels", get("hidden_channels"));
  c.beta = parse_double("beta", get("beta"));
  c.n_classes = parse_int("n_classes", get("n_classes"));
  c.dropout_p = parse_double("dropout_p", get("dropout_p"));
  if (auto it = fields.find("attention_channels");
      it != fields.end() && parse_int("attention_channels", it->second) != c.attention_channels())
    throw FormatError("config attention_channels disagrees with beta * hidden_channels");
  c.validate();
  return c;
}

std::vector<Kernel*> ModelState::parameters() {
  std::vector<Kernel*> out;
  if (config.kind != ModelKind::bottleneck) out.push_back(&main_in);
  if (config.use_attention()) out.push_back(&att_in);
  for (auto& b : blocks) {
    out.push_back(&b.main_conv);
    if (config.use_attention()) {
      out.push_back(&b.att_conv);
      out.push_back(&b.att_proj);
    }
  }
  out.push_back(&classifier);
  return out;
}

std::vector<const Kernel*> ModelState::parameters() const {
  auto mut = const_cast<ModelState*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Index ModelState::parameter_count() const {
  Index n = 0;
  for (const auto* k : parameters()) n += k->parameter_count();
  return n;
}

bool ModelState::operator==(const ModelState& o) const {
  if (!(config == o.config)) return false;
  auto a = parameters();
  auto b = o.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i] == *b[i])) return false;
  return true;
}

namespace {

Kernel random_kernel(Index out, Index in, Index k, Index d, std::mt19937_64& rng) {
  Kernel kern = Kernel::zeros(out, in, k, d);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (Index i = 0; i < kern.weights.size(); ++i) kern.weights.data()[i] = uniform(rng);
  return kern;
}

}  // namespace

ModelState init_model(const AGNetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelState s;
  s.config = config;
  const Index c2 = config.hidden_channels;
  const Index ca = config.attention_channels();
  const Index k = config.kernel_size;
  if (config.kind == ModelKind::bottleneck) {
    s.classifier = random_kernel(config.n_classes, config.input_channels, 1, 1, rng);
    return s;
  }
  s.main_in = random_kernel(c2, config.input_channels, 1, 1, rng);
  if (config.use_attention())
    s.att_in = random_kernel(ca, config.attention_input_channels, 1, 1, rng);
  for (int i = 0; i < config.n_blocks; ++i) {
    AGNetBlock b;
    b.main_conv = random_kernel(c2, c2, k, config.dilation(i), rng);
    if (config.use_attention()) {
      b.att_conv = random_kernel(ca, ca, k, config.dilation(i), rng);
      b.att_proj = random_kernel(c2, ca, 1, 1, rng);
    }
    s.blocks.push_back(std::move(b));
  }
  s.classifier = random_kernel(config.n_classes, c2, 1, 1, rng);
  return s;
}

namespace {

void check_input(const Matrix& x, Index channels, const char* stream) {
  if (x.rows() < 1) throw ShapeError(std::string(stream) + " input has no time steps");
  if (x.cols() != channels)
    throw ShapeError(std::string(stream) + " input has " + std::to_string(x.cols()) +
                     " channels, model expects " + std::to_string(channels));
}

}  // namespace

ForwardGraph record_forward(Tape& tape, const ModelState& state, const Matrix& x_main,
                            const Matrix* x_att, const ForwardOptions& options,
                            std::mt19937_64* rng) {
  const AGNetConfig& cfg = state.config;
  check_input(x_main, cfg.input_channels, "main-stream");
  ForwardGraph g;

  if (cfg.kind == ModelKind::bottleneck) {
    Var x = tape.input(x_main);
    if (options.training && cfg.dropout_p > 0.0) {
      if (rng == nullptr) throw std::invalid_argument("bottleneck training requires an rng");
      x = tape.dropout(x, cfg.dropout_p, true, *rng);
    }
    g.logits = tape.pointwise(x, tape.parameter(state.classifier));
    return g;
  }

  const bool attend = cfg.use_attention();
  if (attend) {
    if (x_att == nullptr) throw std::invalid_argument("AGNet forward requires attention-stream input");
    check_input(*x_att, cfg.attention_input_channels, "attention-stream");
    if (x_att->rows() != x_main.rows())
      throw ShapeError("stream lengths differ: main T=" + std::to_string(x_main.rows()) +
                       ", attention T=" + std::to_string(x_att->rows()));
  }

  Var fb = tape.pointwise(tape.input(x_main), tape.parameter(state.main_in));
  g.main_features.push_back(fb);
  Var fa{};
  if (attend) {
    fa = tape.pointwise(tape.input(*x_att), tape.parameter(state.att_in));
    g.attention_features.push_back(fa);
  }

  for (int i = 0; i < cfg.n_blocks; ++i) {
    const AGNetBlock& block = state.blocks.at(static_cast<std::size_t>(i));
    Var increment = tape.relu(tape.conv_same(fb, tape.parameter(block.main_conv)));
    if (attend) {
      Var h = tape.relu(tape.conv_same(fa, tape.parameter(block.att_conv)));
      fa = tape.add(fa, h);
      g.attention_features.push_back(fa);
      Var a = tape.sigmoid(tape.pointwise(h, tape.parameter(block.att_proj)));
      if (options.attention_override) {
        const Matrix& av = tape.value(a);
        a = tape.input(Matrix::Constant(av.rows(), av.cols(), *options.attention_override));
      }
      g.attention.push_back(a);
      increment = tape.hadamard(increment, a);
    } else if (options.attention_override) {
      const Matrix& iv = tape.value(increment);
      Var a = tape.input(Matrix::Constant(iv.rows(), iv.cols(), *options.attention_override));
      g.attention.push_back(a);
      increment = tape.hadamard(increment, a);
    }
    fb = tape.add(fb, increment);
    g.main_features.push_back(fb);
  }
  g.logits = tape.pointwise(fb, tape.parameter(state.classifier));
  return g;
}

namespace {

ForwardTrace collect(const Tape& tape, const ForwardGraph& g) {
  ForwardTrace t;
  for (Var v : g.attention_features) t.attention_features.push_back(tape.value(v));
  for (Var v : g.main_features) t.main_features.push_back(tape.value(v));
  for (Var v : g.attention) t.attention.push_back(tape.value(v));
  t.logits = tape.value(g.logits);
  t.probabilities = sigmoid(t.logits);
  return t;
}

}  // namespace

ForwardTrace forward_agnet(const ModelState& state, const Matrix& x_main, const Matrix& x_att,
                           const ForwardOptions& options) {
  if (state.config.kind != ModelKind::agnet)
    throw std::invalid_argument("forward_agnet requires an agnet model, got " +
                                to_string(state.config.kind));
  Tape tape;
  auto g = record_forward(tape, state, x_main, &x_att, options);
  return collect(tape, g);
}

ForwardTrace forward_sdtcn(const ModelState& state, const Matrix& x_main) {
  if (state.config.kind == ModelKind::bottleneck)
    throw std::invalid_argument("forward_sdtcn requires a model with a temporal stream");
  // Same weights, attention stream ignored.
  ModelState main_only = state;
  main_only.config.kind = ModelKind::sdtcn;
  Tape tape;
  auto g = record_forward(tape, main_only, x_main, nullptr);
  return collect(tape, g);
}

Matrix forward_bottleneck(const ModelState& state, const Matrix& x_main, bool training,
                          std::mt19937_64& rng) {
  if (state.config.kind != ModelKind::bottleneck)
    throw std::invalid_argument("forward_bottleneck requires a bottleneck model");
  Tape tape;
  ForwardOptions options;
  options.training = training;
  auto g = record_forward(tape, state, x_main, nullptr, options, &rng);
  return sigmoid(tape.value(g.logits));
}

Matrix predict(const ModelState& state, const Matrix& x_main, const Matrix* x_att) {
  Tape tape;
  auto g = record_forward(tape, state, x_main, x_att);
  return sigmoid(tape.value(g.logits));
}

Matrix fuse_predictions(const Matrix& p1, const Matrix& p2) {
  if (p1.rows() != p2.rows() || p1.cols() != p2.cols())
    throw ShapeError("cannot fuse predictions of shape " + detail::dims(p1.rows(), p1.cols()) +
                     " and " + detail::dims(p2.rows(), p2.cols()));
  return 0.5 * (p1 + p2);
}

Matrix export_attention(const ForwardTrace& trace) {
  if (trace.attention.empty())
    throw std::invalid_argument("trace holds no attention maps (not an AGNet forward pass)");
  const Index length = trace.attention.front().rows();
  Matrix out(static_cast<Index>(trace.attention.size()), length);
  for (std::size_t i = 0; i < trace.attention.size(); ++i)
    out.row(static_cast<Index>(i)) = trace.attention[i].rowwise().mean().transpose();
  return out;
}

namespace {
constexpr std::string_view kCheckpointMagic = "AGN1";
}

std::string serialize_checkpoint(const ModelState& state) {
  std::string out(kCheckpointMagic);
  const std::string text = state.config.to_text();
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto params = state.parameters();
  io::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Kernel* k : params) {
    io::put_u32(out, static_cast<std::uint32_t>(k->out_channels()));
    io::put_u32(out, static_cast<std::uint32_t>(k->in_channels()));
    io::put_u32(out, static_cast<std::uint32_t>(k->kernel_size));
    io::put_u32(out, static_cast<std::uint32_t>(k->dilation));
    for (Index o = 0; o < k->out_channels(); ++o)
      for (Index c = 0; c < k->in_channels(); ++c)
        for (Index j = 0; j < k->kernel_size; ++j) io::put_f64(out, k->at(o, c, j));
    for (Index o = 0; o < k->bias.size(); ++o) io::put_f64(out, k->bias(o));
  }
  return out;
}

ModelState deserialize_checkpoint(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.take(4, "magic") != kCheckpointMagic) throw FormatError("bad magic: not an AGN1 checkpoint");
  const auto text_len = r.u32("config length");
  const auto text = r.take(text_len, "config text");
  ModelState state = init_model(AGNetConfig::from_text(text), 0);
  auto params = state.parameters();
  const auto count = r.u32("kernel count");
  if (count != params.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " kernels, config implies " +
                      std::to_string(params.size()));
  for (Kernel* k : params) {
    const auto out = r.u32("kernel dims");
    const auto in = r.u32("kernel dims");
    const auto size = r.u32("kernel dims");
    const auto dil = r.u32("kernel dims");
    if (out != k->out_channels() || in != k->in_channels() || size != k->kernel_size ||
        dil != k->dilation)
      throw FormatError("kernel dimensions disagree with config");
    for (Index o = 0; o < k->out_channels(); ++o)
      for (Index c = 0; c < k->in_channels(); ++c)
        for (Index j = 0; j < k->kernel_size; ++j) k->at(o, c, j) = r.f64("kernel weights");
    for (Index o = 0; o < k->bias.size(); ++o) k->bias(o) = r.f64("kernel bias");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  io::write_file_atomic(path, serialize_checkpoint(state));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace agnet
