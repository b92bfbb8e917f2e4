#pragma once

// Minimal neural engine: 1-D convolution, average pooling, dense, ReLU and
// flatten layers with hand-written reverse-mode gradients, composed into
//  * a dense feed-forward net over all features, and
//  * the yield CNN: one convolutional branch whose weights are shared by the
//    six weekly weather series, a dense branch for soil + phenology, and a
//    dense head over the concatenated branch outputs.
// Training is mini-batch Adam on mean squared error. Everything is double.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "yieldbench/common.hpp"
#include "yieldbench/dataio.hpp"

namespace yieldbench::nn {

enum class LayerKind { conv1d, avgpool1d, dense, relu, flatten, concat };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::avgpool1d: return "avgpool1d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

inline std::optional<LayerKind> parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::conv1d, LayerKind::avgpool1d, LayerKind::dense, LayerKind::relu, LayerKind::flatten,
                 LayerKind::concat})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int filters = 0;      // conv1d
  int kernel_size = 0;  // conv1d
  int stride = 1;       // conv1d / avgpool1d
  int window = 0;       // avgpool1d
  int units = 0;        // dense

  static LayerSpec conv(int filters, int kernel, int stride = 1) {
    return {LayerKind::conv1d, filters, kernel, stride, 0, 0};
  }
  static LayerSpec pool(int window, int stride) { return {LayerKind::avgpool1d, 0, 0, stride, window, 0}; }
  static LayerSpec dense(int units) { return {LayerKind::dense, 0, 0, 1, 0, units}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 1, 0, 0}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 1, 0, 0}; }

  bool operator==(const LayerSpec&) const = default;
};

// Valid padding: floor((L - k) / s) + 1, or 0 when the window does not fit.
inline int valid_length(int length, int kernel, int stride) {
  if (length < kernel || kernel < 1 || stride < 1) return 0;
  return (length - kernel) / stride + 1;
}

struct Shape {
  int channels = 1;
  int length = 1;
  int size() const { return channels * length; }
  bool operator==(const Shape&) const = default;
};

// ---------------------------------------------------------------------------
// Layers. Activations are stored channel-major: index = c * length + t.

struct Conv1d {
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, in_len = 0, out_len = 0;
  // params: weights [out][in][k] followed by bias [out]
  std::size_t param_count() const { return static_cast<std::size_t>(out_ch * in_ch * kernel + out_ch); }
  int fan_in() const { return in_ch * kernel; }
  int bias_count() const { return out_ch; }

  void forward(const double* p, const double* in, double* out) const {
    const double* bias = p + out_ch * in_ch * kernel;
    for (int o = 0; o < out_ch; ++o) {
      double* yo = out + o * out_len;
      for (int t = 0; t < out_len; ++t) yo[t] = bias[o];
      for (int c = 0; c < in_ch; ++c) {
        const double* w = p + (o * in_ch + c) * kernel;
        const double* xc = in + c * in_len;
        for (int t = 0; t < out_len; ++t) {
          const double* xt = xc + t * stride;
          double s = 0.0;
          for (int j = 0; j < kernel; ++j) s += w[j] * xt[j];
          yo[t] += s;
        }
      }
    }
  }

  void backward(const double* p, const double* in, const double* dout, double* din, double* dp) const {
    double* dbias = dp + out_ch * in_ch * kernel;
    if (din) std::fill(din, din + in_ch * in_len, 0.0);
    for (int o = 0; o < out_ch; ++o) {
      const double* go = dout + o * out_len;
      for (int t = 0; t < out_len; ++t) dbias[o] += go[t];
      for (int c = 0; c < in_ch; ++c) {
        const double* w = p + (o * in_ch + c) * kernel;
        double* dw = dp + (o * in_ch + c) * kernel;
        const double* xc = in + c * in_len;
        double* dxc = din ? din + c * in_len : nullptr;
        for (int t = 0; t < out_len; ++t) {
          const double g = go[t];
          if (g == 0.0) continue;
          const int base = t * stride;
          for (int j = 0; j < kernel; ++j) dw[j] += g * xc[base + j];
          if (dxc)
            for (int j = 0; j < kernel; ++j) dxc[base + j] += g * w[j];
        }
      }
    }
  }
};

struct AvgPool1d {
  int channels = 0, window = 0, stride = 1, in_len = 0, out_len = 0;
  std::size_t param_count() const { return 0; }

  void forward(const double*, const double* in, double* out) const {
    const double inv = 1.0 / window;
    for (int c = 0; c < channels; ++c)
      for (int t = 0; t < out_len; ++t) {
        double s = 0.0;
        const double* x = in + c * in_len + t * stride;
        for (int j = 0; j < window; ++j) s += x[j];
        out[c * out_len + t] = s * inv;
      }
  }

  void backward(const double*, const double*, const double* dout, double* din, double*) const {
    if (!din) return;
    std::fill(din, din + channels * in_len, 0.0);
    const double inv = 1.0 / window;
    for (int c = 0; c < channels; ++c)
      for (int t = 0; t < out_len; ++t) {
        const double g = dout[c * out_len + t] * inv;
        double* dx = din + c * in_len + t * stride;
        for (int j = 0; j < window; ++j) dx[j] += g;
      }
  }
};

struct Dense {
  int in = 0, out = 0;
  // params: weights [out][in] followed by bias [out]
  std::size_t param_count() const { return static_cast<std::size_t>(out * in + out); }
  int fan_in() const { return in; }
  int bias_count() const { return out; }

  void forward(const double* p, const double* x, double* y) const {
    const double* bias = p + out * in;
    for (int u = 0; u < out; ++u) {
      const double* w = p + u * in;
      double s = bias[u];
      for (int m = 0; m < in; ++m) s += w[m] * x[m];
      y[u] = s;
    }
  }

  void backward(const double* p, const double* x, const double* dout, double* din, double* dp) const {
    double* dbias = dp + out * in;
    if (din) std::fill(din, din + in, 0.0);
    for (int u = 0; u < out; ++u) {
      const double g = dout[u];
      if (g == 0.0) continue;
      dbias[u] += g;
      double* dw = dp + u * in;
      const double* w = p + u * in;
      for (int m = 0; m < in; ++m) dw[m] += g * x[m];
      if (din)
        for (int m = 0; m < in; ++m) din[m] += g * w[m];
    }
  }
};

struct Relu {
  int size = 0;
  std::size_t param_count() const { return 0; }
  void forward(const double*, const double* in, double* out) const {
    for (int i = 0; i < size; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  }
  void backward(const double*, const double* in, const double* dout, double* din, double*) const {
    if (!din) return;
    for (int i = 0; i < size; ++i) din[i] = in[i] > 0.0 ? dout[i] : 0.0;
  }
};

struct Flatten {
  int size = 0;
  std::size_t param_count() const { return 0; }
  void forward(const double*, const double* in, double* out) const { std::copy(in, in + size, out); }
  void backward(const double*, const double*, const double* dout, double* din, double*) const {
    if (din) std::copy(dout, dout + size, din);
  }
};

using Layer = std::variant<Conv1d, AvgPool1d, Dense, Relu, Flatten>;

// ---------------------------------------------------------------------------
// A chain of layers with its parameters stored in one flat vector.

class Sequential {
 public:
  Sequential() = default;

  // `where` names the stack in error messages ("weather_branch", "head", ...).
  Sequential(const std::vector<LayerSpec>& specs, Shape input, const std::string& where)
      : specs_(specs), input_(input) {
    Shape s = input;
    shapes_.push_back(s);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& sp = specs[i];
      const std::string tag = where + " layer " + std::to_string(i + 1) + " (" + std::string(to_string(sp.kind)) + ")";
      switch (sp.kind) {
        case LayerKind::conv1d: {
          if (sp.filters < 1 || sp.kernel_size < 1 || sp.stride < 1) throw Error(tag + ": bad conv parameters");
          const int out = valid_length(s.length, sp.kernel_size, sp.stride);
          if (out < 1)
            throw Error(tag + ": input length " + std::to_string(s.length) + " shorter than kernel " +
                        std::to_string(sp.kernel_size));
          layers_.push_back(Conv1d{s.channels, sp.filters, sp.kernel_size, sp.stride, s.length, out});
          s = {sp.filters, out};
          break;
        }
        case LayerKind::avgpool1d: {
          if (sp.window < 1 || sp.stride < 1) throw Error(tag + ": bad pool parameters");
          const int out = valid_length(s.length, sp.window, sp.stride);
          if (out < 1)
            throw Error(tag + ": input length " + std::to_string(s.length) + " shorter than window " +
                        std::to_string(sp.window));
          layers_.push_back(AvgPool1d{s.channels, sp.window, sp.stride, s.length, out});
          s = {s.channels, out};
          break;
        }
        case LayerKind::dense:
          if (sp.units < 1) throw Error(tag + ": units must be >= 1");
          layers_.push_back(Dense{s.size(), sp.units});
          s = {1, sp.units};
          break;
        case LayerKind::relu: layers_.push_back(Relu{s.size()}); break;
        case LayerKind::flatten:
          layers_.push_back(Flatten{s.size()});
          s = {1, s.size()};
          break;
        case LayerKind::concat: throw Error(tag + ": concat is only valid between branches");
      }
      shapes_.push_back(s);
      offsets_.push_back(param_count_);
      param_count_ += std::visit([](const auto& l) { return l.param_count(); }, layers_.back());
    }
    params_.assign(param_count_, 0.0);
  }

  const std::vector<LayerSpec>& specs() const { return specs_; }
  Shape input_shape() const { return input_; }
  Shape output_shape() const { return shapes_.back(); }
  const std::vector<Shape>& shapes() const { return shapes_; }
  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  std::size_t param_count() const { return param_count_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Uniform in +-sqrt(6 / fan_in) for weights, zero bias.
  void initialize(Rng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv1d> || std::is_same_v<L, Dense>) {
              const double bound = std::sqrt(6.0 / l.fan_in());
              std::uniform_real_distribution<double> u(-bound, bound);
              const std::size_t n_w = l.param_count() - static_cast<std::size_t>(l.bias_count());
              for (std::size_t k = 0; k < n_w; ++k) params_[offsets_[i] + k] = u(rng);
              for (std::size_t k = n_w; k < l.param_count(); ++k) params_[offsets_[i] + k] = 0.0;
            }
          },
          layers_[i]);
    }
  }

  // Per-evaluation storage: activations[0] is the input.
  struct Tape {
    std::vector<std::vector<double>> act;
    std::vector<std::vector<double>> grad;
  };

  Tape make_tape() const {
    Tape t;
    for (const auto& s : shapes_) {
      t.act.emplace_back(static_cast<std::size_t>(s.size()));
      t.grad.emplace_back(static_cast<std::size_t>(s.size()));
    }
    return t;
  }

  void forward(Tape& tape) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      std::visit([&](const auto& l) { l.forward(params_.data() + offsets_[i], tape.act[i].data(), tape.act[i + 1].data()); },
                 layers_[i]);
  }

  // Expects tape.grad.back() to hold dLoss/dOutput; accumulates into `dparams`
  // and leaves dLoss/dInput in tape.grad[0].
  void backward(Tape& tape, std::span<double> dparams) const {
    for (std::size_t i = layers_.size(); i-- > 0;)
      std::visit(
          [&](const auto& l) {
            l.backward(params_.data() + offsets_[i], tape.act[i].data(), tape.grad[i + 1].data(), tape.grad[i].data(),
                       dparams.data() + offsets_[i]);
          },
          layers_[i]);
  }

 private:
  std::vector<LayerSpec> specs_;
  Shape input_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;
  std::size_t param_count_ = 0;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Architectures

struct CnnArchitecture {
  std::vector<LayerSpec> weather_branch;
  std::vector<int> static_units;  // dense widths, each followed by ReLU
  std::vector<int> head_units;    // hidden dense widths (ReLU); a linear 1-unit layer is appended

  bool operator==(const CnnArchitecture&) const = default;
};

struct DenseArchitecture {
  std::vector<int> hidden;  // each followed by ReLU; a linear 1-unit layer is appended
  bool operator==(const DenseArchitecture&) const = default;
};

inline CnnArchitecture default_cnn_architecture() {
  return {{LayerSpec::conv(8, 5, 1), LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::conv(12, 3, 1),
           LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::conv(16, 3, 1), LayerSpec::relu(),
           LayerSpec::flatten()},
          {16, 16},
          {64, 32}};
}

inline DenseArchitecture default_dense_architecture() { return {{64, 32, 16}}; }

// Which table columns feed which network input.
struct InputLayout {
  std::size_t n_features = 0;
  std::vector<std::vector<std::size_t>> weather;  // [variable][week] -> column
  std::vector<std::size_t> statics;               // soil + phenology columns

  int weeks() const { return weather.empty() ? 0 : static_cast<int>(weather[0].size()); }
  bool operator==(const InputLayout&) const = default;
};

inline InputLayout layout_from_descriptors(std::span<const FeatureDescriptor> descriptors) {
  InputLayout lay;
  lay.n_features = descriptors.size();
  int weeks = 0;
  for (const auto& d : descriptors)
    if (d.week_index) weeks = std::max(weeks, *d.week_index);
  lay.weather.assign(kNumWeatherVars, std::vector<std::size_t>(static_cast<std::size_t>(weeks),
                                                               std::numeric_limits<std::size_t>::max()));
  for (std::size_t j = 0; j < descriptors.size(); ++j) {
    const auto& d = descriptors[j];
    if (d.group == FeatureGroup::weather)
      lay.weather[static_cast<std::size_t>(*d.weather_var)][static_cast<std::size_t>(*d.week_index - 1)] = j;
    else
      lay.statics.push_back(j);
  }
  for (const auto& v : lay.weather)
    for (auto c : v)
      if (c == std::numeric_limits<std::size_t>::max())
        throw SchemaError("", "cnn layout: weather columns do not cover every (variable, week)");
  return lay;
}

// ---------------------------------------------------------------------------

class Network {
 public:
  enum class Kind { dense, cnn };

  static Network dense(const DenseArchitecture& arch, std::size_t n_features, std::uint64_t seed) {
    Network net;
    net.kind_ = Kind::dense;
    net.dense_arch_ = arch;
    net.seed_ = seed;
    net.layout_.n_features = n_features;
    std::vector<LayerSpec> specs;
    for (int u : arch.hidden) {
      specs.push_back(LayerSpec::dense(u));
      specs.push_back(LayerSpec::relu());
    }
    specs.push_back(LayerSpec::dense(1));
    net.head_ = Sequential(specs, {1, static_cast<int>(n_features)}, "dense");
    net.initialize();
    return net;
  }

  static Network cnn(const CnnArchitecture& arch, const InputLayout& layout, std::uint64_t seed) {
    if (layout.weather.size() != kNumWeatherVars) throw Error("cnn: layout needs six weather variables");
    Network net;
    net.kind_ = Kind::cnn;
    net.cnn_arch_ = arch;
    net.layout_ = layout;
    net.seed_ = seed;
    net.branch_ = Sequential(arch.weather_branch, {1, layout.weeks()}, "weather_branch");
    std::vector<LayerSpec> st;
    for (int u : arch.static_units) {
      st.push_back(LayerSpec::dense(u));
      st.push_back(LayerSpec::relu());
    }
    net.static_ = Sequential(st, {1, static_cast<int>(layout.statics.size())}, "static_branch");
    std::vector<LayerSpec> head;
    for (int u : arch.head_units) {
      head.push_back(LayerSpec::dense(u));
      head.push_back(LayerSpec::relu());
    }
    head.push_back(LayerSpec::dense(1));
    const int concat = static_cast<int>(kNumWeatherVars) * net.branch_.output_shape().size() +
                       net.static_.output_shape().size();
    net.head_ = Sequential(head, {1, concat}, "head");
    net.initialize();
    return net;
  }

  Kind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  const InputLayout& layout() const { return layout_; }
  const CnnArchitecture& cnn_architecture() const { return cnn_arch_; }
  const DenseArchitecture& dense_architecture() const { return dense_arch_; }
  const Sequential& branch() const { return branch_; }
  const Sequential& static_branch() const { return static_; }
  const Sequential& head() const { return head_; }

  std::size_t param_count() const { return branch_.param_count() + static_.param_count() + head_.param_count(); }

  // Flat parameter views, in the order branch, static, head.
  std::vector<std::span<double>> parameter_blocks() {
    std::vector<std::span<double>> out;
    for (auto* s : {&branch_, &static_, &head_})
      if (s->param_count()) out.emplace_back(s->params());
    return out;
  }

  std::vector<double> flat_parameters() const {
    std::vector<double> out;
    for (const auto* s : {&branch_, &static_, &head_}) out.insert(out.end(), s->params().begin(), s->params().end());
    return out;
  }

  void set_flat_parameters(std::span<const double> p) {
    if (p.size() != param_count()) throw Error("network: parameter count mismatch");
    std::size_t at = 0;
    for (auto* s : {&branch_, &static_, &head_}) {
      std::copy(p.begin() + static_cast<std::ptrdiff_t>(at), p.begin() + static_cast<std::ptrdiff_t>(at + s->param_count()),
                s->params().begin());
      at += s->param_count();
    }
  }

  // Per-sample evaluation state; reusable across samples.
  struct Workspace {
    std::vector<Sequential::Tape> branch;  // one per weather variable
    Sequential::Tape statics;
    Sequential::Tape head;
  };

  Workspace make_workspace() const {
    Workspace w;
    if (kind_ == Kind::cnn) {
      for (std::size_t v = 0; v < kNumWeatherVars; ++v) w.branch.push_back(branch_.make_tape());
      w.statics = static_.make_tape();
    }
    w.head = head_.make_tape();
    return w;
  }

  template <class Row>
  double forward(const Row& x, Workspace& ws) const {
    if (kind_ == Kind::dense) {
      auto& in = ws.head.act[0];
      for (std::size_t j = 0; j < in.size(); ++j) in[j] = x[static_cast<Eigen::Index>(j)];
      head_.forward(ws.head);
      return ws.head.act.back()[0];
    }
    auto& head_in = ws.head.act[0];
    std::size_t at = 0;
    for (std::size_t v = 0; v < kNumWeatherVars; ++v) {
      auto& tape = ws.branch[v];
      const auto& cols = layout_.weather[v];
      for (std::size_t w = 0; w < cols.size(); ++w) tape.act[0][w] = x[static_cast<Eigen::Index>(cols[w])];
      branch_.forward(tape);
      const auto& out = tape.act.back();
      std::copy(out.begin(), out.end(), head_in.begin() + static_cast<std::ptrdiff_t>(at));
      at += out.size();
    }
    for (std::size_t j = 0; j < layout_.statics.size(); ++j)
      ws.statics.act[0][j] = x[static_cast<Eigen::Index>(layout_.statics[j])];
    static_.forward(ws.statics);
    std::copy(ws.statics.act.back().begin(), ws.statics.act.back().end(), head_in.begin() + static_cast<std::ptrdiff_t>(at));
    head_.forward(ws.head);
    return ws.head.act.back()[0];
  }

  // Back-propagates dLoss/dOutput of the last forward() call in `ws` and
  // accumulates parameter gradients (same layout as flat_parameters()).
  void backward(Workspace& ws, double dout, std::span<double> grad) const {
    const std::size_t nb = branch_.param_count();
    const std::size_t ns = static_.param_count();
    ws.head.grad.back()[0] = dout;
    head_.backward(ws.head, grad.subspan(nb + ns));
    if (kind_ == Kind::dense) return;
    const auto& dhead_in = ws.head.grad[0];
    std::size_t at = 0;
    for (std::size_t v = 0; v < kNumWeatherVars; ++v) {
      auto& tape = ws.branch[v];
      auto& g = tape.grad.back();
      std::copy(dhead_in.begin() + static_cast<std::ptrdiff_t>(at), dhead_in.begin() + static_cast<std::ptrdiff_t>(at + g.size()),
                g.begin());
      at += g.size();
      branch_.backward(tape, grad.subspan(0, nb));
    }
    auto& gs = ws.statics.grad.back();
    std::copy(dhead_in.begin() + static_cast<std::ptrdiff_t>(at), dhead_in.begin() + static_cast<std::ptrdiff_t>(at + gs.size()),
              gs.begin());
    static_.backward(ws.statics, grad.subspan(nb, ns));
  }

  Vector predict(const Matrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != layout_.n_features)
      throw DimensionError("network: expected " + std::to_string(layout_.n_features) + " columns, got " +
                           std::to_string(x.cols()));
    auto ws = make_workspace();
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = forward(x.row(i), ws);
    return out;
  }

  // Concatenated branch outputs (the head's input) for one row.
  template <class Row>
  std::vector<double> head_input(const Row& x) const {
    auto ws = make_workspace();
    forward(x, ws);
    return ws.head.act[0];
  }

 private:
  void initialize() {
    Rng rng(seed_);
    branch_.initialize(rng);
    static_.initialize(rng);
    head_.initialize(rng);
  }

  Kind kind_ = Kind::dense;
  CnnArchitecture cnn_arch_;
  DenseArchitecture dense_arch_;
  InputLayout layout_;
  std::uint64_t seed_ = 0;
  Sequential branch_;
  Sequential static_;
  Sequential head_;
};

// ---------------------------------------------------------------------------
// Training

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 20;  // epochs without validation improvement; <= 0 disables early stopping
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(adam.lr > 0.0)) throw Error("train: lr must be > 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw Error("train: validation_fraction must be in [0, 1)");
    if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (max_epochs < 0) throw Error("train: max_epochs must be >= 0");
  }
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, standardized-target MSE
  std::vector<double> val_loss;    // empty without a validation split
  int best_epoch = 0;              // 1-based; 0 when no epoch ran
  bool early_stopped = false;
};

// The network is trained on standardized targets; predictions are mapped back.
struct TrainedNetwork {
  Network net;
  double target_mean = 0.0;
  double target_scale = 1.0;
  TrainHistory history;

  Vector predict(const Matrix& x) const {
    return (net.predict(x).array() * target_scale + target_mean).matrix();
  }
};

class Adam {
 public:
  Adam(std::size_t n, const AdamConfig& c) : c_(c), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double b1t = 1.0 - std::pow(c_.beta1, t_);
    const double b2t = 1.0 - std::pow(c_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * grad[i];
      v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * grad[i] * grad[i];
      params[i] -= c_.lr * (m_[i] / b1t) / (std::sqrt(v_[i] / b2t) + c_.epsilon);
    }
  }

 private:
  AdamConfig c_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

inline double mse_loss(const Network& net, const Matrix& x, const Vector& y, std::span<const std::size_t> rows,
                       Network::Workspace& ws) {
  double s = 0.0;
  for (auto i : rows) {
    const double r = net.forward(x.row(static_cast<Eigen::Index>(i)), ws) - y(static_cast<Eigen::Index>(i));
    s += r * r;
  }
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

inline TrainedNetwork train_network(Network net, const Matrix& x, const Vector& y, const TrainConfig& cfg) {
  cfg.validate();
  if (x.rows() < 1 || x.rows() != y.size()) throw DimensionError("train_network: bad X/y shapes");
  if (static_cast<std::size_t>(x.cols()) != net.layout().n_features)
    throw DimensionError("train_network: column count does not match the network input");

  TrainedNetwork out;
  out.target_mean = y.mean();
  const double sd = std::sqrt((y.array() - out.target_mean).square().mean());
  out.target_scale = sd > 0.0 ? sd : 1.0;
  const Vector ys = (y.array() - out.target_mean) / out.target_scale;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> train_rows = order, val_rows;
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(order.size())));
  if (n_val >= 1 && n_val < order.size()) {
    std::shuffle(order.begin(), order.end(), rng);
    val_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(train_rows.begin(), train_rows.end());
  }

  auto ws = net.make_workspace();
  std::vector<double> params = net.flat_parameters();
  std::vector<double> best = params;
  std::vector<double> grad(params.size());
  Adam adam(params.size(), cfg.adam);
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_rows.begin(), train_rows.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_rows.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(train_rows.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto i = static_cast<Eigen::Index>(train_rows[k]);
        const double r = net.forward(x.row(i), ws) - ys(i);
        epoch_loss += r * r;
        net.backward(ws, 2.0 * r * inv, grad);
      }
      adam.step(params, grad);
      net.set_flat_parameters(params);
    }
    epoch_loss /= static_cast<double>(train_rows.size());
    if (!std::isfinite(epoch_loss))
      throw Error("train_network: loss became non-finite at epoch " + std::to_string(epoch) +
                  "; the learning rate is probably too high");
    out.history.train_loss.push_back(epoch_loss);

    if (val_rows.empty()) {
      out.history.best_epoch = epoch;
      best = params;
      continue;
    }
    const double val = mse_loss(net, x, ys, val_rows, ws);
    out.history.val_loss.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = params;
      out.history.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      out.history.early_stopped = true;
      break;
    }
  }
  if (out.history.best_epoch > 0) net.set_flat_parameters(best);
  out.net = std::move(net);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradientCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t params_checked = 0;
  int nudges = 0;  // input jitters applied to keep ReLU pre-activations off the kink
};

namespace detail {

inline void collect_preactivations(const Sequential& s, const Sequential::Tape& t, double& min_abs) {
  for (std::size_t i = 0; i < s.layer_count(); ++i)
    if (std::holds_alternative<Relu>(s.layer(i)))
      for (double z : t.act[i]) min_abs = std::min(min_abs, std::abs(z));
}

inline double min_relu_margin(const Network& net, const Matrix& x) {
  auto ws = net.make_workspace();
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    net.forward(x.row(i), ws);
    for (const auto& t : ws.branch) collect_preactivations(net.branch(), t, m);
    if (net.kind() == Network::Kind::cnn) collect_preactivations(net.static_branch(), ws.statics, m);
    collect_preactivations(net.head(), ws.head, m);
  }
  return m;
}

}  // namespace detail

// Compares analytic gradients of the batch MSE with central differences
// (f(p + h) - f(p - h)) / 2h for every parameter. Relative error is
// |a - n| / max(|a|, |n|, 1e-7). Before checking, batch inputs are jittered
// (seeded) until every ReLU pre-activation is at least `kink_margin` from 0,
// so that no perturbation crosses a kink.
inline GradientCheck finite_difference_check(Network net, Matrix x, const Vector& y, double h = 1e-5,
                                             double kink_margin = 1e-3, std::uint64_t seed = 7) {
  GradientCheck out;
  Rng rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.05);
  while (detail::min_relu_margin(net, x) < kink_margin) {
    if (++out.nudges > 1000) throw Error("finite_difference_check: could not move inputs off ReLU kinks");
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) += jitter(rng);
  }

  auto ws = net.make_workspace();
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<double> params = net.flat_parameters();
  std::vector<double> grad(params.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (auto i : rows) {
    const auto r = net.forward(x.row(static_cast<Eigen::Index>(i)), ws) - y(static_cast<Eigen::Index>(i));
    net.backward(ws, 2.0 * r * inv, grad);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double orig = params[k];
    params[k] = orig + h;
    net.set_flat_parameters(params);
    const double up = mse_loss(net, x, y, rows, ws);
    params[k] = orig - h;
    net.set_flat_parameters(params);
    const double down = mse_loss(net, x, y, rows, ws);
    params[k] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double abs_err = std::abs(numeric - grad[k]);
    const double rel = abs_err / std::max({std::abs(numeric), std::abs(grad[k]), 1e-7});
    out.max_abs_error = std::max(out.max_abs_error, abs_err);
    out.max_rel_error = std::max(out.max_rel_error, rel);
    ++out.params_checked;
  }
  return out;
}

}  // namespace yieldbench::nn
