#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "isfl/data.hpp"
#include "isfl/data_io.hpp"
#include "isfl/errors.hpp"
#include "isfl/rng.hpp"

namespace isfl {

enum class Activation { kRelu, kTanh };

inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ArgumentError("unknown activation '" + s + "' (expected relu or tanh)");
}

/// Softmax classifier; empty `hidden` means multinomial logistic regression.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t classes = 0;
  Activation activation = Activation::kRelu;

  void validate() const {
    detail::require(input_dim > 0, "model: input_dim must be positive");
    detail::require(classes > 0, "model: classes must be positive");
    for (auto h : hidden) detail::require(h > 0, "model: hidden widths must be positive");
  }

  /// Layer widths from input to logits.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(classes);
    return w;
  }

  std::size_t layers() const { return hidden.size() + 1; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct LayerBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const LayerBlock&, const LayerBlock&) = default;
};

/// Flat parameter vector with a per-layer layout. Each layer stores its
/// weight matrix (out x in, row-major) followed by its bias (out x 1).
class ParamVector {
public:
  ParamVector() = default;

  ParamVector(std::vector<double> values, std::vector<LayerBlock> layout)
      : values_(std::move(values)), layout_(std::move(layout)) {
    std::size_t total = 0;
    for (const auto& b : layout_) {
      detail::require(b.offset == total, "param layout blocks must be contiguous");
      total += b.size();
    }
    detail::require(total == values_.size(), "param layout size does not match value count");
  }

  static std::vector<LayerBlock> layout_for(const ModelSpec& spec) {
    spec.validate();
    std::vector<LayerBlock> layout;
    const auto w = spec.widths();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      layout.push_back({"W" + std::to_string(l), w[l + 1], w[l], off});
      off += w[l + 1] * w[l];
      layout.push_back({"b" + std::to_string(l), w[l + 1], 1, off});
      off += w[l + 1];
    }
    return layout;
  }

  static ParamVector zeros(const ModelSpec& spec) {
    auto layout = layout_for(spec);
    const std::size_t n = layout.back().offset + layout.back().size();
    return ParamVector(std::vector<double>(n, 0.0), std::move(layout));
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  const std::vector<LayerBlock>& layout() const { return layout_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  bool same_layout(const ParamVector& o) const { return layout_ == o.layout_; }

  ParamVector& operator+=(const ParamVector& o) {
    check_layout(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  ParamVector& operator-=(const ParamVector& o) {
    check_layout(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  ParamVector& operator*=(double s) {
    for (auto& v : values_) v *= s;
    return *this;
  }
  /// this += s * o
  ParamVector& axpy(double s, const ParamVector& o) {
    check_layout(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * o.values_[i];
    return *this;
  }

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(double s, ParamVector a) { return a *= s; }

  double dot(const ParamVector& o) const {
    check_layout(o);
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * o.values_[i];
    return s;
  }
  double squared_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return s;
  }
  /// Scaled so tiny entries do not underflow.
  double norm() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    if (m == 0.0 || !std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : values_) s += (v / m) * (v / m);
    return m * std::sqrt(s);
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
  void check_layout(const ParamVector& o) const {
    if (!same_layout(o)) throw ArgumentError("param vectors have different layouts");
  }

  std::vector<double> values_;
  std::vector<LayerBlock> layout_;
};

inline double squared_distance(const ParamVector& a, const ParamVector& b) {
  detail::require(a.same_layout(b), "squared_distance: layout mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  auto p = ParamVector::zeros(spec);
  Rng rng = make_rng(seed, {tag(Stream::kInit)});
  for (const auto& b : p.layout()) {
    if (b.cols == 1 && b.name[0] == 'b') continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(b.cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < b.size(); ++i) p[b.offset + i] = u(rng);
  }
  return p;
}

namespace detail {

/// Scratch buffers for one forward/backward pass.
struct Workspace {
  std::vector<std::vector<double>> pre;   // z_l, one per layer
  std::vector<std::vector<double>> post;  // h_l for hidden layers (post[0] unused)
  std::vector<double> delta, next_delta;

  explicit Workspace(const ModelSpec& spec) {
    const auto w = spec.widths();
    pre.resize(spec.layers());
    post.resize(spec.layers());
    for (std::size_t l = 0; l < spec.layers(); ++l) {
      pre[l].resize(w[l + 1]);
      post[l].resize(w[l + 1]);
    }
  }
};

inline void check_compatible(const ModelSpec& spec, const ParamVector& params, const Dataset& ds) {
  if (ds.dim() != spec.input_dim)
    throw ArgumentError("batch dimension " + std::to_string(ds.dim()) + " does not match model input " +
                        std::to_string(spec.input_dim));
  if (ds.classes() > spec.classes) throw ArgumentError("batch has more categories than the model outputs");
  if (params.layout() != ParamVector::layout_for(spec)) throw ArgumentError("params layout does not match model spec");
}

inline double activate(Activation a, double z) { return a == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

inline double activation_slope(Activation a, double z, double h) {
  return a == Activation::kRelu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

/// Forward pass for one sample; fills ws.pre/post and returns the logits row.
inline const std::vector<double>& forward(const ModelSpec& spec, const ParamVector& params,
                                          std::span<const double> x, Workspace& ws) {
  const auto& layout = params.layout();
  const double* theta = params.values().data();
  std::span<const double> in = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const auto& W = layout[2 * l];
    const auto& b = layout[2 * l + 1];
    auto& z = ws.pre[l];
    for (std::size_t r = 0; r < W.rows; ++r) {
      const double* wr = theta + W.offset + r * W.cols;
      double acc = theta[b.offset + r];
      for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * in[c];
      z[r] = acc;
    }
    if (l + 1 < spec.layers()) {
      auto& h = ws.post[l];
      for (std::size_t r = 0; r < z.size(); ++r) h[r] = activate(spec.activation, z[r]);
      in = h;
    }
  }
  return ws.pre.back();
}

/// Cross-entropy of one sample. When `grad` is non-null, adds
/// scale * d(loss)/d(theta) into it.
inline double sample_loss_grad(const ModelSpec& spec, const ParamVector& params, std::span<const double> x, int y,
                               double scale, std::vector<double>* grad, Workspace& ws) {
  const auto& logits = forward(spec, params, x, ws);
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  const double loss = lse - logits[static_cast<std::size_t>(y)];
  if (!grad) return loss;

  const auto& layout = params.layout();
  const double* theta = params.values().data();
  double* g = grad->data();
  auto& delta = ws.delta;
  delta.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) delta[k] = scale * std::exp(logits[k] - lse);
  delta[static_cast<std::size_t>(y)] -= scale;

  for (std::size_t l = spec.layers(); l-- > 0;) {
    const auto& W = layout[2 * l];
    const auto& b = layout[2 * l + 1];
    std::span<const double> in = l == 0 ? x : std::span<const double>(ws.post[l - 1]);
    for (std::size_t r = 0; r < W.rows; ++r) {
      const double d = delta[r];
      g[b.offset + r] += d;
      if (d == 0.0) continue;
      double* gr = g + W.offset + r * W.cols;
      for (std::size_t c = 0; c < W.cols; ++c) gr[c] += d * in[c];
    }
    if (l == 0) break;
    auto& nd = ws.next_delta;
    nd.assign(W.cols, 0.0);
    for (std::size_t r = 0; r < W.rows; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* wr = theta + W.offset + r * W.cols;
      for (std::size_t c = 0; c < W.cols; ++c) nd[c] += wr[c] * d;
    }
    const auto& z = ws.pre[l - 1];
    const auto& h = ws.post[l - 1];
    for (std::size_t c = 0; c < W.cols; ++c) nd[c] *= activation_slope(spec.activation, z[c], h[c]);
    std::swap(delta, nd);
  }
  return loss;
}

}  // namespace detail

/// Mean softmax cross-entropy over the given rows.
inline double forward_loss(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                           std::span<const std::size_t> rows) {
  detail::check_compatible(spec, params, ds);
  detail::require(!rows.empty(), "forward_loss: empty batch");
  detail::Workspace ws(spec);
  double total = 0.0;
  for (std::size_t r : rows) total += detail::sample_loss_grad(spec, params, ds.row(r), ds.label(r), 0.0, nullptr, ws);
  return total / static_cast<double>(rows.size());
}

inline double forward_loss(const ModelSpec& spec, const ParamVector& params, const Dataset& ds) {
  const auto rows = all_rows(ds);
  return forward_loss(spec, params, ds, rows);
}

/// Gradient of the mean loss over `rows`; optionally reports the loss.
inline ParamVector backward_grad(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                                 std::span<const std::size_t> rows, double* loss_out = nullptr) {
  detail::check_compatible(spec, params, ds);
  detail::require(!rows.empty(), "backward_grad: empty batch");
  detail::Workspace ws(spec);
  ParamVector grad = ParamVector::zeros(spec);
  const double scale = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t r : rows)
    total += detail::sample_loss_grad(spec, params, ds.row(r), ds.label(r), scale, &grad.values(), ws);
  if (loss_out) *loss_out = total / static_cast<double>(rows.size());
  return grad;
}

inline ParamVector backward_grad(const ModelSpec& spec, const ParamVector& params, const Dataset& ds) {
  const auto rows = all_rows(ds);
  return backward_grad(spec, params, ds, rows);
}

/// Gradient of the loss of a single row.
inline ParamVector per_sample_grad(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                                   std::size_t row) {
  const std::size_t rows[1] = {row};
  return backward_grad(spec, params, ds, rows);
}

/// Writes the gradient of one row's loss into `out` (resized to params.size()).
/// Skips the compatibility check; callers validate once per batch.
inline double per_sample_grad_into(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                                   std::size_t row, std::vector<double>& out, detail::Workspace& ws) {
  out.assign(params.size(), 0.0);
  return detail::sample_loss_grad(spec, params, ds.row(row), ds.label(row), 1.0, &out, ws);
}

/// Euclidean norm of each row's loss gradient.
inline std::vector<double> per_sample_grad_norms(const ModelSpec& spec, const ParamVector& params,
                                                 const Dataset& ds, std::span<const std::size_t> rows) {
  detail::check_compatible(spec, params, ds);
  detail::Workspace ws(spec);
  std::vector<double> out;
  out.reserve(rows.size());
  std::vector<double> g(params.size());
  for (std::size_t r : rows) {
    std::fill(g.begin(), g.end(), 0.0);
    detail::sample_loss_grad(spec, params, ds.row(r), ds.label(r), 1.0, &g, ws);
    double s = 0.0;
    for (double v : g) s += v * v;
    out.push_back(std::sqrt(s));
  }
  return out;
}

/// params - eta * grad.
inline ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta) {
  detail::require(params.same_layout(grad), "sgd_step: layout mismatch");
  detail::require(eta >= 0.0 && std::isfinite(eta), "sgd_step: eta must be finite and >= 0");
  ParamVector out = params;
  out.axpy(-eta, grad);
  return out;
}

/// Argmax class (lowest index on ties).
inline int predict(const ModelSpec& spec, const ParamVector& params, std::span<const double> x) {
  detail::Workspace ws(spec);
  const auto& logits = detail::forward(spec, params, x, ws);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// ---------------------------------------------------------------------------
// Checkpoints: "ISFLCK1", u32 JSON length, JSON layout descriptor, f64 values (LE).

inline constexpr char kCheckpointMagic[] = "ISFLCK1";

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden", spec.hidden},
          {"classes", spec.classes},
          {"activation", to_string(spec.activation)}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.classes = j.at("classes").get<std::size_t>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  return s;
}

inline void write_checkpoint(std::ostream& os, const ModelSpec& spec, const ParamVector& params) {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& b : params.layout())
    layout.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}, {"offset", b.offset}});
  const std::string header = nlohmann::json{{"spec", spec_to_json(spec)}, {"layout", layout}}.dump();
  os.write(kCheckpointMagic, 7);
  le::put_u32(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (double v : params.values()) le::put_f64(os, v);
  if (!os) throw IoError("write_checkpoint: stream failure");
}

inline std::pair<ModelSpec, ParamVector> read_checkpoint(std::istream& is) {
  char magic[7];
  is.read(magic, 7);
  if (!is || std::memcmp(magic, kCheckpointMagic, 7) != 0) throw IoError("read_checkpoint: bad magic");
  const auto len = le::get_u32(is);
  std::string header(len, '\0');
  is.read(header.data(), len);
  if (!is) throw IoError("read_checkpoint: truncated header");
  try {
    const auto j = nlohmann::json::parse(header);
    ModelSpec spec = spec_from_json(j.at("spec"));
    std::vector<LayerBlock> layout;
    for (const auto& b : j.at("layout"))
      layout.push_back({b.at("name").get<std::string>(), b.at("rows").get<std::size_t>(),
                        b.at("cols").get<std::size_t>(), b.at("offset").get<std::size_t>()});
    std::size_t n = 0;
    for (const auto& b : layout) n += b.size();
    std::vector<double> values(n);
    for (auto& v : values) v = le::get_f64(is);
    ParamVector p(std::move(values), std::move(layout));
    if (!p.same_layout(ParamVector::zeros(spec))) throw IoError("checkpoint layout does not match its spec");
    return {spec, std::move(p)};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("read_checkpoint: bad header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw IoError(std::string("read_checkpoint: ") + e.what());
  }
}

}  // namespace isfl
