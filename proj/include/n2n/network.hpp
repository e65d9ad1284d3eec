#pragma once

// Fully connected SDF network R^3 -> (-1, 1) with a tanh output.
//
// The input gradient is evaluated as an explicit forward computation (the
// backprop recursion written out as primal formulas) and recorded on the
// tape next to the activations. A single reverse sweep over this extended
// graph then yields exact parameter gradients for any loss built from both
// f(q) and grad_q f(q).

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "n2n/core.hpp"

namespace n2n {

enum class Activation : std::uint8_t { Softplus = 1, Relu = 2, Tanh = 3 };
enum class OutputActivation : std::uint8_t { Tanh = 1 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Softplus: return "softplus";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "softplus") return Activation::Softplus;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  fail(ErrorKind::InvalidInput, "unknown activation '" + s + "'");
}

using ParamVector = Eigen::VectorXd;
using ParamGradients = Eigen::VectorXd;

struct SdfNetwork {
  std::vector<int> layer_widths;  // 3, hidden..., 1
  Activation hidden = Activation::Softplus;
  OutputActivation output = OutputActivation::Tanh;
  double softplus_beta = 100.0;
  ParamVector params;  // per layer: W (out x in, column major) then b

  std::size_t num_layers() const { return layer_widths.size() - 1; }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l)
      off += static_cast<std::size_t>(layer_widths[l + 1]) * (layer_widths[l] + 1);
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + static_cast<std::size_t>(layer_widths[layer + 1]) * layer_widths[layer];
  }

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const {
    return {params.data() + weight_offset(l), layer_widths[l + 1], layer_widths[l]};
  }
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t l) {
    return {params.data() + weight_offset(l), layer_widths[l + 1], layer_widths[l]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
    return {params.data() + bias_offset(l), layer_widths[l + 1]};
  }
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l) { return {params.data() + bias_offset(l), layer_widths[l + 1]}; }
};

inline std::size_t param_count(const std::vector<int>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += static_cast<std::size_t>(widths[l + 1]) * (widths[l] + 1);
  return n;
}

inline void validate_architecture(const std::vector<int>& widths) {
  require(widths.size() >= 3, "network needs at least one hidden layer");
  require(widths.front() == 3 && widths.back() == 1, "network must map R^3 to R");
  for (int w : widths) require(w >= 1, "layer widths must be positive");
}

struct NetworkSpec {
  int hidden_layers = 8;
  int hidden_width = 256;
  Activation hidden = Activation::Softplus;
  double softplus_beta = 100.0;
};

/// Uniform fan-in scaled initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// for weights and biases alike.
inline SdfNetwork init_network(const NetworkSpec& spec, std::uint64_t seed) {
  require(spec.hidden_layers >= 1 && spec.hidden_width >= 1, "need hidden_layers >= 1 and hidden_width >= 1");
  require(spec.softplus_beta > 0.0, "softplus beta must be positive");
  SdfNetwork net;
  net.layer_widths.push_back(3);
  for (int i = 0; i < spec.hidden_layers; ++i) net.layer_widths.push_back(spec.hidden_width);
  net.layer_widths.push_back(1);
  net.hidden = spec.hidden;
  net.softplus_beta = spec.softplus_beta;
  net.params.resize(static_cast<Eigen::Index>(param_count(net.layer_widths)));

  Rng rng = make_rng(seed, streams::kNetworkInit);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.layer_widths[l]));
    std::uniform_real_distribution<double> uni(-bound, bound);
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uni(rng);
    auto b = net.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = uni(rng);
  }
  return net;
}

inline SdfNetwork init_network(int hidden_layers, int hidden_width, std::uint64_t seed) {
  NetworkSpec spec;
  spec.hidden_layers = hidden_layers;
  spec.hidden_width = hidden_width;
  return init_network(spec, seed);
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace detail {

// Writes sigma(z), sigma'(z), sigma''(z).
inline void activate(Activation act, double beta, const Eigen::MatrixXd& z, Eigen::MatrixXd& h, Eigen::MatrixXd& d1,
                     Eigen::MatrixXd& d2) {
  h.resizeLike(z);
  d1.resizeLike(z);
  d2.resizeLike(z);
  const Eigen::Index n = z.size();
  const double* zp = z.data();
  double* hp = h.data();
  double* d1p = d1.data();
  double* d2p = d2.data();
  switch (act) {
    case Activation::Softplus:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double t = beta * zp[i];
        // log1p(exp(t)) without overflow
        hp[i] = (t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t))) / beta;
        const double s = t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
        d1p[i] = s;
        d2p[i] = beta * s * (1.0 - s);
      }
      break;
    case Activation::Relu:
      for (Eigen::Index i = 0; i < n; ++i) {
        hp[i] = zp[i] > 0 ? zp[i] : 0.0;
        d1p[i] = zp[i] > 0 ? 1.0 : 0.0;
        d2p[i] = 0.0;
      }
      break;
    case Activation::Tanh:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double t = std::tanh(zp[i]);
        hp[i] = t;
        d1p[i] = 1.0 - t * t;
        d2p[i] = -2.0 * t * (1.0 - t * t);
      }
      break;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

class Tape;
inline Tape record(const SdfNetwork& net, const Eigen::Matrix3Xd& queries);
inline ParamGradients backward_params(const SdfNetwork& net, const Tape& t);

/// Primal record of one batched evaluation (columns are queries) plus the
/// adjoint seeds of the scalar loss built on top of it. The loss is defined
/// by its adjoints: dloss/df for every value and dloss/dg for every input
/// gradient.
class Tape {
 public:
  Eigen::Index batch() const { return values_.cols(); }
  const Eigen::RowVectorXd& values() const { return values_; }
  const Eigen::Matrix3Xd& input_gradients() const { return grads_; }

  void seed(Eigen::RowVectorXd value_adjoint, Eigen::Matrix3Xd gradient_adjoint) {
    require(value_adjoint.cols() == batch() && gradient_adjoint.cols() == batch(), "adjoint seed has wrong batch size");
    value_bar_ = std::move(value_adjoint);
    grad_bar_ = std::move(gradient_adjoint);
    seeded_ = true;
  }
  bool seeded() const { return seeded_; }

 private:
  friend Tape record(const SdfNetwork&, const Eigen::Matrix3Xd&);
  friend ParamGradients backward_params(const SdfNetwork&, const Tape&);

  std::vector<Eigen::MatrixXd> h_;   // h_[0] = input, h_[l] = sigma(z_l)
  std::vector<Eigen::MatrixXd> s1_;  // sigma'(z_l), index l-1
  std::vector<Eigen::MatrixXd> s2_;  // sigma''(z_l), index l-1
  std::vector<Eigen::MatrixXd> a_;   // a_[l] = df/dh_l
  std::vector<Eigen::MatrixXd> u_;   // u_[l-1] = df/dz_l
  Eigen::RowVectorXd values_;
  Eigen::RowVectorXd dtanh_;  // 1 - f^2
  Eigen::Matrix3Xd grads_;

  Eigen::RowVectorXd value_bar_;
  Eigen::Matrix3Xd grad_bar_;
  bool seeded_ = false;
};

/// Evaluates f and grad_q f for every column of `queries`, keeping what the
/// reverse sweep needs.
inline Tape record(const SdfNetwork& net, const Eigen::Matrix3Xd& queries) {
  require(queries.allFinite(), "query contains a non-finite coordinate");
  const std::size_t hidden_layers = net.num_layers() - 1;
  Tape t;
  t.h_.resize(hidden_layers + 1);
  t.s1_.resize(hidden_layers);
  t.s2_.resize(hidden_layers);
  t.a_.resize(hidden_layers + 1);
  t.u_.resize(hidden_layers);

  t.h_[0] = queries;
  Eigen::MatrixXd z;
  for (std::size_t l = 1; l <= hidden_layers; ++l) {
    z.noalias() = net.weight(l - 1) * t.h_[l - 1];
    z.colwise() += net.bias(l - 1);
    detail::activate(net.hidden, net.softplus_beta, z, t.h_[l], t.s1_[l - 1], t.s2_[l - 1]);
  }
  const auto w_out = net.weight(hidden_layers);  // 1 x H
  const double b_out = net.bias(hidden_layers)(0);
  Eigen::RowVectorXd z_out = w_out * t.h_[hidden_layers];
  z_out.array() += b_out;
  t.values_ = z_out.array().tanh().matrix();
  t.dtanh_ = (1.0 - t.values_.array().square()).matrix();

  // df/dh_L = w_out^T (1 - f^2), then back through the hidden stack.
  t.a_[hidden_layers] = w_out.transpose() * t.dtanh_;
  for (std::size_t l = hidden_layers; l >= 1; --l) {
    t.u_[l - 1] = t.a_[l].cwiseProduct(t.s1_[l - 1]);
    t.a_[l - 1].noalias() = net.weight(l - 1).transpose() * t.u_[l - 1];
  }
  t.grads_ = t.a_[0];
  return t;
}

/// Exact d(loss)/d(params) for the loss whose adjoints were seeded on the
/// tape, including the paths through the input gradient.
inline ParamGradients backward_params(const SdfNetwork& net, const Tape& t) {
  require(t.seeded(), "tape has no scalar loss seeded");
  const std::size_t hidden_layers = net.num_layers() - 1;
  ParamGradients grad = ParamGradients::Zero(net.params.size());
  auto gw = [&](std::size_t l) {
    return Eigen::Map<Eigen::MatrixXd>(grad.data() + net.weight_offset(l), net.layer_widths[l + 1],
                                       net.layer_widths[l]);
  };
  auto gb = [&](std::size_t l) {
    return Eigen::Map<Eigen::VectorXd>(grad.data() + net.bias_offset(l), net.layer_widths[l + 1]);
  };

  // Adjoint of the gradient chain, walked input-to-output.
  std::vector<Eigen::MatrixXd> z_bar_chain(hidden_layers);
  Eigen::MatrixXd a_bar = t.grad_bar_;
  Eigen::MatrixXd u_bar;
  for (std::size_t l = 1; l <= hidden_layers; ++l) {
    const auto w = net.weight(l - 1);
    u_bar.noalias() = w * a_bar;
    gw(l - 1).noalias() += t.u_[l - 1] * a_bar.transpose();
    z_bar_chain[l - 1] = u_bar.cwiseProduct(t.a_[l]).cwiseProduct(t.s2_[l - 1]);
    a_bar = u_bar.cwiseProduct(t.s1_[l - 1]);
  }
  const auto w_out = net.weight(hidden_layers);
  const Eigen::RowVectorXd dtanh_bar = w_out * a_bar;
  gw(hidden_layers).noalias() += (a_bar * t.dtanh_.transpose()).transpose();

  // Adjoint of the value chain, output-to-input.
  const Eigen::RowVectorXd f_bar =
      (t.value_bar_.array() - 2.0 * t.values_.array() * dtanh_bar.array()).matrix();
  const Eigen::RowVectorXd z_out_bar = f_bar.cwiseProduct(t.dtanh_);
  gw(hidden_layers).noalias() += z_out_bar * t.h_[hidden_layers].transpose();
  gb(hidden_layers)(0) += z_out_bar.sum();

  Eigen::MatrixXd h_bar = w_out.transpose() * z_out_bar;
  Eigen::MatrixXd z_bar;
  for (std::size_t l = hidden_layers; l >= 1; --l) {
    z_bar = h_bar.cwiseProduct(t.s1_[l - 1]) + z_bar_chain[l - 1];
    gw(l - 1).noalias() += z_bar * t.h_[l - 1].transpose();
    gb(l - 1) += z_bar.rowwise().sum();
    if (l > 1) h_bar.noalias() = net.weight(l - 1).transpose() * z_bar;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Point evaluation
// ---------------------------------------------------------------------------

/// Batched values and input gradients.
struct BatchEval {
  Eigen::RowVectorXd values;
  Eigen::Matrix3Xd gradients;
};

inline BatchEval evaluate(const SdfNetwork& net, const Eigen::Matrix3Xd& queries) {
  Tape t = record(net, queries);
  return {t.values(), t.input_gradients()};
}

/// Value-only pass (no gradient chain), one column at a time so that a
/// point's value never depends on what else is in the batch. forward() and
/// dense grid sampling share this path.
inline Eigen::RowVectorXd evaluate_values(const SdfNetwork& net, const Eigen::Matrix3Xd& queries) {
  const std::size_t hidden_layers = net.num_layers() - 1;
  Eigen::RowVectorXd out(queries.cols());
  Eigen::MatrixXd h, z, d1, d2;
  for (Eigen::Index c = 0; c < queries.cols(); ++c) {
    h = queries.col(c);
    for (std::size_t l = 1; l <= hidden_layers; ++l) {
      z.noalias() = net.weight(l - 1) * h;
      z += net.bias(l - 1);
      detail::activate(net.hidden, net.softplus_beta, z, h, d1, d2);
    }
    const double z_out = (net.weight(hidden_layers) * h)(0, 0) + net.bias(hidden_layers)(0);
    out(c) = std::tanh(z_out);
  }
  return out;
}

struct EvalResult {
  double value = 0.0;
  Point3 input_gradient = Point3::Zero();
};

inline EvalResult forward(const SdfNetwork& net, const Point3& q) {
  require(is_finite(q), "query contains a non-finite coordinate");
  Eigen::Matrix3Xd x(3, 1);
  x.col(0) = q;
  const Tape t = record(net, x);
  return {evaluate_values(net, x)(0), t.input_gradients().col(0)};
}

inline Eigen::Matrix3Xd to_matrix(std::span<const Point3> pts) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts[i];
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint files
//
//   8 bytes   magic "N2NSDF\r\n"
//   u32       format version
//   u32       number of layer widths, then that many u32 widths
//   u8        hidden activation tag, u8 output activation tag
//   f64       softplus beta
//   u64       parameter count, then that many f64 parameters
//   u64       FNV-1a 64 checksum of every preceding byte
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kCheckpointMagic = {'N', '2', 'N', 'S', 'D', 'F', '\r', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {
template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) fail(ErrorKind::CorruptFile, "checkpoint truncated");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};
}  // namespace detail

inline std::string serialize_network(const SdfNetwork& net) {
  std::string buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(net.layer_widths.size()));
  for (int w : net.layer_widths) detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(w));
  detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(net.hidden));
  detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(net.output));
  detail::put<double>(buf, net.softplus_beta);
  detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(net.params.size()));
  buf.append(reinterpret_cast<const char*>(net.params.data()), static_cast<std::size_t>(net.params.size()) * 8);
  detail::put<std::uint64_t>(buf, fnv1a64(buf.data(), buf.size()));
  return buf;
}

inline SdfNetwork deserialize_network(std::string_view data) {
  if (data.size() < kCheckpointMagic.size() + 4 ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), data.begin()))
    fail(ErrorKind::CorruptFile, "not a network checkpoint");
  detail::Reader r(data.substr(kCheckpointMagic.size()));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(ErrorKind::UnsupportedVersion, "checkpoint version " + std::to_string(version));
  if (data.size() < kCheckpointMagic.size() + 12) fail(ErrorKind::CorruptFile, "checkpoint truncated");
  const std::size_t body = data.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body, 8);
  if (stored != fnv1a64(data.data(), body)) fail(ErrorKind::CorruptFile, "checkpoint checksum mismatch");

  SdfNetwork net;
  const auto n_widths = r.get<std::uint32_t>();
  if (n_widths > 1024) fail(ErrorKind::CorruptFile, "implausible layer count");
  for (std::uint32_t i = 0; i < n_widths; ++i) net.layer_widths.push_back(static_cast<int>(r.get<std::uint32_t>()));
  const auto hidden = r.get<std::uint8_t>();
  const auto output = r.get<std::uint8_t>();
  if (hidden < 1 || hidden > 3 || output != 1) fail(ErrorKind::UnsupportedVersion, "unknown activation tag");
  net.hidden = static_cast<Activation>(hidden);
  net.output = static_cast<OutputActivation>(output);
  net.softplus_beta = r.get<double>();
  const auto n_params = r.get<std::uint64_t>();
  try {
    validate_architecture(net.layer_widths);
  } catch (const Error& e) {
    fail(ErrorKind::CorruptFile, e.what());
  }
  if (n_params != param_count(net.layer_widths)) fail(ErrorKind::CorruptFile, "parameter count does not match widths");
  if (kCheckpointMagic.size() + r.pos() + n_params * 8 != body) fail(ErrorKind::CorruptFile, "checkpoint size mismatch");
  net.params.resize(static_cast<Eigen::Index>(n_params));
  std::memcpy(net.params.data(), data.data() + kCheckpointMagic.size() + r.pos(), n_params * 8);
  return net;
}

inline void save_network(const std::filesystem::path& path, const SdfNetwork& net) {
  const std::string buf = serialize_network(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

inline SdfNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_network(buf);
}

}  // namespace n2n
