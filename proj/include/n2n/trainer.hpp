#pragma once

// Noise-to-noise training of the SDF network.
//
// Each iteration pulls a batch of queries onto the current zero level set,
// matches the pulled points one-to-one against a batch of noisy target
// points, and adds a hinge penalty whenever some other pulled point lies
// closer to a query than the query's own predicted distance.

#include <functional>
#include <sstream>
#include <thread>
#include <vector>

#include "n2n/core.hpp"
#include "n2n/network.hpp"
#include "n2n/sampling.hpp"
#include "n2n/transport.hpp"

namespace n2n {

enum class TrainMode { MultiObservation, SingleObservation };
enum class Metric { Emd, Chamfer };

inline const char* to_string(Metric m) { return m == Metric::Emd ? "emd" : "cd"; }

struct TrainConfig {
  int batch_size = 250;
  double lambda = 0.1;
  int iterations = 40000;
  double learning_rate = 1e-4;
  TrainMode mode = TrainMode::MultiObservation;
  std::size_t exact_emd_threshold = kDefaultExactThreshold;
  std::uint64_t seed = 0;
  bool gc_detach = true;

  Metric metric = Metric::Emd;
  int k_neighbor = 50;
  double grad_eps = 1e-8;
  double divergence_factor = 1e3;
  int threads = 1;
  NetworkSpec network;
  /// When false the consistency term is never evaluated (not merely scaled
  /// by zero). Used to check that lambda = 0 is the pure transport objective.
  bool enable_gc = true;
  /// The loss is unchanged by f -> -f, so the learned sign is arbitrary.
  /// When set, training ends by flipping the output if the field is negative
  /// at most corners of the [-1.1, 1.1]^3 box.
  bool orient_outside_positive = true;

  void validate() const {
    require(batch_size >= 1, "batch size must be >= 1");
    require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be >= 0");
    require(iterations >= 0, "iterations must be >= 0");
    require(learning_rate > 0.0, "learning rate must be positive");
    require(k_neighbor >= 1, "k_neighbor must be >= 1");
    require(threads >= 1, "threads must be >= 1");
  }
};

struct LossBreakdown {
  double emd_term = 0.0;  // transport term (Chamfer when metric = Chamfer)
  double gc_term = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Adam {
  AdamOptions opt;
  Eigen::VectorXd m, v;
  std::int64_t step_count = 0;

  Adam() = default;
  Adam(AdamOptions o, Eigen::Index n) : opt(o), m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    require(grad.size() == params.size() && m.size() == params.size(), "gradient shape mismatch");
    ++step_count;
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step_count));
    params.array() -= opt.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt.eps);
  }
};

// ---------------------------------------------------------------------------
// Pull operator
// ---------------------------------------------------------------------------

/// q - (f(q) - level) * grad f / max(|grad f|, eps).
inline Point3 pull_with(const Point3& q, double value, const Point3& grad, double level = 0.0, double eps = 1e-8) {
  return q - (value - level) * grad / std::max(grad.norm(), eps);
}

inline Point3 pull(const SdfNetwork& net, const Point3& q, double eps = 1e-8) {
  const EvalResult r = forward(net, q);
  return pull_with(q, r.value, r.input_gradient, 0.0, eps);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossEvaluation {
  LossBreakdown breakdown;
  ParamGradients gradient;
  std::vector<Point3> pulled;
  Matching matching;  // empty for the Chamfer metric
};

namespace detail {

// Adjoint of the transport term w.r.t. the pulled points. Returns the term.
inline double transport_term(const std::vector<Point3>& pulled, const std::vector<Point3>& target,
                             const TrainConfig& cfg, std::vector<Point3>& pulled_bar, Matching& matching) {
  const std::size_t b = pulled.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  if (cfg.metric == Metric::Emd) {
    matching = emd(pulled, target, cfg.exact_emd_threshold);
    for (std::size_t k = 0; k < b; ++k) {
      const Point3 d = pulled[k] - target[matching.assignment[k]];
      const double n = d.norm();
      if (n > 0.0) pulled_bar[k] += inv_b * d / n;
    }
    return matching.cost * inv_b;
  }
  // Unsquared Chamfer: mean over pulled of distance to nearest target plus
  // mean over targets of distance to nearest pulled point.
  const ChamferMatch cm = chamfer_match(pulled, target);
  const double inv_t = 1.0 / static_cast<double>(target.size());
  double term = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    const double n = std::sqrt(cm.src_dist2[k]);
    term += inv_b * n;
    if (n > 0.0) pulled_bar[k] += inv_b * (pulled[k] - target[cm.src_to_tgt[k]]) / n;
  }
  for (std::size_t j = 0; j < target.size(); ++j) {
    const double n = std::sqrt(cm.tgt_dist2[j]);
    term += inv_t * n;
    const std::size_t k = cm.tgt_to_src[j];
    if (n > 0.0) pulled_bar[k] += inv_t * (pulled[k] - target[j]) / n;
  }
  return term;
}

}  // namespace detail

/// Evaluates the training loss on one batch and its exact parameter gradient
/// with the transport assignment held fixed.
inline LossEvaluation evaluate_loss(const SdfNetwork& net, const QueryBatch& queries, const PointCloud& target,
                                    const TrainConfig& cfg) {
  const std::size_t b = queries.size();
  require(b >= 1 && b == target.size(), "query and target batches must have equal, non-zero size");

  const Eigen::Matrix3Xd q = to_matrix(queries.queries);
  const Eigen::Index chunks = std::clamp<Eigen::Index>(cfg.threads, 1, static_cast<Eigen::Index>(b));
  std::vector<Tape> tapes(static_cast<std::size_t>(chunks));
  std::vector<Eigen::Index> begin(static_cast<std::size_t>(chunks) + 1);
  for (Eigen::Index c = 0; c <= chunks; ++c) begin[c] = c * static_cast<Eigen::Index>(b) / chunks;
  auto run_chunks = [&](auto&& fn) {
    if (chunks == 1) return fn(0);
    std::vector<std::jthread> workers;
    for (Eigen::Index c = 0; c < chunks; ++c) workers.emplace_back([&, c] { fn(c); });
  };
  run_chunks([&](Eigen::Index c) { tapes[c] = record(net, q.middleCols(begin[c], begin[c + 1] - begin[c])); });

  Eigen::RowVectorXd f(static_cast<Eigen::Index>(b));
  Eigen::Matrix3Xd g(3, static_cast<Eigen::Index>(b));
  for (Eigen::Index c = 0; c < chunks; ++c) {
    f.segment(begin[c], begin[c + 1] - begin[c]) = tapes[c].values();
    g.middleCols(begin[c], begin[c + 1] - begin[c]) = tapes[c].input_gradients();
  }

  LossEvaluation out;
  out.pulled.resize(b);
  std::vector<double> gnorm(b);
  for (std::size_t k = 0; k < b; ++k) {
    const Eigen::Index ki = static_cast<Eigen::Index>(k);
    gnorm[k] = std::max(g.col(ki).norm(), cfg.grad_eps);
    out.pulled[k] = queries.queries[k] - f(ki) * g.col(ki) / gnorm[k];
    if (!is_finite(out.pulled[k])) fail(ErrorKind::NumericalFailure, "pulled point is not finite");
  }

  std::vector<Point3> pulled_bar(b, Point3::Zero());
  Eigen::RowVectorXd f_bar = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(b));
  const double transport =
      detail::transport_term(out.pulled, target.points, cfg, pulled_bar, out.matching);

  double gc = 0.0;
  if (cfg.enable_gc) {
    const double inv_b = 1.0 / static_cast<double>(b);
    const KdTree pulled_tree(out.pulled);
    for (std::size_t k = 0; k < b; ++k) {
      const Eigen::Index ki = static_cast<Eigen::Index>(k);
      const Neighbor nb = pulled_tree.nearest(queries.queries[k]);
      const double dmin = std::sqrt(nb.dist2);
      // When q_k's own projection is its nearest pulled point the excess is
      // zero up to rounding; such terms are inactive.
      const double excess = std::abs(f(ki)) - dmin;
      if (excess <= 1e-12 * std::max(1.0, std::abs(f(ki)))) continue;
      gc += inv_b * excess;
      f_bar(ki) += cfg.lambda * inv_b * (f(ki) > 0 ? 1.0 : (f(ki) < 0 ? -1.0 : 0.0));
      if (!cfg.gc_detach && dmin > 0.0)
        pulled_bar[nb.index] += cfg.lambda * inv_b * (queries.queries[k] - out.pulled[nb.index]) / dmin;
    }
  }

  out.breakdown.emd_term = transport;
  out.breakdown.gc_term = gc;
  out.breakdown.total = transport + cfg.lambda * gc;
  if (!std::isfinite(out.breakdown.total)) fail(ErrorKind::NumericalFailure, "loss is not finite");

  // Chain through p = q - f * g / |g|.
  Eigen::Matrix3Xd g_bar(3, static_cast<Eigen::Index>(b));
  for (std::size_t k = 0; k < b; ++k) {
    const Eigen::Index ki = static_cast<Eigen::Index>(k);
    const Point3 n = g.col(ki) / gnorm[k];
    const Point3& pb = pulled_bar[k];
    f_bar(ki) -= pb.dot(n);
    if (g.col(ki).norm() > cfg.grad_eps)
      g_bar.col(ki) = -f(ki) * (pb - n * n.dot(pb)) / gnorm[k];
    else
      g_bar.col(ki) = -f(ki) * pb / cfg.grad_eps;
  }

  std::vector<ParamGradients> partial(static_cast<std::size_t>(chunks));
  run_chunks([&](Eigen::Index c) {
    const Eigen::Index n = begin[c + 1] - begin[c];
    tapes[c].seed(f_bar.segment(begin[c], n), g_bar.middleCols(begin[c], n));
    partial[c] = backward_params(net, tapes[c]);
  });
  out.gradient = partial[0];
  for (Eigen::Index c = 1; c < chunks; ++c) out.gradient += partial[c];
  return out;
}

// ---------------------------------------------------------------------------
// Training state and loop
// ---------------------------------------------------------------------------

struct TrainState {
  SdfNetwork network;
  Adam optimizer;
  std::int64_t iteration = 0;
  Rng rng;
  std::vector<LossBreakdown> history;
};

inline TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.network = init_network(cfg.network, cfg.seed);
  AdamOptions ao;
  ao.learning_rate = cfg.learning_rate;
  s.optimizer = Adam(ao, s.network.params.size());
  s.rng = make_rng(cfg.seed, streams::kTrainLoop);
  return s;
}

/// One optimizer update on the given batch.
inline LossBreakdown loss_step(TrainState& state, const QueryBatch& queries, const PointCloud& target,
                               const TrainConfig& cfg) {
  const LossEvaluation ev = evaluate_loss(state.network, queries, target, cfg);
  if (!state.history.empty() && ev.breakdown.total > cfg.divergence_factor * state.history.front().total) {
    std::ostringstream msg;
    msg << "training diverged at iteration " << state.iteration << ": loss " << ev.breakdown.total
        << " exceeds " << cfg.divergence_factor << "x the initial " << state.history.front().total;
    fail(ErrorKind::NumericalFailure, msg.str());
  }
  state.optimizer.step(state.network.params, ev.gradient);
  if (!state.network.params.allFinite()) fail(ErrorKind::NumericalFailure, "parameters became non-finite");
  state.history.push_back(ev.breakdown);
  ++state.iteration;
  return ev.breakdown;
}

/// Negates the network output (and the optimizer's first moment for the
/// output layer) when f < 0 at a majority of the box corners, so that the
/// field is negative inside a shape centred in the unit cube.
inline bool orient_outside_positive(TrainState& state, double half_width = 1.1) {
  Eigen::Matrix3Xd corners(3, 8);
  for (int c = 0; c < 8; ++c)
    corners.col(c) = half_width * Point3(c & 1 ? 1 : -1, c & 2 ? 1 : -1, c & 4 ? 1 : -1);
  const Eigen::RowVectorXd f = evaluate_values(state.network, corners);
  if ((f.array() < 0.0).count() <= 4) return false;
  // The output is tanh(w . h + b), which is odd in (w, b).
  const Eigen::Index tail = state.network.layer_widths[state.network.layer_widths.size() - 2] + 1;
  state.network.params.tail(tail) *= -1.0;
  if (state.optimizer.m.size() == state.network.params.size()) state.optimizer.m.tail(tail) *= -1.0;
  return true;
}

using ProgressSink = std::function<void(std::int64_t, const LossBreakdown&)>;

/// Continues training `state` for cfg.iterations more updates.
inline void train(TrainState& state, const ObservationSet& observations, const TrainConfig& cfg,
                  const ProgressSink& progress = {}) {
  cfg.validate();
  require(observations.size() >= 1, "need at least one observation");
  for (const auto& o : observations.observations) validate(o);

  std::vector<QuerySampler> samplers;
  const std::size_t n_query_sources = cfg.mode == TrainMode::SingleObservation ? 1 : observations.size();
  samplers.reserve(n_query_sources);
  for (std::size_t i = 0; i < n_query_sources; ++i) samplers.emplace_back(observations.observations[i], cfg.k_neighbor);

  std::uniform_int_distribution<std::size_t> pick_obs(0, observations.size() - 1);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int it = 0; it < cfg.iterations; ++it) {
    std::size_t i = 0, j = 0;
    if (cfg.mode == TrainMode::MultiObservation) {
      i = pick_obs(state.rng);
      j = pick_obs(state.rng);
    }
    const QueryBatch queries = samplers[i].sample(batch, state.rng);
    const PointCloud target = sample_target_batch(observations.observations[j], batch, state.rng);
    const LossBreakdown lb = loss_step(state, queries, target, cfg);
    if (progress) progress(state.iteration, lb);
  }
  if (cfg.orient_outside_positive && cfg.iterations > 0) orient_outside_positive(state);
}

inline TrainState train(const ObservationSet& observations, const TrainConfig& cfg, const ProgressSink& progress = {}) {
  TrainState state = init_train_state(cfg);
  train(state, observations, cfg, progress);
  return state;
}

}  // namespace n2n
