#pragma once

// Mutual information estimators.
//
// Difference-of-entropies family, I = H(X) - H(X|Y):
//   ndoe            one flow, conditional loss L1 through the active view and
//                   marginal loss L2 through the masked view, alternated per
//                   minibatch
//   bnaf-separate   two independent flows, one for H(X), one joint flow for
//                   H(X, Y) - H(Y)
//   doe-gaussian,   location-scale marginal and an MLP conditional; these
//   doe-logistic    model the second variable given the first
// Critic bounds: nwj, mine, smile (clipped DV), infonce.

#include "ndoe/benchmarks.hpp"
#include "ndoe/flows.hpp"
#include "ndoe/optim.hpp"

#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndoe {

enum class EstimatorKind { Ndoe, BnafSeparate, DoeGaussian, DoeLogistic, Nwj, Mine, Smile, InfoNce };
enum class FlowFamily { Bnaf, RealNvp };

std::string to_string(EstimatorKind k);
EstimatorKind parse_estimator_kind(const std::string& s);
bool is_doe_family(EstimatorKind k);
bool is_critic(EstimatorKind k);

struct EstimatorConfig {
  std::string id = "ndoe";
  EstimatorKind kind = EstimatorKind::Ndoe;

  FlowFamily flow = FlowFamily::Bnaf;
  Index hidden_multiplier = 4;  // bnaf
  int hidden_layers = 2;        // bnaf tanh layers
  bool gated_residual = true;
  int coupling_layers = 4;      // realnvp
  Index coupling_hidden = 32;
  double scale_clamp = 5.0;

  Index critic_hidden = 64;  // critics and the doe conditioner
  int critic_layers = 2;
  double smile_tau = 5.0;  // inf gives the DV bound

  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam;
  bool split_moments = true;  // ndoe: one moment buffer per loss
  double grad_clip = 1.0;     // doe-parametric only; 0 disables

  Index batch_size = 128;
  int epochs = 50;
  int eval_every = 1;  // epochs between test-set evaluations in the trace
  bool standardize = true;
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double mi = 0.0;
};

// Per-column affine map fitted on training data.
struct Standardizer {
  RowVector mean_x, scale_x, mean_y, scale_y;

  static Standardizer fit(const Dataset& d);
  static Standardizer identity(Index n_x, Index n_y);
  Dataset apply(const Dataset& d) const;
  // sum log scale; adding it converts entropies back to data units
  double log_scale_x() const { return scale_x.array().log().sum(); }
  double log_scale_y() const { return scale_y.array().log().sum(); }
};

struct EstimateResult {
  double mi_hat = 0.0;
  // Entropy components in data units, NaN for critics. l2 is the marginal
  // entropy H(X) and l1 the conditional H(X|Y); doe-* report H(Y), H(Y|X).
  double l1 = std::numeric_limits<double>::quiet_NaN();
  double l2 = std::numeric_limits<double>::quiet_NaN();
  std::vector<EpochRecord> trace;
  // Bound values on each test batch (critics).
  std::vector<double> batch_estimates;
  int epochs = 0;
  long steps = 0;
  Index train_size = 0;
  Index test_size = 0;
  Standardizer standardizer;
  std::shared_ptr<const FlowModel> flow;  // ndoe only
};

class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, std::vector<EpochRecord> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<EpochRecord>& trace() const noexcept { return trace_; }

 private:
  std::vector<EpochRecord> trace_;
};

// --- flow losses -------------------------------------------------------

// L1 = -mean(log N(f2) + log det d_x f2) through the active view.
Var loss_conditional(const FlowModel& model, Tape& tape, std::span<const Var> params, const Matrix& y,
                     const Matrix& x, long batch_index = -1);
// L2, the same expression through the masked view; y is ignored.
Var loss_marginal(const FlowModel& model, Tape& tape, std::span<const Var> params, const Matrix& y,
                  const Matrix& x, long batch_index = -1);
// -mean(log N(f1) + log det d_y f1 + log N(f2) + log det d_x f2), active view.
Var loss_joint(const FlowModel& model, Tape& tape, std::span<const Var> params, const Matrix& y,
               const Matrix& x, long batch_index = -1);

// Per-sample -log q terms without a tape, evaluated in chunks.
Vector conditional_nll(const FlowModel& model, const Matrix& y, const Matrix& x);
Vector marginal_nll(const FlowModel& model, const Matrix& y, const Matrix& x);

struct EntropyEvaluation {
  double l1 = 0.0;
  double l2 = 0.0;
  double mi = 0.0;  // l2 - l1
  double std_error = 0.0;  // of the per-sample differences
};

// Evaluates a trained ndoe flow on (already standardized) data.
EntropyEvaluation evaluate_ndoe(const FlowModel& model, const Dataset& data);

// --- small perceptrons ----------------------------------------------------

enum class Activation { Tanh, Softplus };

// Dense layers whose parameters live in an external store, in order
// (w0, b0, w1, b1, ...). Linear output, optionally without its bias.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<Matrix>& store, const std::vector<Index>& widths, Activation act, Rng& rng,
      double out_scale = 1.0, bool output_bias = true);

  Var operator()(std::span<const Var> params, const Var& input) const;
  Index in_width() const { return in_; }
  Index out_width() const { return out_; }

 private:
  std::vector<std::size_t> weights_, biases_;
  Activation act_ = Activation::Softplus;
  Index in_ = 0, out_ = 0;
};

// --- parametric difference of entropies -----------------------------------

enum class DoeFamily { Gaussian, Logistic };

// Models the "target" variable: an isotropic location-scale marginal and a
// per-coordinate location-scale conditional given the other variable.
// Scales are softplus(raw) + 1e-6.
class DoeModel {
 public:
  DoeModel(DoeFamily family, Index n_target, Index n_cond, Index hidden, int layers, Rng& rng);

  std::vector<Matrix>& parameters() { return params_; }
  const std::vector<Matrix>& parameters() const { return params_; }
  // Parameter indices of the marginal (the rest belong to the conditional).
  std::size_t marginal_count() const { return 2; }

  // -mean log q(target)
  Var marginal_loss(Tape& tape, std::span<const Var> p, const Matrix& target) const;
  // -mean log q(target | cond)
  Var conditional_loss(Tape& tape, std::span<const Var> p, const Matrix& target, const Matrix& cond) const;

 private:
  Var log_density(Tape& tape, const Var& loc, const Var& scale_raw, const Matrix& target) const;

  DoeFamily family_;
  Index n_target_;
  std::vector<Matrix> params_;
  Mlp conditioner_;
};

// --- critics --------------------------------------------------------------

// Scalar score f(x, y) on concatenated [x, y] rows.
class Critic {
 public:
  Critic(Index n_x, Index n_y, Index hidden, int layers, Rng& rng, bool output_bias = true);

  std::vector<Matrix>& parameters() { return params_; }
  const std::vector<Matrix>& parameters() const { return params_; }

  Var score(Tape& tape, std::span<const Var> p, const Matrix& x, const Matrix& y) const;
  // [M x M] matrix of f(x_i, y_j).
  Var score_matrix(Tape& tape, std::span<const Var> p, const Matrix& x, const Matrix& y) const;

 private:
  std::vector<Matrix> params_;
  Mlp net_;
};

// Lower bound on I reported for the batch. `derangement` pairs x_i with
// y_{derangement[i]} for the product-of-marginals samples (unused by infonce,
// which scores all M^2 pairs). smile: E_p[f] - log E_q[clip(e^f, e^-tau, e^tau)].
Var critic_bound(EstimatorKind kind, const Critic& critic, Tape& tape, std::span<const Var> p, const Matrix& x,
                 const Matrix& y, std::span<const Index> derangement, double smile_tau);
// Objective maximized during training. Equal to critic_bound except for
// smile, whose clipped bound is unbounded in f (a constant critic f = c scores
// c - tau); smile trains the Jensen-Shannon objective
// -E_p[softplus(-f)] - E_q[softplus(f)] instead.
Var critic_objective(EstimatorKind kind, const Critic& critic, Tape& tape, std::span<const Var> p, const Matrix& x,
                     const Matrix& y, std::span<const Index> derangement);

// mine and infonce are invariant to f + c, so an output bias would be a
// parameter with identically zero gradient; their critics omit it.
bool critic_output_bias(EstimatorKind kind);

// Uniform random cyclic permutation (no fixed points).
std::vector<Index> sattolo_derangement(Index n, Rng& rng);

// --- training ---------------------------------------------------------------

// Data are raw; standardization (if configured) is fitted on `train`.
EstimateResult train_ndoe(const EstimatorConfig& config, const Dataset& train, const Dataset& test);
EstimateResult train_bnaf_separate(const EstimatorConfig& config, const Dataset& train, const Dataset& test);
EstimateResult train_doe_parametric(const EstimatorConfig& config, const Dataset& train, const Dataset& test,
                                    DoeFamily family);
EstimateResult train_critic(const EstimatorConfig& config, const Dataset& train, const Dataset& test);

// Dispatches on config.kind.
EstimateResult estimate(const EstimatorConfig& config, const Dataset& train, const Dataset& test);

std::unique_ptr<FlowModel> make_flow(const EstimatorConfig& config, Index n_y, Index n_x, Rng& rng);

}  // namespace ndoe
