#include "ndoe/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ndoe {

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Ndoe: return "ndoe";
    case EstimatorKind::BnafSeparate: return "bnaf-separate";
    case EstimatorKind::DoeGaussian: return "doe-gaussian";
    case EstimatorKind::DoeLogistic: return "doe-logistic";
    case EstimatorKind::Nwj: return "nwj";
    case EstimatorKind::Mine: return "mine";
    case EstimatorKind::Smile: return "smile";
    case EstimatorKind::InfoNce: return "infonce";
  }
  return "?";
}

EstimatorKind parse_estimator_kind(const std::string& s) {
  for (EstimatorKind k : {EstimatorKind::Ndoe, EstimatorKind::BnafSeparate, EstimatorKind::DoeGaussian,
                          EstimatorKind::DoeLogistic, EstimatorKind::Nwj, EstimatorKind::Mine, EstimatorKind::Smile,
                          EstimatorKind::InfoNce}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown estimator kind '" + s + "'");
}

bool is_doe_family(EstimatorKind k) { return !is_critic(k); }

bool is_critic(EstimatorKind k) {
  return k == EstimatorKind::Nwj || k == EstimatorKind::Mine || k == EstimatorKind::Smile ||
         k == EstimatorKind::InfoNce;
}

void EstimatorConfig::validate() const {
  auto fail = [&](const std::string& what) { throw ConfigError("estimator " + id + ": " + what); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (is_critic(kind) && batch_size < 2) fail("critic estimators need batch_size >= 2");
  if (epochs < 1) fail("epochs must be >= 1");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) fail("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam.eps > 0.0)) fail("eps must be positive");
  if (hidden_multiplier < 1 || hidden_layers < 0) fail("bad bnaf widths");
  if (coupling_layers < 1 || coupling_hidden < 1 || !(scale_clamp > 0.0)) fail("bad realnvp settings");
  if (critic_hidden < 1 || critic_layers < 1) fail("bad critic widths");
  if (!(smile_tau > 0.0)) fail("smile_tau must be positive");
  if (grad_clip < 0.0) fail("grad_clip must be >= 0");
  if (!(divergence_threshold > 0.0)) fail("divergence_threshold must be positive");
}

// --- standardization --------------------------------------------------------

namespace {

std::pair<RowVector, RowVector> column_stats(const Matrix& m) {
  const RowVector mean = m.colwise().mean();
  RowVector sd = ((m.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(m.rows())).sqrt();
  for (Index j = 0; j < sd.size(); ++j) {
    if (!(sd(j) > 1e-12)) sd(j) = 1.0;
  }
  return {mean, sd};
}

}  // namespace

Standardizer Standardizer::fit(const Dataset& d) {
  Standardizer s;
  std::tie(s.mean_x, s.scale_x) = column_stats(d.x);
  std::tie(s.mean_y, s.scale_y) = column_stats(d.y);
  return s;
}

Standardizer Standardizer::identity(Index n_x, Index n_y) {
  return {RowVector::Zero(n_x), RowVector::Ones(n_x), RowVector::Zero(n_y), RowVector::Ones(n_y)};
}

Dataset Standardizer::apply(const Dataset& d) const {
  Dataset out;
  out.x = ((d.x.rowwise() - mean_x).array().rowwise() / scale_x.array()).matrix();
  out.y = ((d.y.rowwise() - mean_y).array().rowwise() / scale_y.array()).matrix();
  return out;
}

// --- flow losses ------------------------------------------------------------

namespace {

void check_loss(const Var& loss, const char* what, long batch_index) {
  if (!std::isfinite(loss.scalar())) {
    throw NumericError(std::string(what) + ": non-finite loss in batch " + std::to_string(batch_index), batch_index);
  }
}

Var neg_mean_group_logpdf(const Var& f, const Var& logdet) {
  return scale(mean(add(std_normal_logpdf_rows(f), logdet)), -1.0);
}

constexpr Index kEvalChunk = 4096;

template <class Fn>
Vector chunked_nll(const FlowModel& model, const Matrix& y, const Matrix& x, MaskState state, Fn term) {
  Vector out(y.rows());
  for (Index start = 0; start < y.rows(); start += kEvalChunk) {
    const Index n = std::min(kEvalChunk, y.rows() - start);
    const FlowValues v = model.evaluate(y.middleRows(start, n), x.middleRows(start, n), state);
    out.segment(start, n) = term(v);
  }
  return out;
}

Vector group_nll(const Matrix& f, const Vector& logdet) {
  const double c = 0.5 * kLog2Pi * static_cast<double>(f.cols());
  return (0.5 * f.rowwise().squaredNorm().array() + c - logdet.array()).matrix();
}

}  // namespace

Var loss_conditional(const FlowModel& model, Tape& tape, std::span<const Var> params, const Matrix& y,
                     const Matrix& x, long batch_index) {
  const FlowForward out = model.forward(tape, params, y, x, MaskState::Active);
  Var loss = neg_mean_group_logpdf(out.f2, out.logdet_x);
  check_loss(loss, "loss_conditional", batch_index);
  return loss;
}

Var loss_marginal(const FlowModel& model, Tape& tape, std::span<const Var> params, const Matrix& y,
                  const Matrix& x, long batch_index) {
  const FlowForward out = model.forward(tape, params, y, x, MaskState::Masked);
  Var loss = neg_mean_group_logpdf(out.f2, out.logdet_x);
  check_loss(loss, "loss_marginal", batch_index);
  return loss;
}

Var loss_joint(const FlowModel& model, Tape& tape, std::span<const Var> params, const Matrix& y, const Matrix& x,
               long batch_index) {
  const FlowForward out = model.forward(tape, params, y, x, MaskState::Active);
  Var loss = add(neg_mean_group_logpdf(out.f1, out.logdet_y), neg_mean_group_logpdf(out.f2, out.logdet_x));
  check_loss(loss, "loss_joint", batch_index);
  return loss;
}

Vector conditional_nll(const FlowModel& model, const Matrix& y, const Matrix& x) {
  return chunked_nll(model, y, x, MaskState::Active, [](const FlowValues& v) { return group_nll(v.f2, v.logdet_x); });
}

Vector marginal_nll(const FlowModel& model, const Matrix& y, const Matrix& x) {
  return chunked_nll(model, y, x, MaskState::Masked, [](const FlowValues& v) { return group_nll(v.f2, v.logdet_x); });
}

namespace {

EntropyEvaluation entropy_summary(const Vector& cond, const Vector& marg) {
  EntropyEvaluation e;
  const double n = static_cast<double>(cond.size());
  e.l1 = cond.mean();
  e.l2 = marg.mean();
  e.mi = e.l2 - e.l1;
  const Vector diff = marg - cond;
  const double var = cond.size() > 1 ? (diff.array() - diff.mean()).square().sum() / (n - 1.0) : 0.0;
  e.std_error = std::sqrt(var / n);
  return e;
}

}  // namespace

EntropyEvaluation evaluate_ndoe(const FlowModel& model, const Dataset& data) {
  return entropy_summary(conditional_nll(model, data.y, data.x), marginal_nll(model, data.y, data.x));
}

// --- perceptron -------------------------------------------------------------

Mlp::Mlp(std::vector<Matrix>& store, const std::vector<Index>& widths, Activation act, Rng& rng, double out_scale,
         bool output_bias)
    : act_(act) {
  if (widths.size() < 2) throw DomainError("mlp: need input and output widths");
  in_ = widths.front();
  out_ = widths.back();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Index fan_in = widths[l];
    if (fan_in < 1 || widths[l + 1] < 1) throw DomainError("mlp: widths must be >= 1");
    double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    if (l + 2 == widths.size()) sd *= out_scale;
    weights_.push_back(store.size());
    store.push_back(sd * rng.normal_matrix(fan_in, widths[l + 1]));
    if (l + 2 == widths.size() && !output_bias) break;
    biases_.push_back(store.size());
    store.push_back(Matrix::Zero(1, widths[l + 1]));
  }
}

Var Mlp::operator()(std::span<const Var> p, const Var& input) const {
  Var h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = matmul(h, p[weights_[l]]);
    if (l < biases_.size()) h = add(h, p[biases_[l]]);
    if (l + 1 < weights_.size()) h = act_ == Activation::Tanh ? tanh(h) : softplus(h);
  }
  return h;
}

// --- training helpers ---------------------------------------------------------

namespace {

void check_data(const EstimatorConfig& cfg, const Dataset& train, const Dataset& test) {
  cfg.validate();
  if (train.x.rows() != train.y.rows() || test.x.rows() != test.y.rows()) {
    throw DimensionError("estimator: x and y row counts differ");
  }
  if (train.x.cols() != test.x.cols() || train.y.cols() != test.y.cols()) {
    throw DimensionError("estimator: train and test dimensions differ");
  }
  if (train.size() < cfg.batch_size) throw DomainError("estimator: training set smaller than one batch");
  if (test.size() < 1) throw DomainError("estimator: empty test set");
}

std::vector<Index> shuffled(Index n, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    std::swap(idx[static_cast<std::size_t>(i)], idx[rng.below(static_cast<std::uint64_t>(i + 1))]);
  }
  return idx;
}

struct Prepared {
  Standardizer standardizer;
  Dataset train, test;
};

Prepared prepare(const EstimatorConfig& cfg, const Dataset& train, const Dataset& test) {
  check_data(cfg, train, test);
  Prepared p;
  p.standardizer = cfg.standardize ? Standardizer::fit(train) : Standardizer::identity(train.x.cols(), train.y.cols());
  p.train = p.standardizer.apply(train);
  p.test = p.standardizer.apply(test);
  return p;
}

bool eval_due(const EstimatorConfig& cfg, int epoch) {
  return (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
}

// Runs epochs of shuffled minibatches; `step` performs the updates for one
// batch and `evaluate` appends to the trace. Numeric errors and divergence
// become TrainingFailure carrying the trace so far.
template <class Step, class Eval>
long run_epochs(const EstimatorConfig& cfg, const Dataset& train, Rng& rng, std::vector<EpochRecord>& trace,
                Step step, Eval evaluate) {
  const Index batches = train.size() / cfg.batch_size;
  long steps = 0;
  auto fail = [&](const std::string& what) {
    throw TrainingFailure(cfg.id + ": " + what + " at step " + std::to_string(steps), trace);
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<Index> order = shuffled(train.size(), rng);
    for (Index b = 0; b < batches; ++b) {
      const Dataset batch = train.rows(std::span<const Index>(order).subspan(
          static_cast<std::size_t>(b * cfg.batch_size), static_cast<std::size_t>(cfg.batch_size)));
      try {
        const double loss = step(batch, steps);
        if (!std::isfinite(loss) || std::abs(loss) > cfg.divergence_threshold) {
          fail("divergence (loss " + std::to_string(loss) + ")");
        }
      } catch (const NumericError& e) {
        fail(e.what());
      }
      ++steps;
    }
    if (eval_due(cfg, epoch)) {
      EpochRecord r = evaluate();
      r.epoch = epoch + 1;
      r.step = steps;
      trace.push_back(r);
      if (!std::isfinite(r.mi)) fail("non-finite test estimate");
    }
  }
  return steps;
}

std::vector<Matrix> grads_of(Tape& tape, const Var& loss, const std::vector<Var>& vars) {
  const Gradients g = tape.backward(loss);
  std::vector<Matrix> out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(g[v]);
  return out;
}

}  // namespace

std::unique_ptr<FlowModel> make_flow(const EstimatorConfig& cfg, Index n_y, Index n_x, Rng& rng) {
  if (cfg.flow == FlowFamily::Bnaf) {
    BnafSpec s{n_y, n_x, cfg.hidden_multiplier, cfg.hidden_layers, cfg.gated_residual};
    return std::make_unique<BnafFlow>(s, rng);
  }
  RealNvpSpec s{n_y, n_x, cfg.coupling_layers, cfg.coupling_hidden, cfg.scale_clamp};
  return std::make_unique<RealNvpFlow>(s, rng);
}

// --- ndoe -------------------------------------------------------------------

EstimateResult train_ndoe(const EstimatorConfig& cfg, const Dataset& train_raw, const Dataset& test_raw) {
  const Prepared data = prepare(cfg, train_raw, test_raw);
  Rng rng(cfg.seed);
  std::shared_ptr<FlowModel> flow = make_flow(cfg, data.train.y.cols(), data.train.x.cols(), rng);
  std::vector<Matrix>& params = flow->parameters();
  AdamState conditional_state(cfg.adam, params);
  AdamState marginal_state(cfg.adam, params);
  AdamState& second = cfg.split_moments ? marginal_state : conditional_state;
  const double shift = data.standardizer.log_scale_x();

  EstimateResult result;
  EntropyEvaluation last;
  auto step = [&](const Dataset& batch, long index) {
    double worst = 0.0;
    {
      Tape tape;
      const std::vector<Var> vars = bind_parameters(tape, params);
      const Var l1 = loss_conditional(*flow, tape, vars, batch.y, batch.x, index);
      optimizer_step(cfg.optimizer, conditional_state, params, grads_of(tape, l1, vars));
      worst = l1.scalar();
    }
    {
      Tape tape;
      const std::vector<Var> vars = bind_parameters(tape, params);
      const Var l2 = loss_marginal(*flow, tape, vars, batch.y, batch.x, index);
      optimizer_step(cfg.optimizer, second, params, grads_of(tape, l2, vars));
      if (std::abs(l2.scalar()) > std::abs(worst)) worst = l2.scalar();
    }
    return worst;
  };
  auto evaluate = [&]() {
    last = evaluate_ndoe(*flow, data.test);
    const double l1 = last.l1 + shift;
    const double l2 = last.l2 + shift;
    return EpochRecord{0, 0, l1, l2, l2 - l1};
  };
  result.steps = run_epochs(cfg, data.train, rng, result.trace, step, evaluate);

  const EpochRecord& fin = result.trace.back();
  result.l1 = fin.l1;
  result.l2 = fin.l2;
  result.mi_hat = fin.l2 - fin.l1;
  result.epochs = cfg.epochs;
  result.train_size = data.train.size();
  result.test_size = data.test.size();
  result.standardizer = data.standardizer;
  result.flow = flow;
  return result;
}

// --- two separate flows -------------------------------------------------------

EstimateResult train_bnaf_separate(const EstimatorConfig& cfg, const Dataset& train_raw, const Dataset& test_raw) {
  const Prepared data = prepare(cfg, train_raw, test_raw);
  Rng rng(cfg.seed);
  const Index ny = data.train.y.cols(), nx = data.train.x.cols();
  // marginal model: only its masked view is ever used
  std::unique_ptr<FlowModel> marginal = make_flow(cfg, ny, nx, rng);
  std::unique_ptr<FlowModel> joint = make_flow(cfg, ny, nx, rng);
  AdamState marginal_state(cfg.adam, marginal->parameters());
  AdamState joint_state(cfg.adam, joint->parameters());
  const double shift = data.standardizer.log_scale_x();

  EstimateResult result;
  auto step = [&](const Dataset& batch, long index) {
    double worst = 0.0;
    {
      Tape tape;
      const std::vector<Var> vars = bind_parameters(tape, marginal->parameters());
      const Var l = loss_marginal(*marginal, tape, vars, batch.y, batch.x, index);
      optimizer_step(cfg.optimizer, marginal_state, marginal->parameters(), grads_of(tape, l, vars));
      worst = l.scalar();
    }
    {
      Tape tape;
      const std::vector<Var> vars = bind_parameters(tape, joint->parameters());
      const Var l = loss_joint(*joint, tape, vars, batch.y, batch.x, index);
      optimizer_step(cfg.optimizer, joint_state, joint->parameters(), grads_of(tape, l, vars));
      if (std::abs(l.scalar()) > std::abs(worst)) worst = l.scalar();
    }
    return worst;
  };
  auto evaluate = [&]() {
    // H(X, Y) - H(Y) per sample is exactly the x-group term of the joint flow
    const EntropyEvaluation e = entropy_summary(conditional_nll(*joint, data.test.y, data.test.x),
                                                marginal_nll(*marginal, data.test.y, data.test.x));
    const double l1 = e.l1 + shift;
    const double l2 = e.l2 + shift;
    return EpochRecord{0, 0, l1, l2, l2 - l1};
  };
  result.steps = run_epochs(cfg, data.train, rng, result.trace, step, evaluate);

  const EpochRecord& fin = result.trace.back();
  result.l1 = fin.l1;
  result.l2 = fin.l2;
  result.mi_hat = fin.l2 - fin.l1;
  result.epochs = cfg.epochs;
  result.train_size = data.train.size();
  result.test_size = data.test.size();
  result.standardizer = data.standardizer;
  return result;
}

// --- parametric difference of entropies -------------------------------------

namespace {

// softplus^{-1}(1): raw scale producing unit sigma at init
const double kUnitScaleRaw = std::log(std::expm1(1.0));

}  // namespace

DoeModel::DoeModel(DoeFamily family, Index n_target, Index n_cond, Index hidden, int layers, Rng& rng)
    : family_(family), n_target_(n_target) {
  if (n_target < 1 || n_cond < 1) throw DomainError("doe: empty variable");
  params_.push_back(Matrix::Zero(1, n_target));
  params_.push_back(Matrix::Constant(1, 1, kUnitScaleRaw));
  std::vector<Index> widths{n_cond};
  for (int l = 0; l < layers; ++l) widths.push_back(hidden);
  widths.push_back(2 * n_target);
  conditioner_ = Mlp(params_, widths, Activation::Softplus, rng, 0.1);
}

Var DoeModel::log_density(Tape& tape, const Var& loc, const Var& scale_raw, const Matrix& target) const {
  const Var sigma = add_constant(softplus(scale_raw), Matrix::Constant(1, 1, 1e-6));
  const Var log_sigma = log(sigma);
  const Var diff = add(tape.constant(target), scale(loc, -1.0));
  const Var z = hadamard(diff, exp(scale(log_sigma, -1.0)));
  Var elem;
  if (family_ == DoeFamily::Gaussian) {
    elem = add_constant(add(scale(hadamard(z, z), -0.5), scale(log_sigma, -1.0)), Matrix::Constant(1, 1, -0.5 * kLog2Pi));
  } else {
    // log of e^{-z} / (sigma (1 + e^{-z})^2)
    elem = add(add(scale(z, -1.0), scale(softplus(scale(z, -1.0)), -2.0)), scale(log_sigma, -1.0));
  }
  return scale(sum(elem), 1.0 / static_cast<double>(target.rows()));
}

Var DoeModel::marginal_loss(Tape& tape, std::span<const Var> p, const Matrix& target) const {
  if (target.cols() != n_target_) throw DimensionError("doe: target width mismatch");
  return scale(log_density(tape, p[0], p[1], target), -1.0);
}

Var DoeModel::conditional_loss(Tape& tape, std::span<const Var> p, const Matrix& target, const Matrix& cond) const {
  if (target.cols() != n_target_ || cond.cols() != conditioner_.in_width() || target.rows() != cond.rows()) {
    throw DimensionError("doe: conditional input mismatch");
  }
  const Var out = conditioner_(p, tape.constant(cond));
  const Var loc = slice_cols(out, 0, n_target_);
  const Var raw = add_constant(slice_cols(out, n_target_, n_target_), Matrix::Constant(1, 1, kUnitScaleRaw));
  return scale(log_density(tape, loc, raw, target), -1.0);
}

EstimateResult train_doe_parametric(const EstimatorConfig& cfg, const Dataset& train_raw, const Dataset& test_raw,
                                    DoeFamily family) {
  const Prepared data = prepare(cfg, train_raw, test_raw);
  Rng rng(cfg.seed);
  // the modelled variable is y, conditioned on x: I = H(Y) - H(Y|X)
  DoeModel model(family, data.train.y.cols(), data.train.x.cols(), cfg.critic_hidden, cfg.critic_layers, rng);
  std::vector<Matrix>& params = model.parameters();
  AdamState state(cfg.adam, params);
  const double shift = data.standardizer.log_scale_y();
  const std::size_t split = model.marginal_count();

  auto losses = [&](Tape& tape, const std::vector<Var>& vars, const Dataset& d) {
    return std::pair{model.marginal_loss(tape, vars, d.y), model.conditional_loss(tape, vars, d.y, d.x)};
  };

  EstimateResult result;
  auto step = [&](const Dataset& batch, long index) {
    Tape tape;
    const std::vector<Var> vars = bind_parameters(tape, params);
    const auto [marg, cond] = losses(tape, vars, batch);
    check_loss(marg, "doe marginal", index);
    check_loss(cond, "doe conditional", index);
    // parameter sets are disjoint, so one backward pass serves both losses
    std::vector<Matrix> grads = grads_of(tape, add(marg, cond), vars);
    if (cfg.grad_clip > 0.0) {
      clip_grad_norm(std::span<Matrix>(grads).subspan(0, split), cfg.grad_clip);
      clip_grad_norm(std::span<Matrix>(grads).subspan(split), cfg.grad_clip);
    }
    optimizer_step(cfg.optimizer, state, params, grads);
    return std::abs(marg.scalar()) > std::abs(cond.scalar()) ? marg.scalar() : cond.scalar();
  };
  auto evaluate = [&]() {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& p : params) vars.push_back(tape.constant(p));
    const auto [marg, cond] = losses(tape, vars, data.test);
    const double l1 = cond.scalar() + shift;
    const double l2 = marg.scalar() + shift;
    return EpochRecord{0, 0, l1, l2, l2 - l1};
  };
  result.steps = run_epochs(cfg, data.train, rng, result.trace, step, evaluate);

  const EpochRecord& fin = result.trace.back();
  result.l1 = fin.l1;
  result.l2 = fin.l2;
  result.mi_hat = fin.l2 - fin.l1;
  result.epochs = cfg.epochs;
  result.train_size = data.train.size();
  result.test_size = data.test.size();
  result.standardizer = data.standardizer;
  return result;
}

// --- critics --------------------------------------------------------------------

Critic::Critic(Index n_x, Index n_y, Index hidden, int layers, Rng& rng, bool output_bias) {
  std::vector<Index> widths{n_x + n_y};
  for (int l = 0; l < layers; ++l) widths.push_back(hidden);
  widths.push_back(1);
  net_ = Mlp(params_, widths, Activation::Softplus, rng, 1.0, output_bias);
}

bool critic_output_bias(EstimatorKind kind) { return kind != EstimatorKind::Mine && kind != EstimatorKind::InfoNce; }

Var Critic::score(Tape& tape, std::span<const Var> p, const Matrix& x, const Matrix& y) const {
  if (x.rows() != y.rows() || x.cols() + y.cols() != net_.in_width()) throw DimensionError("critic: input mismatch");
  Matrix xy(x.rows(), x.cols() + y.cols());
  xy << x, y;
  return net_(p, tape.constant(std::move(xy)));
}

Var Critic::score_matrix(Tape& tape, std::span<const Var> p, const Matrix& x, const Matrix& y) const {
  const Index m = x.rows();
  if (y.rows() != m) throw DimensionError("critic: batch mismatch");
  Matrix xs(m * m, x.cols()), ys(m * m, y.cols());
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      xs.row(i * m + j) = x.row(i);
      ys.row(i * m + j) = y.row(j);
    }
  }
  return reshape(score(tape, p, xs, ys), m, m);
}

std::vector<Index> sattolo_derangement(Index n, Rng& rng) {
  if (n < 2) throw DomainError("derangement needs n >= 2");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    std::swap(idx[static_cast<std::size_t>(i)], idx[rng.below(static_cast<std::uint64_t>(i))]);
  }
  return idx;
}

namespace {

// log mean exp over a column, as [1 x 1]
Var log_mean_exp(const Var& col) {
  const Index n = col.rows();
  return add_constant(logsumexp_rows(reshape(col, 1, n)), Matrix::Constant(1, 1, -std::log(static_cast<double>(n))));
}

Matrix gather_rows(const Matrix& m, std::span<const Index> idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

// InfoNCE from a realized score matrix; each row term min(0, .) removes
// rounding above the exact cap log M.
double infonce_value(const Matrix& s) {
  const Index m = s.rows();
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    const RowVector row = s.row(i);
    total += std::min(0.0, s(i, i) - logsumexp(row));
  }
  return std::min(total / static_cast<double>(m) + std::log(static_cast<double>(m)), std::log(static_cast<double>(m)));
}

}  // namespace

Var critic_bound(EstimatorKind kind, const Critic& critic, Tape& tape, std::span<const Var> p, const Matrix& x,
                 const Matrix& y, std::span<const Index> derangement, double smile_tau) {
  const Index m = x.rows();
  if (kind == EstimatorKind::InfoNce) {
    const Var s = critic.score_matrix(tape, p, x, y);
    const Var diag = sum_rows(hadamard(s, tape.constant(Matrix::Identity(m, m))));
    const Var per_row = add(diag, scale(logsumexp_rows(s), -1.0));
    return add_constant(mean(per_row), Matrix::Constant(1, 1, std::log(static_cast<double>(m))));
  }
  if (static_cast<Index>(derangement.size()) != m) throw DimensionError("critic: derangement size mismatch");
  const Var joint = critic.score(tape, p, x, y);
  Var marg = critic.score(tape, p, x, gather_rows(y, derangement));
  switch (kind) {
    case EstimatorKind::Nwj:
      return add(mean(joint), scale(mean(exp(marg)), -std::exp(-1.0)));
    case EstimatorKind::Smile:
      if (std::isfinite(smile_tau)) {
        // clamp(f, -tau, tau) as f .* keep + fill, keep/fill fixed by the forward value
        const Matrix& f = marg.value();
        const Matrix keep = (f.array().abs() <= smile_tau).cast<double>().matrix();
        const Matrix fill = (f.array() > smile_tau).cast<double>() * smile_tau - (f.array() < -smile_tau).cast<double>() * smile_tau;
        marg = add_constant(hadamard(marg, tape.constant(keep)), fill.matrix());
      }
      [[fallthrough]];
    case EstimatorKind::Mine:
      return add(mean(joint), scale(log_mean_exp(marg), -1.0));
    default:
      throw ContractError("critic_bound: not a critic estimator");
  }
}

Var critic_objective(EstimatorKind kind, const Critic& critic, Tape& tape, std::span<const Var> p, const Matrix& x,
                     const Matrix& y, std::span<const Index> derangement) {
  if (kind != EstimatorKind::Smile) {
    return critic_bound(kind, critic, tape, p, x, y, derangement, std::numeric_limits<double>::infinity());
  }
  if (static_cast<Index>(derangement.size()) != x.rows()) throw DimensionError("critic: derangement size mismatch");
  const Var joint = critic.score(tape, p, x, y);
  const Var marg = critic.score(tape, p, x, gather_rows(y, derangement));
  return scale(add(mean(softplus(scale(joint, -1.0))), mean(softplus(marg))), -1.0);
}

EstimateResult train_critic(const EstimatorConfig& cfg, const Dataset& train_raw, const Dataset& test_raw) {
  const Prepared data = prepare(cfg, train_raw, test_raw);
  if (cfg.kind == EstimatorKind::InfoNce && data.test.size() < cfg.batch_size) {
    throw DomainError("infonce: test set smaller than one batch");
  }
  if (data.test.size() < 2) throw DomainError("critic: test set needs at least two rows");
  Rng rng(cfg.seed);
  Critic critic(data.train.x.cols(), data.train.y.cols(), cfg.critic_hidden, cfg.critic_layers, rng,
                critic_output_bias(cfg.kind));
  std::vector<Matrix>& params = critic.parameters();
  AdamState state(cfg.adam, params);
  const double tau = cfg.kind == EstimatorKind::Smile ? cfg.smile_tau : std::numeric_limits<double>::infinity();

  EstimateResult result;
  auto step = [&](const Dataset& batch, long index) {
    std::vector<Index> perm;
    if (cfg.kind != EstimatorKind::InfoNce) perm = sattolo_derangement(batch.size(), rng);
    Tape tape;
    const std::vector<Var> vars = bind_parameters(tape, params);
    const Var objective = critic_objective(cfg.kind, critic, tape, vars, batch.x, batch.y, perm);
    check_loss(objective, "critic objective", index);
    optimizer_step(cfg.optimizer, state, params, grads_of(tape, scale(objective, -1.0), vars));
    return objective.scalar();
  };
  auto evaluate = [&]() {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& p : params) vars.push_back(tape.constant(p));
    result.batch_estimates.clear();
    double mi = 0.0;
    if (cfg.kind == EstimatorKind::InfoNce) {
      const Index batches = data.test.size() / cfg.batch_size;
      for (Index b = 0; b < batches; ++b) {
        const Index at = b * cfg.batch_size;
        const Matrix xs = data.test.x.middleRows(at, cfg.batch_size);
        const Matrix ys = data.test.y.middleRows(at, cfg.batch_size);
        Tape t;
        std::vector<Var> v;
        for (const Matrix& p : params) v.push_back(t.constant(p));
        result.batch_estimates.push_back(infonce_value(critic.score_matrix(t, v, xs, ys).value()));
      }
      for (double e : result.batch_estimates) mi += e;
      mi /= static_cast<double>(result.batch_estimates.size());
    } else {
      // fixed evaluation pairing so every epoch sees the same negatives
      Rng eval_rng(mix_seed(cfg.seed, 0xe7a1));
      const std::vector<Index> perm = sattolo_derangement(data.test.size(), eval_rng);
      mi = critic_bound(cfg.kind, critic, tape, vars, data.test.x, data.test.y, perm, tau).scalar();
      result.batch_estimates.push_back(mi);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return EpochRecord{0, 0, nan, nan, mi};
  };
  result.steps = run_epochs(cfg, data.train, rng, result.trace, step, evaluate);

  result.mi_hat = result.trace.back().mi;
  result.epochs = cfg.epochs;
  result.train_size = data.train.size();
  result.test_size = data.test.size();
  result.standardizer = data.standardizer;
  return result;
}

EstimateResult estimate(const EstimatorConfig& cfg, const Dataset& train, const Dataset& test) {
  switch (cfg.kind) {
    case EstimatorKind::Ndoe: return train_ndoe(cfg, train, test);
    case EstimatorKind::BnafSeparate: return train_bnaf_separate(cfg, train, test);
    case EstimatorKind::DoeGaussian: return train_doe_parametric(cfg, train, test, DoeFamily::Gaussian);
    case EstimatorKind::DoeLogistic: return train_doe_parametric(cfg, train, test, DoeFamily::Logistic);
    default: return train_critic(cfg, train, test);
  }
}

}  // namespace ndoe
