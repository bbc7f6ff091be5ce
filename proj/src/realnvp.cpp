#include "ndoe/flows.hpp"

#include <cmath>

namespace ndoe {

namespace {

struct Part {
  Index cond_offset, cond_size, out_offset, out_size;
};

Part partition(Index n, int parity) {
  if (n == 1) return {0, 0, 0, 1};
  const Index half = n / 2;
  if (parity == 0) return {0, half, half, n - half};
  return {half, n - half, 0, half};
}

}  // namespace

RealNvpFlow::RealNvpFlow(const RealNvpSpec& spec) : FlowModel(spec.n_y, spec.n_x), spec_(spec) {
  if (spec.coupling_layers < 1) throw DomainError("realnvp: need at least one coupling layer");
  if (spec.hidden_units < 1) throw DomainError("realnvp: hidden width must be >= 1");
  if (!(spec.scale_clamp > 0.0)) throw DomainError("realnvp: scale clamp must be positive");
}

RealNvpFlow::RealNvpFlow(const RealNvpSpec& spec, Rng& rng) : RealNvpFlow(spec) { build_layers(&rng); }

RealNvpFlow RealNvpFlow::zeros(const RealNvpSpec& spec) {
  RealNvpFlow f(spec);
  f.build_layers(nullptr);
  return f;
}

RealNvpFlow::Net RealNvpFlow::add_net(const std::string& prefix, Index in, Index out, Rng* rng) {
  const Index hidden = spec_.hidden_units;
  Matrix w1 = Matrix::Zero(in, hidden);
  Matrix w2 = Matrix::Zero(hidden, out);
  if (rng != nullptr) {
    const double sd1 = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(in, 1)));
    const double sd2 = 0.1 / std::sqrt(static_cast<double>(hidden));
    for (Index i = 0; i < w1.size(); ++i) w1.data()[i] = sd1 * rng->normal();
    for (Index i = 0; i < w2.size(); ++i) w2.data()[i] = sd2 * rng->normal();
  }
  Net net;
  net.w1 = add_parameter(prefix + ".w1", std::move(w1));
  net.b1 = add_parameter(prefix + ".b1", Matrix::Zero(1, hidden));
  net.w2 = add_parameter(prefix + ".w2", std::move(w2));
  net.b2 = add_parameter(prefix + ".b2", Matrix::Zero(1, out));
  return net;
}

void RealNvpFlow::build_layers(Rng* rng) {
  for (int l = 0; l < spec_.coupling_layers; ++l) {
    const int parity = l % 2;
    const Part py = partition(n_y_, parity);
    const Part px = partition(n_x_, parity);
    Layer L;
    L.py = {py.cond_offset, py.cond_size, py.out_offset, py.out_size};
    L.px = {px.cond_offset, px.cond_size, px.out_offset, px.out_size};
    const std::string tag = "layer" + std::to_string(l);
    L.s_y = add_net(tag + ".s_y", py.cond_size, py.out_size, rng);
    L.t_y = add_net(tag + ".t_y", py.cond_size, py.out_size, rng);
    L.s_x = add_net(tag + ".s_x", px.cond_size + n_y_, px.out_size, rng);
    L.t_x = add_net(tag + ".t_x", px.cond_size + n_y_, px.out_size, rng);
    layers_.push_back(L);
  }
}

nlohmann::json RealNvpFlow::architecture() const {
  return {{"n_y", spec_.n_y},
          {"n_x", spec_.n_x},
          {"coupling_layers", spec_.coupling_layers},
          {"hidden_units", spec_.hidden_units},
          {"scale_clamp", spec_.scale_clamp}};
}

std::vector<Matrix> RealNvpFlow::live_entries(MaskState state) const {
  std::vector<Matrix> live;
  live.reserve(params_.size());
  for (const Matrix& p : params_) live.push_back(Matrix::Ones(p.rows(), p.cols()));
  if (state == MaskState::Masked) {
    for (const Layer& L : layers_) {
      // trailing n_y rows of the x-conditioner input weights read y
      live[L.s_x.w1].bottomRows(n_y_).setZero();
      live[L.t_x.w1].bottomRows(n_y_).setZero();
    }
  }
  return live;
}

FlowForward RealNvpFlow::forward(Tape& tape, std::span<const Var> p, const Matrix& y, const Matrix& x,
                                 MaskState state) const {
  if (p.size() != params_.size()) throw ContractError("realnvp: parameter binding has the wrong size");
  if (y.cols() != n_y_ || x.cols() != n_x_ || y.rows() != x.rows()) {
    throw DimensionError("realnvp: inputs do not match groups");
  }
  const Index batch = y.rows();
  const double clamp = spec_.scale_clamp;

  auto mlp = [&](const Var* input, const Net& net) {
    Var pre;
    if (input == nullptr) {
      pre = add(tape.constant(Matrix::Zero(batch, spec_.hidden_units)), p[net.b1]);
    } else {
      pre = add(matmul(*input, p[net.w1]), p[net.b1]);
    }
    return add(matmul(tanh(pre), p[net.w2]), p[net.b2]);
  };
  // Affine coupling of `group`; returns the new group and the log scales.
  auto couple = [&](const Var& group, const Partition& part, const Var* cond, const Net& s_net,
                    const Net& t_net) {
    const Var target = slice_cols(group, part.out_offset, part.out_size);
    const Var s = scale(tanh(scale(mlp(cond, s_net), 1.0 / clamp)), clamp);
    const Var t = mlp(cond, t_net);
    const Var moved = add(hadamard(target, exp(s)), t);
    if (part.cond_size == 0) return std::pair{moved, s};
    const Var kept = slice_cols(group, part.cond_offset, part.cond_size);
    return std::pair{part.out_offset == 0 ? concat_cols(moved, kept) : concat_cols(kept, moved), s};
  };

  Var yv = tape.constant(y);
  Var xv = tape.constant(x);
  Var logdet_y = tape.constant(Matrix::Zero(batch, 1));
  Var logdet_x = tape.constant(Matrix::Zero(batch, 1));
  const Var no_y = tape.constant(Matrix::Zero(batch, n_y_));

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const Var y_in = yv;

    Var y_cond;
    if (L.py.cond_size > 0) y_cond = slice_cols(yv, L.py.cond_offset, L.py.cond_size);
    auto [y_new, s_y] = couple(yv, L.py, L.py.cond_size > 0 ? &y_cond : nullptr, L.s_y, L.t_y);

    const Var y_feed = state == MaskState::Active ? y_in : no_y;
    Var x_cond = y_feed;
    if (L.px.cond_size > 0) x_cond = concat_cols(slice_cols(xv, L.px.cond_offset, L.px.cond_size), y_feed);
    auto [x_new, s_x] = couple(xv, L.px, &x_cond, L.s_x, L.t_x);

    if (!all_finite(y_new.value()) || !all_finite(x_new.value())) {
      throw NumericError("realnvp: non-finite values in layer " + std::to_string(l), static_cast<long>(l));
    }
    yv = y_new;
    xv = x_new;
    logdet_y = add(logdet_y, sum_rows(s_y));
    logdet_x = add(logdet_x, sum_rows(s_x));
  }

  FlowForward out;
  out.f1 = yv;
  out.f2 = xv;
  out.logdet_y = logdet_y;
  out.logdet_x = logdet_x;
  return out;
}

std::pair<Matrix, Matrix> RealNvpFlow::inverse(const Matrix& f1, const Matrix& f2, MaskState state) const {
  const Index batch = f1.rows();
  const double clamp = spec_.scale_clamp;
  auto mlp = [&](const Matrix* input, const Net& net) -> Matrix {
    Matrix pre = input == nullptr ? Matrix(Matrix::Zero(batch, spec_.hidden_units)) : Matrix(*input * params_[net.w1]);
    pre.rowwise() += params_[net.b1].row(0);
    Matrix out = pre.array().tanh().matrix() * params_[net.w2];
    out.rowwise() += params_[net.b2].row(0);
    return out;
  };
  auto uncouple = [&](Matrix& group, const Partition& part, const Matrix* cond, const Net& s_net, const Net& t_net) {
    const Matrix s = (mlp(cond, s_net) / clamp).array().tanh().matrix() * clamp;
    const Matrix t = mlp(cond, t_net);
    auto target = group.middleCols(part.out_offset, part.out_size);
    target = ((target - t).array() * (-s).array().exp()).matrix();
  };

  Matrix yv = f1;
  Matrix xv = f2;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& L = layers_[l];
    // y first: the x conditioner reads the layer's input y
    Matrix y_cond = yv.middleCols(L.py.cond_offset, L.py.cond_size);
    uncouple(yv, L.py, L.py.cond_size > 0 ? &y_cond : nullptr, L.s_y, L.t_y);

    const Matrix y_feed = state == MaskState::Active ? yv : Matrix(Matrix::Zero(batch, n_y_));
    Matrix x_cond(batch, L.px.cond_size + n_y_);
    x_cond.leftCols(L.px.cond_size) = xv.middleCols(L.px.cond_offset, L.px.cond_size);
    x_cond.rightCols(n_y_) = y_feed;
    uncouple(xv, L.px, &x_cond, L.s_x, L.t_x);
  }
  return {yv, xv};
}

}  // namespace ndoe
