#include "ndoe/flows.hpp"

#include <cmath>

namespace ndoe {

namespace {

// Replicates a per-coordinate [B x d] matrix across blocks of `width` units.
Matrix expand_blocks(const Matrix& per_coord, Index width) {
  Matrix out(per_coord.rows(), per_coord.cols() * width);
  for (Index i = 0; i < per_coord.cols(); ++i) {
    out.middleCols(i * width, width) = per_coord.col(i).replicate(1, width);
  }
  return out;
}

// Row-wise max inside each block of `width` units, [B x d a] -> [B x d].
Matrix block_max(const Matrix& m, Index width) {
  const Index d = m.cols() / width;
  Matrix out(m.rows(), d);
  for (Index i = 0; i < d; ++i) out.col(i) = m.middleCols(i * width, width).rowwise().maxCoeff();
  return out;
}

}  // namespace

BnafFlow::BnafFlow(const BnafSpec& spec) : FlowModel(spec.n_y, spec.n_x), spec_(spec) {
  if (spec.hidden_multiplier < 1) throw DomainError("bnaf: hidden multiplier must be >= 1");
  if (spec.hidden_layers < 0) throw DomainError("bnaf: hidden layer count must be >= 0");
}

BnafFlow::BnafFlow(const BnafSpec& spec, Rng& rng) : BnafFlow(spec) { build_layers(&rng); }

BnafFlow BnafFlow::zeros(const BnafSpec& spec) {
  BnafFlow f(spec);
  f.build_layers(nullptr);
  return f;
}

void BnafFlow::build_layers(Rng* rng) {
  const Index d = n_y_ + n_x_;
  const Index m = spec_.hidden_multiplier;
  std::vector<Index> widths{1};
  for (int k = 0; k < spec_.hidden_layers; ++k) widths.push_back(m);
  widths.push_back(1);

  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    Layer L;
    L.in_width = widths[k];
    L.out_width = widths[k + 1];
    L.activation = k + 2 < widths.size();
    L.residual = spec_.gated_residual && L.activation && k > 0 && L.in_width == L.out_width;

    const Index rows = d * L.in_width;
    const Index cols = d * L.out_width;
    L.diag_mask = Matrix::Zero(rows, cols);
    L.lower_mask = Matrix::Zero(rows, cols);
    L.cross = Matrix::Zero(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const Index from = r / L.in_width;
      for (Index c = 0; c < cols; ++c) {
        const Index to = c / L.out_width;
        if (from == to) L.diag_mask(r, c) = 1.0;
        if (from < to) L.lower_mask(r, c) = 1.0;
        if (from < n_y_ && to >= n_y_) L.cross(r, c) = 1.0;
      }
    }
    L.masked_lower = L.lower_mask - L.cross;

    Matrix diag = Matrix::Zero(rows, cols);
    Matrix off = Matrix::Zero(rows, cols);
    if (rng != nullptr) {
      // exp(D) has mean about 1/sqrt(fan_in) on the diagonal blocks
      const double mu = -0.5 * std::log(static_cast<double>(L.in_width));
      const double off_sd = 1.0 / std::sqrt(static_cast<double>(rows));
      for (Index i = 0; i < diag.size(); ++i) {
        if (L.diag_mask.data()[i] != 0.0) diag.data()[i] = mu + 0.1 * rng->normal();
      }
      for (Index i = 0; i < off.size(); ++i) {
        if (L.lower_mask.data()[i] != 0.0) off.data()[i] = off_sd * rng->normal();
      }
    }
    const std::string tag = std::to_string(k);
    L.diag = add_parameter("layer" + tag + ".diag", std::move(diag));
    L.off = add_parameter("layer" + tag + ".off", std::move(off));
    L.bias = add_parameter("layer" + tag + ".bias", Matrix::Zero(1, cols));
    if (L.residual) L.gate = add_parameter("layer" + tag + ".gate", Matrix::Zero(1, 1));
    layers_.push_back(std::move(L));
  }
}

nlohmann::json BnafFlow::architecture() const {
  return {{"n_y", spec_.n_y},
          {"n_x", spec_.n_x},
          {"hidden_multiplier", spec_.hidden_multiplier},
          {"hidden_layers", spec_.hidden_layers},
          {"gated_residual", spec_.gated_residual}};
}

std::vector<Matrix> BnafFlow::live_entries(MaskState state) const {
  std::vector<Matrix> live;
  live.reserve(params_.size());
  for (const Matrix& p : params_) live.push_back(Matrix::Ones(p.rows(), p.cols()));
  for (const Layer& L : layers_) {
    live[L.diag] = L.diag_mask;
    live[L.off] = state == MaskState::Active ? L.lower_mask : L.masked_lower;
  }
  return live;
}

FlowForward BnafFlow::forward(Tape& tape, std::span<const Var> p, const Matrix& y, const Matrix& x,
                              MaskState state) const {
  if (p.size() != params_.size()) throw ContractError("bnaf: parameter binding has the wrong size");
  if (y.cols() != n_y_ || x.cols() != n_x_ || y.rows() != x.rows()) {
    throw DimensionError("bnaf: inputs " + shape_string(y.rows(), y.cols()) + ", " +
                         shape_string(x.rows(), x.cols()) + " do not match groups (" + std::to_string(n_y_) +
                         ", " + std::to_string(n_x_) + ")");
  }
  const Index batch = y.rows();
  const Index d = n_y_ + n_x_;
  Matrix joint(batch, d);
  joint << y, x;

  Var h = tape.constant(std::move(joint));
  // log of the diagonal Jacobian blocks d h_i / d input_i, one column per unit
  Var logj = tape.constant(Matrix::Zero(batch, d));

  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& L = layers_[k];
    const Var pos = hadamard(exp(p[L.diag]), tape.constant(L.diag_mask));
    const Var off =
        hadamard(p[L.off], tape.constant(state == MaskState::Active ? L.lower_mask : L.masked_lower));
    const Var pre = add(matmul(h, add(pos, off)), p[L.bias]);

    // Block product exp(logj_i) * exp(D_ii) in log space, shifted per block.
    const Matrix shift = block_max(logj.value(), L.in_width);
    const Var scaled = exp(add_constant(logj, -expand_blocks(shift, L.in_width)));
    Var lj = add_constant(log(matmul(scaled, pos)), expand_blocks(shift, L.out_width));

    Var hn = pre;
    if (L.activation) {
      hn = tanh(pre);
      lj = add(lj, log_tanh_prime(pre));
    }
    if (L.residual) {
      const Var gate = exp(log_sigmoid(p[L.gate]));
      const Var keep = exp(log_sigmoid(scale(p[L.gate], -1.0)));
      hn = add(hadamard(hn, gate), hadamard(h, keep));
      const Matrix c = lj.value().cwiseMax(logj.value());
      const Var mixed = add(hadamard(exp(add_constant(lj, -c)), gate), hadamard(exp(add_constant(logj, -c)), keep));
      lj = add_constant(log(mixed), c);
    }
    if (!all_finite(hn.value()) || !all_finite(lj.value())) {
      throw NumericError("bnaf: non-finite values in layer " + std::to_string(k), static_cast<long>(k));
    }
    h = hn;
    logj = lj;
  }

  FlowForward out;
  out.f1 = slice_cols(h, 0, n_y_);
  out.f2 = slice_cols(h, n_y_, n_x_);
  out.logdiag_y = slice_cols(logj, 0, n_y_);
  out.logdiag_x = slice_cols(logj, n_y_, n_x_);
  out.logdet_y = sum_rows(out.logdiag_y);
  out.logdet_x = sum_rows(out.logdiag_x);
  return out;
}

}  // namespace ndoe
