#include "ndoe/autodiff.hpp"

#include <algorithm>

namespace ndoe {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Hadamard: return "hadamard";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::LogSumExpRows: return "logsumexp-rows";
    case OpKind::Sum: return "sum";
    case OpKind::SumRows: return "sum-rows";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Scale: return "scale";
    case OpKind::Softplus: return "softplus";
    case OpKind::Reshape: return "reshape";
  }
  return "?";
}

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("Var::scalar on " + shape_string(v.rows(), v.cols()));
  }
  return v(0, 0);
}

Matrix Gradients::operator[](const Var& v) const {
  const Matrix& g = grads_.at(v.id());
  if (g.size() != 0) return g;
  const auto [r, c] = shapes_.at(v.id());
  return Matrix::Zero(r, c);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  Node n;
  n.op = OpKind::Leaf;
  n.needs_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

namespace {

enum class Bcast { Full, Row, Col, Scalar };

Bcast broadcast_kind(const Matrix& full, const Matrix& b, const char* op) {
  if (b.rows() == full.rows() && b.cols() == full.cols()) return Bcast::Full;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == full.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == full.rows()) return Bcast::Col;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b.rows(), b.cols()) +
                       " to " + shape_string(full.rows(), full.cols()));
}

Matrix expand(const Matrix& b, Bcast kind, Index rows, Index cols) {
  switch (kind) {
    case Bcast::Full: return b;
    case Bcast::Row: return b.replicate(rows, 1);
    case Bcast::Col: return b.replicate(1, cols);
    case Bcast::Scalar: return Matrix::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Matrix reduce(const Matrix& g, Bcast kind) {
  switch (kind) {
    case Bcast::Full: return g;
    case Bcast::Row: return g.colwise().sum();
    case Bcast::Col: return g.rowwise().sum();
    case Bcast::Scalar: return Matrix::Constant(1, 1, g.sum());
  }
  return g;
}

void accumulate(Matrix& slot, const Matrix& g) {
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

struct Attrs {
  double scalar = 0.0;
  int axis = 0;
  Index a = 0;
  Index b = 0;
};

Var unary(OpKind op, const Var& x, Matrix value, Attrs attrs = {}) {
  Tape::Node n;
  n.op = op;
  n.axis = attrs.axis;
  n.a = attrs.a;
  n.b = attrs.b;
  n.in[0] = x.id();
  n.n_in = 1;
  n.needs_grad = x.tape().node(x.id()).needs_grad;
  n.value = std::move(value);
  n.scalar = attrs.scalar;
  return x.tape().push(std::move(n));
}

Var binary(OpKind op, const Var& a, const Var& b, Matrix value, int axis = 0) {
  Tape& t = same_tape(a, b);
  Tape::Node n;
  n.op = op;
  n.axis = axis;
  n.in = {a.id(), b.id()};
  n.n_in = 2;
  n.needs_grad = t.node(a.id()).needs_grad || t.node(b.id()).needs_grad;
  n.value = std::move(value);
  return t.push(std::move(n));
}

// Orders operands so the first has the full shape.
std::pair<Var, Var> full_first(const Var& a, const Var& b) {
  if (b.rows() >= a.rows() && b.cols() >= a.cols() && (b.rows() > a.rows() || b.cols() > a.cols())) {
    return {b, a};
  }
  return {a, b};
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  same_tape(a, b);
  return binary(OpKind::MatMul, a, b, ndoe::matmul(a.value(), b.value()));
}

Var add(const Var& a0, const Var& b0) {
  const auto [a, b] = full_first(a0, b0);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  switch (broadcast_kind(av, bv, "add")) {
    case Bcast::Full: out = av + bv; break;
    case Bcast::Row: out = av.rowwise() + bv.row(0); break;
    case Bcast::Col: out = av.colwise() + bv.col(0); break;
    case Bcast::Scalar: out = av.array() + bv(0, 0); break;
  }
  return binary(OpKind::Add, a, b, std::move(out));
}

Var hadamard(const Var& a0, const Var& b0) {
  const auto [a, b] = full_first(a0, b0);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  switch (broadcast_kind(av, bv, "hadamard")) {
    case Bcast::Full: out = av.cwiseProduct(bv); break;
    case Bcast::Row: out = av.array().rowwise() * bv.row(0).array(); break;
    case Bcast::Col: out = av.array().colwise() * bv.col(0).array(); break;
    case Bcast::Scalar: out = av * bv(0, 0); break;
  }
  return binary(OpKind::Hadamard, a, b, std::move(out));
}

Var tanh(const Var& x) { return unary(OpKind::Tanh, x, x.value().array().tanh().matrix()); }
Var exp(const Var& x) { return unary(OpKind::Exp, x, x.value().array().exp().matrix()); }
Var log(const Var& x) { return unary(OpKind::Log, x, x.value().array().log().matrix()); }

Var softplus(const Var& x) {
  return unary(OpKind::Softplus, x, x.value().unaryExpr([](double v) { return ndoe::softplus(v); }));
}

Var scale(const Var& x, double c) { return unary(OpKind::Scale, x, x.value() * c, {.scalar = c}); }

Var logsumexp_rows(const Var& x) {
  return unary(OpKind::LogSumExpRows, x, ndoe::logsumexp_rows(x.value()));
}

Var sum(const Var& x) { return unary(OpKind::Sum, x, Matrix::Constant(1, 1, x.value().sum())); }

Var sum_rows(const Var& x) { return unary(OpKind::SumRows, x, x.value().rowwise().sum()); }

Var slice(const Var& x, int axis, Index offset, Index length) {
  const Matrix& v = x.value();
  const Index extent = axis == 0 ? v.rows() : v.cols();
  if (axis != 0 && axis != 1) throw ContractError("slice: axis must be 0 or 1");
  if (offset < 0 || length < 0 || offset + length > extent) {
    throw DimensionError("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of range for " + shape_string(v.rows(), v.cols()));
  }
  Matrix out = axis == 0 ? Matrix(v.middleRows(offset, length)) : Matrix(v.middleCols(offset, length));
  return unary(OpKind::Slice, x, std::move(out), {.axis = axis, .a = offset, .b = length});
}

Var concat(const Var& a, const Var& b, int axis) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (axis == 1) {
    if (av.rows() != bv.rows()) throw DimensionError("concat: row counts differ");
    out.resize(av.rows(), av.cols() + bv.cols());
    out << av, bv;
  } else if (axis == 0) {
    if (av.cols() != bv.cols()) throw DimensionError("concat: column counts differ");
    out.resize(av.rows() + bv.rows(), av.cols());
    out << av, bv;
  } else {
    throw ContractError("concat: axis must be 0 or 1");
  }
  return binary(OpKind::Concat, a, b, std::move(out), axis);
}

Var reshape(const Var& x, Index rows, Index cols) {
  const Matrix& v = x.value();
  if (rows * cols != v.size()) {
    throw DimensionError("reshape: " + shape_string(v.rows(), v.cols()) + " to " + shape_string(rows, cols));
  }
  Matrix out = Eigen::Map<const Matrix>(v.data(), rows, cols);
  return unary(OpKind::Reshape, x, std::move(out));
}

Var add_constant(const Var& x, const Matrix& c) { return add(x, x.tape().constant(c)); }

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var log_sigmoid(const Var& x) { return scale(softplus(scale(x, -1.0)), -1.0); }

Var log_tanh_prime(const Var& x) {
  // 2 (ln 2 - x - softplus(-2x))
  Var s = softplus(scale(x, -2.0));
  Var inner = add(scale(x, -2.0), scale(s, -2.0));
  return add_constant(inner, Matrix::Constant(1, 1, 2.0 * std::numbers::ln2));
}

Var std_normal_logpdf_rows(const Var& z) {
  const double c = -0.5 * static_cast<double>(z.cols()) * kLog2Pi;
  return add_constant(scale(sum_rows(hadamard(z, z)), -0.5), Matrix::Constant(1, 1, c));
}

Gradients Tape::backward(const Var& root) const {
  if (&root.tape() != this) throw ContractError("backward: root is on another tape");
  const Matrix& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractError("backward: root must be scalar, got " + shape_string(rv.rows(), rv.cols()));
  }
  std::vector<Matrix> g(nodes_.size());
  g[root.id()] = Matrix::Ones(1, 1);

  for (std::size_t k = root.id() + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (g[k].size() == 0 || !n.needs_grad || n.n_in == 0) continue;
    const Matrix& G = g[k];
    auto want = [&](int i) { return nodes_[n.in[i]].needs_grad; };
    const Matrix& x = nodes_[n.in[0]].value;

    switch (n.op) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const Matrix& y = nodes_[n.in[1]].value;
        if (want(0)) accumulate(g[n.in[0]], G * y.transpose());
        if (want(1)) accumulate(g[n.in[1]], x.transpose() * G);
        break;
      }
      case OpKind::Add: {
        const Matrix& y = nodes_[n.in[1]].value;
        if (want(0)) accumulate(g[n.in[0]], G);
        if (want(1)) accumulate(g[n.in[1]], reduce(G, broadcast_kind(x, y, "add")));
        break;
      }
      case OpKind::Hadamard: {
        const Matrix& y = nodes_[n.in[1]].value;
        const Bcast kind = broadcast_kind(x, y, "hadamard");
        if (want(0)) accumulate(g[n.in[0]], G.cwiseProduct(expand(y, kind, x.rows(), x.cols())));
        if (want(1)) accumulate(g[n.in[1]], reduce(G.cwiseProduct(x), kind));
        break;
      }
      case OpKind::Tanh:
        accumulate(g[n.in[0]], G.array() * (1.0 - n.value.array().square()));
        break;
      case OpKind::Exp:
        accumulate(g[n.in[0]], G.cwiseProduct(n.value));
        break;
      case OpKind::Log:
        accumulate(g[n.in[0]], G.cwiseQuotient(x));
        break;
      case OpKind::Softplus:
        accumulate(g[n.in[0]], G.cwiseProduct(x.unaryExpr([](double v) { return sigmoid(v); })));
        break;
      case OpKind::Scale:
        accumulate(g[n.in[0]], G * n.scalar);
        break;
      case OpKind::LogSumExpRows: {
        // d/dx_rc = softmax(row r)_c
        Matrix soft = (x.colwise() - n.value.col(0)).array().exp().matrix();
        accumulate(g[n.in[0]], soft.array().colwise() * G.col(0).array());
        break;
      }
      case OpKind::Sum:
        accumulate(g[n.in[0]], Matrix::Constant(x.rows(), x.cols(), G(0, 0)));
        break;
      case OpKind::SumRows:
        accumulate(g[n.in[0]], G.col(0).replicate(1, x.cols()));
        break;
      case OpKind::Slice: {
        Matrix full = Matrix::Zero(x.rows(), x.cols());
        if (n.axis == 0) {
          full.middleRows(n.a, n.b) = G;
        } else {
          full.middleCols(n.a, n.b) = G;
        }
        accumulate(g[n.in[0]], full);
        break;
      }
      case OpKind::Concat: {
        const Matrix& y = nodes_[n.in[1]].value;
        if (n.axis == 1) {
          if (want(0)) accumulate(g[n.in[0]], G.leftCols(x.cols()));
          if (want(1)) accumulate(g[n.in[1]], G.rightCols(y.cols()));
        } else {
          if (want(0)) accumulate(g[n.in[0]], G.topRows(x.rows()));
          if (want(1)) accumulate(g[n.in[1]], G.bottomRows(y.rows()));
        }
        break;
      }
      case OpKind::Reshape:
        accumulate(g[n.in[0]], Eigen::Map<const Matrix>(G.data(), x.rows(), x.cols()));
        break;
    }
  }

  std::vector<std::pair<Index, Index>> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& n : nodes_) shapes.emplace_back(n.value.rows(), n.value.cols());
  return Gradients(std::move(g), std::move(shapes));
}

std::vector<Var> bind_parameters(Tape& tape, std::span<const Matrix> params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(tape.variable(p));
  return vars;
}

std::vector<Matrix> gradients(const LossBuilder& f, std::span<const Matrix> params, double* loss) {
  Tape tape;
  const std::vector<Var> vars = bind_parameters(tape, params);
  const Var root = f(tape, vars);
  if (loss != nullptr) *loss = root.scalar();
  const Gradients g = tape.backward(root);
  std::vector<Matrix> out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(g[v]);
  return out;
}

GradCheckReport grad_check(const LossBuilder& f, std::span<const Matrix> params, double h) {
  std::vector<Matrix> work(params.begin(), params.end());
  const std::vector<Matrix> analytic = gradients(f, work);
  auto eval = [&]() {
    Tape tape;
    const std::vector<Var> vars = bind_parameters(tape, work);
    return f(tape, vars).scalar();
  };

  GradCheckReport report;
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (Index i = 0; i < work[p].size(); ++i) {
      double& w = work[p].data()[i];
      const double saved = w;
      w = saved + h;
      const double up = eval();
      w = saved - h;
      const double down = eval();
      w = saved;
      const double central = (up - down) / (2.0 * h);
      const double a = analytic[p].data()[i];
      const double abs_err = std::abs(a - central);
      const double rel = abs_err / (std::abs(a) + std::abs(central) + 1e-12);
      report.max_rel_error = std::max(report.max_rel_error, rel);
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      ++report.coordinates;
    }
  }
  return report;
}

}  // namespace ndoe
