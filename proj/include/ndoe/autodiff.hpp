#pragma once

// Tape-based reverse-mode differentiation. Forward values are computed
// eagerly when an op is recorded; backward() replays the tape in reverse.
//
// The op vocabulary is closed. Elementwise binary ops (add, hadamard) accept
// a second operand that broadcasts as a scalar [1x1], a row [1xC] or a
// column [Rx1].

#include "ndoe/core.hpp"

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace ndoe {

class Tape;

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Add,
  Hadamard,
  Tanh,
  Exp,
  Log,
  LogSumExpRows,
  Sum,
  SumRows,
  Slice,
  Concat,
  Scale,
  Softplus,
  Reshape,
};

const char* op_name(OpKind op);

// Handle to a node on a tape. Cheap to copy; valid as long as the tape is.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  // Value of a [1x1] node.
  double scalar() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradient of one root with respect to every node of the tape.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Matrix> grads, std::vector<std::pair<Index, Index>> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  // Zero-filled when the node was not reachable from the root.
  Matrix operator[](const Var& v) const;
  bool reached(const Var& v) const { return grads_.at(v.id()).size() != 0; }

 private:
  std::vector<Matrix> grads_;
  std::vector<std::pair<Index, Index>> shapes_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf (a parameter).
  Var variable(Matrix value);
  // Non-differentiable input; backward never propagates into it.
  Var constant(Matrix value);

  const Matrix& value(const Var& v) const { return nodes_.at(v.id()).value; }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(const Var& v) const { return nodes_.at(v.id()).op; }

  // root must be [1x1].
  Gradients backward(const Var& root) const;

  struct Node {
    OpKind op = OpKind::Leaf;
    std::array<std::size_t, 2> in{};
    int n_in = 0;
    bool needs_grad = false;
    Matrix value;
    double scalar = 0.0;
    Index a = 0;  // slice offset
    Index b = 0;  // slice length
    int axis = 0;
  };

  Var push(Node node);
  const Node& node(std::size_t id) const { return nodes_[id]; }

 private:
  std::deque<Node> nodes_;  // deque keeps value references stable
};

// --- recorded ops -------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var softplus(const Var& x);
Var scale(const Var& x, double c);
// [R x C] -> [R x 1]
Var logsumexp_rows(const Var& x);
// [R x C] -> [1 x 1]
Var sum(const Var& x);
// [R x C] -> [R x 1]
Var sum_rows(const Var& x);
// axis 0 slices rows, axis 1 slices columns.
Var slice(const Var& x, int axis, Index offset, Index length);
Var concat(const Var& a, const Var& b, int axis);
// Row-major reshape.
Var reshape(const Var& x, Index rows, Index cols);

inline Var slice_cols(const Var& x, Index offset, Index length) { return slice(x, 1, offset, length); }
inline Var concat_cols(const Var& a, const Var& b) { return concat(a, b, 1); }

// Composites built from the vocabulary above.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }
Var add_constant(const Var& x, const Matrix& c);
Var mean(const Var& x);
// log(sigmoid(x)) = -softplus(-x)
Var log_sigmoid(const Var& x);
// log(1 - tanh(x)^2), elementwise
Var log_tanh_prime(const Var& x);
// Per-row standard normal log density, [R x C] -> [R x 1].
Var std_normal_logpdf_rows(const Var& z);

// --- certification ------------------------------------------------------

// Builds a scalar loss from parameter leaves on a fresh tape.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

std::vector<Var> bind_parameters(Tape& tape, std::span<const Matrix> params);
// Analytic gradients of the loss w.r.t. each parameter.
std::vector<Matrix> gradients(const LossBuilder& f, std::span<const Matrix> params, double* loss = nullptr);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
};

// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
GradCheckReport grad_check(const LossBuilder& f, std::span<const Matrix> params, double h = 1e-6);

}  // namespace ndoe
