#pragma once

// Dense numeric substrate: matrix aliases, error types, stable scalar kernels
// and the seeded random stream shared by every other module.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ndoe {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// All computation is 64-bit, row-major.
using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Vector = VectorX<double>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value produced inside a numeric pipeline. `where` is a layer or
// batch index, -1 when unknown.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long where = -1)
      : std::runtime_error(what), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

std::string shape_string(Index rows, Index cols);

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

// Checked matrix product.
template <typename A, typename B>
auto matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.rows(), a.cols()) + " * " +
                         shape_string(b.rows(), b.cols()));
  }
  MatrixX<Scalar> out = a * b;
  return out;
}

// log(sum(exp(v))) with max shift.
template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw DomainError("logsumexp: empty input");
  const Scalar m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

// Row-wise logsumexp; returns a column vector.
template <typename Derived>
VectorX<typename Derived::Scalar> logsumexp_rows(const Eigen::MatrixBase<Derived>& m) {
  if (m.cols() == 0) throw DomainError("logsumexp_rows: empty rows");
  VectorX<typename Derived::Scalar> out(m.rows());
  for (Index r = 0; r < m.rows(); ++r) out(r) = logsumexp(m.row(r));
  return out;
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                        : std::exp(x) / (Scalar(1) + std::exp(x));
}

// log(1 - tanh(x)^2) = 2 (ln 2 - x - softplus(-2x)).
template <typename Scalar>
Scalar log_tanh_prime(Scalar x) {
  return Scalar(2) * (std::numbers::ln2_v<Scalar> - x - softplus(Scalar(-2) * x));
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Log density of a standard normal vector.
template <typename Derived>
typename Derived::Scalar std_normal_logpdf(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  if (z.size() == 0) throw DomainError("std_normal_logpdf: empty input");
  return Scalar(-0.5) * Scalar(z.size()) * Scalar(kLog2Pi) - Scalar(0.5) * z.squaredNorm();
}

// Standard normal CDF.
template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * std::erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

// xoshiro256** seeded through splitmix64. Single owner; copying forks the
// stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  // Box-Muller; the spare deviate is cached.
  double normal();
  // Marsaglia-Tsang, shape > 0, unit scale.
  double gamma(double shape);
  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Matrix normal_matrix(Index rows, Index cols);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
// Stateless 64-bit mix, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t fnv1a(const std::string& s);

// mean + chol * zeta, zeta ~ N(0, I). chol must be lower triangular with a
// positive diagonal (the all-zero matrix is accepted as the degenerate case).
Vector sample_gaussian(Rng& rng, const Vector& mean, const Matrix& chol);

}  // namespace ndoe
