#pragma once

// Synthetic paired datasets with known mutual information.
//
// Every family is built from per-pair correlated standard normals
// (x_i, y_i) with correlation rho_i, independent across pairs:
//   gaussian         all pairs share one rho
//   sparse-gaussian  only the first two pairs are correlated
//   uniform-copula   Phi applied componentwise (uniform marginals)
//   student-t        both vectors divided by a shared sqrt(chi2_nu / nu)
// followed by an optional strictly monotone marginal transform.

#include "ndoe/core.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndoe {

enum class Family { Gaussian, SparseGaussian, UniformCopula, StudentT };
enum class Transform { None, Cubic, Asinh, Wiggly };

std::string to_string(Family f);
std::string to_string(Transform t);
Family parse_family(const std::string& s);
Transform parse_transform(const std::string& s);

// w(v) = v + sum_j a_j sin(b_j v + c_j); strictly increasing when
// sum_j |a_j b_j| < 1.
struct WigglyParams {
  std::vector<double> a{0.4, 0.2, 0.03};
  std::vector<double> b{1.0, 1.7, 3.3};
  std::vector<double> c{0.0, 1.0, -2.5};

  // Throws ConfigError when the monotonicity bound fails.
  void validate() const;
};

struct BenchmarkTask {
  std::string id = "task";
  Family family = Family::Gaussian;
  Index dim = 1;  // per side
  std::vector<double> rhos;  // one per pair, size dim
  double nu = 5.0;           // student-t only
  Transform transform = Transform::None;
  WigglyParams wiggly;
  Index train_size = 4096;
  Index test_size = 1024;

  // Throws DomainError / ConfigError on invalid settings.
  void validate() const;
};

// Builds the per-pair correlations for a target MI of the underlying
// Gaussian (equal rho on every correlated pair).
BenchmarkTask make_task(std::string id, Family family, Index dim, double target_mi,
                        Transform transform = Transform::None);

struct Dataset {
  Matrix x;  // [N x n_x]
  Matrix y;  // [N x n_y]

  Index size() const { return x.rows(); }
  Dataset rows(std::span<const Index> idx) const;
  Dataset head(Index n) const;
  // Roles of x and y exchanged.
  Dataset swapped() const { return {y, x}; }
};

// I = -1/2 sum log(1 - rho_i^2).
double gaussian_mi(std::span<const double> rhos);
// Equal per-pair rho giving `target` nats over n pairs.
double invert_mi_to_rho(double target, Index n);

// Element-wise monotone maps and their inverses.
double marginal_transform(Transform kind, double v, const WigglyParams& w = {});
Matrix marginal_transform(Transform kind, const Matrix& v, const WigglyParams& w = {});
double inverse_transform(Transform kind, double v, const WigglyParams& w = {});
// log |d/dv inverse_transform(v)|
double log_abs_inverse_derivative(Transform kind, double v, const WigglyParams& w = {});

Dataset sample_task(const BenchmarkTask& task, Rng& rng, Index n);

struct GroundTruth {
  enum class Provenance { Analytic, McOracle };
  double mi = 0.0;
  Provenance provenance = Provenance::Analytic;
  Index samples = 0;
  double std_error = 0.0;
};

class OraclePrecisionError : public std::runtime_error {
 public:
  OraclePrecisionError(const std::string& what, double std_error)
      : std::runtime_error(what), std_error_(std_error) {}
  double std_error() const noexcept { return std_error_; }

 private:
  double std_error_;
};

// Pointwise log p(x, y) / (p(x) p(y)) for observed (transformed) rows,
// evaluated through the known densities and the transform Jacobians.
Vector log_density_ratio(const BenchmarkTask& task, const Dataset& data);

// Monte Carlo mean of the log density ratio with its standard error. Throws
// OraclePrecisionError when the standard error exceeds max_std_error.
GroundTruth mc_oracle_mi(const BenchmarkTask& task, Index n_samples, Rng& rng, double max_std_error = 0.01);

// Analytic value where one exists (gaussian, sparse, uniform copula), the
// Monte Carlo oracle otherwise.
GroundTruth ground_truth(const BenchmarkTask& task, Index oracle_samples = 1'000'000,
                         std::uint64_t oracle_seed = 0x5eed);

}  // namespace ndoe
