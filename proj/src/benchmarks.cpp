#include "ndoe/benchmarks.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <numbers>

namespace ndoe {

std::string to_string(Family f) {
  switch (f) {
    case Family::Gaussian: return "gaussian";
    case Family::SparseGaussian: return "sparse-gaussian";
    case Family::UniformCopula: return "uniform-copula";
    case Family::StudentT: return "student-t";
  }
  return "?";
}

std::string to_string(Transform t) {
  switch (t) {
    case Transform::None: return "none";
    case Transform::Cubic: return "cubic";
    case Transform::Asinh: return "asinh";
    case Transform::Wiggly: return "wiggly";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  if (s == "gaussian") return Family::Gaussian;
  if (s == "sparse-gaussian") return Family::SparseGaussian;
  if (s == "uniform-copula") return Family::UniformCopula;
  if (s == "student-t") return Family::StudentT;
  throw ConfigError("unknown task family '" + s + "'");
}

Transform parse_transform(const std::string& s) {
  if (s == "none" || s.empty()) return Transform::None;
  if (s == "cubic") return Transform::Cubic;
  if (s == "asinh") return Transform::Asinh;
  if (s == "wiggly") return Transform::Wiggly;
  throw ConfigError("unknown marginal transform '" + s + "'");
}

void WigglyParams::validate() const {
  if (a.size() != b.size() || a.size() != c.size()) throw ConfigError("wiggly: coefficient lists differ in length");
  double bound = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) bound += std::abs(a[j] * b[j]);
  if (!(bound < 1.0)) {
    throw ConfigError("wiggly: sum |a_j b_j| = " + std::to_string(bound) + " breaks monotonicity (needs < 1)");
  }
}

void BenchmarkTask::validate() const {
  if (dim < 1) throw DomainError("task " + id + ": dim must be >= 1");
  if (static_cast<Index>(rhos.size()) != dim) throw DomainError("task " + id + ": need one rho per pair");
  for (double r : rhos) {
    if (!(std::abs(r) < 1.0)) throw DomainError("task " + id + ": |rho| must be < 1");
  }
  if (family == Family::SparseGaussian) {
    for (std::size_t i = 2; i < rhos.size(); ++i) {
      if (rhos[i] != 0.0) throw DomainError("task " + id + ": sparse-gaussian correlates only two pairs");
    }
  }
  if (family == Family::StudentT && !(nu > 0.0)) throw DomainError("task " + id + ": nu must be positive");
  if (transform == Transform::Wiggly) wiggly.validate();
  if (train_size < 1 || test_size < 1) throw DomainError("task " + id + ": sizes must be positive");
}

BenchmarkTask make_task(std::string id, Family family, Index dim, double target_mi, Transform transform) {
  BenchmarkTask t;
  t.id = std::move(id);
  t.family = family;
  t.dim = dim;
  t.transform = transform;
  if (family == Family::SparseGaussian) {
    if (dim < 2) throw DomainError("sparse-gaussian needs dim >= 2");
    const double rho = invert_mi_to_rho(target_mi, 2);
    t.rhos.assign(static_cast<std::size_t>(dim), 0.0);
    t.rhos[0] = t.rhos[1] = rho;
  } else {
    t.rhos.assign(static_cast<std::size_t>(dim), invert_mi_to_rho(target_mi, dim));
  }
  t.validate();
  return t;
}

Dataset Dataset::rows(std::span<const Index> idx) const {
  Dataset out{Matrix(static_cast<Index>(idx.size()), x.cols()), Matrix(static_cast<Index>(idx.size()), y.cols())};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.x.row(static_cast<Index>(i)) = x.row(idx[i]);
    out.y.row(static_cast<Index>(i)) = y.row(idx[i]);
  }
  return out;
}

Dataset Dataset::head(Index n) const { return {x.topRows(n), y.topRows(n)}; }

double gaussian_mi(std::span<const double> rhos) {
  double mi = 0.0;
  for (double r : rhos) {
    if (!(std::abs(r) < 1.0)) throw DomainError("gaussian_mi: |rho| must be < 1");
    mi += -0.5 * std::log1p(-r * r);
  }
  return mi;
}

double invert_mi_to_rho(double target, Index n) {
  if (!(target >= 0.0)) throw DomainError("invert_mi_to_rho: target must be >= 0");
  if (n < 1) throw DomainError("invert_mi_to_rho: n must be >= 1");
  return std::sqrt(-std::expm1(-2.0 * target / static_cast<double>(n)));
}

double marginal_transform(Transform kind, double v, const WigglyParams& w) {
  switch (kind) {
    case Transform::None: return v;
    case Transform::Cubic: return v * v * v;
    case Transform::Asinh: return std::asinh(v);
    case Transform::Wiggly: {
      double out = v;
      for (std::size_t j = 0; j < w.a.size(); ++j) out += w.a[j] * std::sin(w.b[j] * v + w.c[j]);
      return out;
    }
  }
  return v;
}

Matrix marginal_transform(Transform kind, const Matrix& v, const WigglyParams& w) {
  if (kind == Transform::Wiggly) w.validate();
  return v.unaryExpr([&](double e) { return marginal_transform(kind, e, w); });
}

namespace {

double wiggly_derivative(double v, const WigglyParams& w) {
  double d = 1.0;
  for (std::size_t j = 0; j < w.a.size(); ++j) d += w.a[j] * w.b[j] * std::cos(w.b[j] * v + w.c[j]);
  return d;
}

// Newton iteration safeguarded by bisection; w(v) - v is bounded by sum |a_j|.
double wiggly_inverse(double target, const WigglyParams& w) {
  double amp = 0.0;
  for (double a : w.a) amp += std::abs(a);
  double lo = target - amp - 1e-12;
  double hi = target + amp + 1e-12;
  double v = target;
  for (int it = 0; it < 200; ++it) {
    const double f = marginal_transform(Transform::Wiggly, v, w) - target;
    if (f > 0.0) {
      hi = v;
    } else {
      lo = v;
    }
    if (std::abs(f) <= 1e-15 * (1.0 + std::abs(target))) break;
    double next = v - f / wiggly_derivative(v, w);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == v) break;
    v = next;
  }
  return v;
}

}  // namespace

double inverse_transform(Transform kind, double v, const WigglyParams& w) {
  switch (kind) {
    case Transform::None: return v;
    case Transform::Cubic: return std::cbrt(v);
    case Transform::Asinh: return std::sinh(v);
    case Transform::Wiggly: return wiggly_inverse(v, w);
  }
  return v;
}

double log_abs_inverse_derivative(Transform kind, double v, const WigglyParams& w) {
  switch (kind) {
    case Transform::None: return 0.0;
    case Transform::Cubic: return -std::log(3.0) - (2.0 / 3.0) * std::log(std::abs(v));
    case Transform::Asinh: return std::log(std::cosh(v));
    case Transform::Wiggly: return -std::log(wiggly_derivative(wiggly_inverse(v, w), w));
  }
  return 0.0;
}

Dataset sample_task(const BenchmarkTask& task, Rng& rng, Index n) {
  task.validate();
  const Index d = task.dim;
  Dataset data{Matrix(n, d), Matrix(n, d)};
  std::vector<double> tail(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < tail.size(); ++i) tail[i] = std::sqrt(1.0 - task.rhos[i] * task.rhos[i]);

  for (Index r = 0; r < n; ++r) {
    for (Index i = 0; i < d; ++i) {
      const double z1 = rng.normal();
      const double z2 = rng.normal();
      const double rho = task.rhos[static_cast<std::size_t>(i)];
      data.x(r, i) = z1;
      data.y(r, i) = rho * z1 + tail[static_cast<std::size_t>(i)] * z2;
    }
    if (task.family == Family::StudentT) {
      const double mix = 1.0 / std::sqrt(rng.chi_squared(task.nu) / task.nu);
      data.x.row(r) *= mix;
      data.y.row(r) *= mix;
    }
  }
  if (task.family == Family::UniformCopula) {
    data.x = data.x.unaryExpr([](double v) { return normal_cdf(v); });
    data.y = data.y.unaryExpr([](double v) { return normal_cdf(v); });
  }
  switch (task.transform) {
    case Transform::None:
      break;
    case Transform::Cubic:
      data.y = marginal_transform(Transform::Cubic, data.y);
      break;
    case Transform::Asinh:
    case Transform::Wiggly:
      data.x = marginal_transform(task.transform, data.x, task.wiggly);
      data.y = marginal_transform(task.transform, data.y, task.wiggly);
      break;
  }
  return data;
}

namespace {

double log_std_normal(double z) { return -0.5 * kLog2Pi - 0.5 * z * z; }

double log_bivariate_normal(double x, double y, double rho) {
  const double q = 1.0 - rho * rho;
  return -kLog2Pi - 0.5 * std::log(q) - (x * x - 2.0 * rho * x * y + y * y) / (2.0 * q);
}

// log density of a p-variate t with scale matrix of log-determinant logdet
// and Mahalanobis distance delta.
double log_student_t(double delta, Index p, double nu, double logdet) {
  const double pd = static_cast<double>(p);
  return std::lgamma(0.5 * (nu + pd)) - std::lgamma(0.5 * nu) - 0.5 * pd * std::log(nu * std::numbers::pi) -
         0.5 * logdet - 0.5 * (nu + pd) * std::log1p(delta / nu);
}

double normal_quantile(double u) { return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u); }

}  // namespace

Vector log_density_ratio(const BenchmarkTask& task, const Dataset& data) {
  task.validate();
  const Index d = task.dim;
  if (data.x.cols() != d || data.y.cols() != d) throw DimensionError("log_density_ratio: data does not match task");
  const Index n = data.size();
  const bool transform_x = task.transform == Transform::Asinh || task.transform == Transform::Wiggly;
  const bool transform_y = task.transform != Transform::None;

  Vector out(n);
  std::vector<double> bx(static_cast<std::size_t>(d)), by(static_cast<std::size_t>(d));
  for (Index r = 0; r < n; ++r) {
    // undo the marginal transform, keeping the log Jacobian of the inverse
    double jac_x = 0.0, jac_y = 0.0;
    for (Index i = 0; i < d; ++i) {
      double vx = data.x(r, i), vy = data.y(r, i);
      if (transform_x) {
        jac_x += log_abs_inverse_derivative(task.transform, vx, task.wiggly);
        vx = inverse_transform(task.transform, vx, task.wiggly);
      }
      if (transform_y) {
        jac_y += log_abs_inverse_derivative(task.transform, vy, task.wiggly);
        vy = inverse_transform(task.transform, vy, task.wiggly);
      }
      bx[static_cast<std::size_t>(i)] = vx;
      by[static_cast<std::size_t>(i)] = vy;
    }

    double joint = 0.0, mx = 0.0, my = 0.0;
    switch (task.family) {
      case Family::Gaussian:
      case Family::SparseGaussian:
        for (std::size_t i = 0; i < bx.size(); ++i) {
          joint += log_bivariate_normal(bx[i], by[i], task.rhos[i]);
          mx += log_std_normal(bx[i]);
          my += log_std_normal(by[i]);
        }
        break;
      case Family::UniformCopula:
        // marginals are uniform (log density 0); the copula density is
        // phi_2(z) / (phi(z_x) phi(z_y)) with z = Phi^{-1}(u)
        for (std::size_t i = 0; i < bx.size(); ++i) {
          const double zx = normal_quantile(bx[i]);
          const double zy = normal_quantile(by[i]);
          joint += log_bivariate_normal(zx, zy, task.rhos[i]) - log_std_normal(zx) - log_std_normal(zy);
        }
        break;
      case Family::StudentT: {
        double delta = 0.0, dx = 0.0, dy = 0.0, logdet = 0.0;
        for (std::size_t i = 0; i < bx.size(); ++i) {
          const double rho = task.rhos[i];
          const double q = 1.0 - rho * rho;
          delta += (bx[i] * bx[i] - 2.0 * rho * bx[i] * by[i] + by[i] * by[i]) / q;
          logdet += std::log(q);
          dx += bx[i] * bx[i];
          dy += by[i] * by[i];
        }
        joint = log_student_t(delta, 2 * d, task.nu, logdet);
        mx = log_student_t(dx, d, task.nu, 0.0);
        my = log_student_t(dy, d, task.nu, 0.0);
        break;
      }
    }
    out(r) = (joint + jac_x + jac_y) - (mx + jac_x) - (my + jac_y);
  }
  return out;
}

GroundTruth mc_oracle_mi(const BenchmarkTask& task, Index n_samples, Rng& rng, double max_std_error) {
  if (n_samples < 2) throw DomainError("mc_oracle_mi: need at least two samples");
  const Index chunk = 65536;
  double mean = 0.0, m2 = 0.0;
  Index count = 0;
  for (Index done = 0; done < n_samples; done += chunk) {
    const Dataset data = sample_task(task, rng, std::min(chunk, n_samples - done));
    const Vector ratio = log_density_ratio(task, data);
    for (Index i = 0; i < ratio.size(); ++i) {
      ++count;
      const double delta = ratio(i) - mean;
      mean += delta / static_cast<double>(count);
      m2 += delta * (ratio(i) - mean);
    }
  }
  GroundTruth g;
  g.mi = mean;
  g.provenance = GroundTruth::Provenance::McOracle;
  g.samples = count;
  g.std_error = std::sqrt(m2 / static_cast<double>(count - 1) / static_cast<double>(count));
  if (!std::isfinite(g.mi)) throw NumericError("mc_oracle_mi: non-finite estimate");
  if (g.std_error > max_std_error) {
    throw OraclePrecisionError("mc_oracle_mi: standard error " + std::to_string(g.std_error) + " exceeds " +
                                   std::to_string(max_std_error) + "; increase the sample count",
                               g.std_error);
  }
  return g;
}

GroundTruth ground_truth(const BenchmarkTask& task, Index oracle_samples, std::uint64_t oracle_seed) {
  task.validate();
  if (task.family != Family::StudentT) {
    GroundTruth g;
    g.mi = gaussian_mi(task.rhos);
    return g;
  }
  Rng rng(oracle_seed);
  return mc_oracle_mi(task, oracle_samples, rng);
}

}  // namespace ndoe
