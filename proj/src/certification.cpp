#include "ndoe/certification.hpp"

#include "ndoe/estimators.hpp"

#include <cmath>
#include <limits>

namespace ndoe {

namespace {

CertificationItem run(const std::string& name, const LossBuilder& f, std::span<const Matrix> params, double h,
                      double tolerance) {
  const GradCheckReport r = grad_check(f, params, h);
  return {name, r.max_rel_error, r.max_abs_error, r.coordinates, tolerance};
}

// sum(op(x) .* R) for a fixed random R
LossBuilder functional(std::function<Var(Tape&, std::span<const Var>)> op, Index rows, Index cols, Rng& rng) {
  const Matrix weights = rng.normal_matrix(rows, cols);
  return [op, weights](Tape& tape, std::span<const Var> p) { return sum(hadamard(op(tape, p), tape.constant(weights))); };
}

}  // namespace

std::vector<CertificationItem> certify_ops(std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  std::vector<CertificationItem> items;
  const double h = 1e-5;
  for (Index s : {Index{1}, Index{3}, Index{8}}) {
    const std::string tag = "[" + std::to_string(s) + "]";
    const Index c = s + 1;
    const Matrix a = rng.normal_matrix(s, c);
    const Matrix b = rng.normal_matrix(s, c);
    const Matrix positive = a.array().abs() + 0.5;
    const std::vector<Matrix> one{a};
    const std::vector<Matrix> two{a, b};

    auto unary = [&](const std::string& name, auto fn, const std::vector<Matrix>& in, Index r, Index cc) {
      items.push_back(run(name + tag, functional([fn](Tape&, std::span<const Var> p) { return fn(p[0]); }, r, cc, rng),
                          in, h, tolerance));
    };
    auto binary = [&](const std::string& name, auto fn, const std::vector<Matrix>& in, Index r, Index cc) {
      items.push_back(run(name + tag,
                          functional([fn](Tape&, std::span<const Var> p) { return fn(p[0], p[1]); }, r, cc, rng), in, h,
                          tolerance));
    };

    binary("matmul", [](const Var& x, const Var& y) { return matmul(x, y); },
           std::vector<Matrix>{a, rng.normal_matrix(c, 2)}, s, 2);
    binary("add", [](const Var& x, const Var& y) { return add(x, y); }, two, s, c);
    binary("add/row", [](const Var& x, const Var& y) { return add(x, y); },
           std::vector<Matrix>{a, rng.normal_matrix(1, c)}, s, c);
    binary("add/col", [](const Var& x, const Var& y) { return add(x, y); },
           std::vector<Matrix>{a, rng.normal_matrix(s, 1)}, s, c);
    binary("add/scalar", [](const Var& x, const Var& y) { return add(x, y); },
           std::vector<Matrix>{a, rng.normal_matrix(1, 1)}, s, c);
    binary("hadamard", [](const Var& x, const Var& y) { return hadamard(x, y); }, two, s, c);
    binary("hadamard/row", [](const Var& x, const Var& y) { return hadamard(x, y); },
           std::vector<Matrix>{a, rng.normal_matrix(1, c)}, s, c);
    binary("hadamard/col", [](const Var& x, const Var& y) { return hadamard(x, y); },
           std::vector<Matrix>{a, rng.normal_matrix(s, 1)}, s, c);
    binary("hadamard/scalar", [](const Var& x, const Var& y) { return hadamard(x, y); },
           std::vector<Matrix>{a, rng.normal_matrix(1, 1)}, s, c);
    unary("tanh", [](const Var& x) { return tanh(x); }, one, s, c);
    unary("exp", [](const Var& x) { return exp(x); }, one, s, c);
    unary("log", [](const Var& x) { return log(x); }, std::vector<Matrix>{positive}, s, c);
    unary("softplus", [](const Var& x) { return softplus(x); }, one, s, c);
    unary("scale", [](const Var& x) { return scale(x, -1.7); }, one, s, c);
    unary("logsumexp_rows", [](const Var& x) { return logsumexp_rows(x); }, one, s, 1);
    unary("sum", [](const Var& x) { return sum(x); }, one, 1, 1);
    unary("sum_rows", [](const Var& x) { return sum_rows(x); }, one, s, 1);
    unary("slice/cols", [](const Var& x) { return slice(x, 1, 1, x.cols() - 1); }, one, s, c - 1);
    unary("slice/rows", [](const Var& x) { return slice(x, 0, 0, 1); }, one, 1, c);
    binary("concat/cols", [](const Var& x, const Var& y) { return concat(x, y, 1); }, two, s, 2 * c);
    binary("concat/rows", [](const Var& x, const Var& y) { return concat(x, y, 0); }, two, 2 * s, c);
    unary("reshape", [](const Var& x) { return reshape(x, x.cols(), x.rows()); }, one, c, s);
  }
  return items;
}

std::vector<CertificationItem> certify_losses(std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  std::vector<CertificationItem> items;
  const Index batch = 16;
  const double h = 1e-5;

  // correlated 2+2 toy data
  const Matrix x = rng.normal_matrix(batch, 2);
  const Matrix y = 0.8 * x + 0.6 * rng.normal_matrix(batch, 2);

  auto perturb = [&](std::vector<Matrix> params, double sd) {
    for (Matrix& p : params) p += sd * rng.normal_matrix(p.rows(), p.cols());
    return params;
  };

  {
    const BnafFlow flow(BnafSpec{2, 2, 2, 2, true}, rng);
    const std::vector<Matrix> params = perturb(flow.parameters(), 0.2);
    items.push_back(run("bnaf L1 (conditional)",
                        [&](Tape& t, std::span<const Var> p) { return loss_conditional(flow, t, p, y, x); }, params, h,
                        tolerance));
    items.push_back(run("bnaf L2 (marginal)",
                        [&](Tape& t, std::span<const Var> p) { return loss_marginal(flow, t, p, y, x); }, params, h,
                        tolerance));
    items.push_back(run("bnaf joint",
                        [&](Tape& t, std::span<const Var> p) { return loss_joint(flow, t, p, y, x); }, params, h,
                        tolerance));
  }
  {
    const RealNvpFlow flow(RealNvpSpec{2, 2, 2, 8, 5.0}, rng);
    const std::vector<Matrix> params = perturb(flow.parameters(), 0.2);
    items.push_back(run("realnvp L1 (conditional)",
                        [&](Tape& t, std::span<const Var> p) { return loss_conditional(flow, t, p, y, x); }, params, h,
                        tolerance));
    items.push_back(run("realnvp L2 (marginal)",
                        [&](Tape& t, std::span<const Var> p) { return loss_marginal(flow, t, p, y, x); }, params, h,
                        tolerance));
  }
  for (DoeFamily family : {DoeFamily::Gaussian, DoeFamily::Logistic}) {
    const DoeModel model(family, 2, 2, 8, 2, rng);
    const std::vector<Matrix> params = perturb(model.parameters(), 0.1);
    const std::string name = family == DoeFamily::Gaussian ? "doe-gaussian" : "doe-logistic";
    items.push_back(run(name + " marginal + conditional",
                        [&](Tape& t, std::span<const Var> p) {
                          return add(model.marginal_loss(t, p, y), model.conditional_loss(t, p, y, x));
                        },
                        params, h, tolerance));
  }
  const std::vector<Index> perm = sattolo_derangement(batch, rng);
  const double inf = std::numeric_limits<double>::infinity();
  for (EstimatorKind kind : {EstimatorKind::Nwj, EstimatorKind::Mine, EstimatorKind::InfoNce}) {
    const Critic critic(2, 2, 8, 2, rng, critic_output_bias(kind));
    items.push_back(run(to_string(kind),
                        [&, kind](Tape& t, std::span<const Var> p) {
                          return critic_bound(kind, critic, t, p, x, y, perm, inf);
                        },
                        critic.parameters(), h, tolerance));
  }
  {
    const Critic critic(2, 2, 8, 2, rng);
    const std::vector<Matrix> params = critic.parameters();
    items.push_back(run("smile training objective",
                        [&](Tape& t, std::span<const Var> p) {
                          return critic_objective(EstimatorKind::Smile, critic, t, p, x, y, perm);
                        },
                        params, h, tolerance));
    // widen the output layer so that part of the scores fall outside [-5, 5]
    std::vector<Matrix> wide = params;
    wide[wide.size() - 2] *= 25.0;
    items.push_back(run("smile(tau=5) clipped bound",
                        [&](Tape& t, std::span<const Var> p) {
                          return critic_bound(EstimatorKind::Smile, critic, t, p, x, y, perm, 5.0);
                        },
                        wide, h, tolerance));
  }
  return items;
}

}  // namespace ndoe
