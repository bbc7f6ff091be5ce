#include "ndoe/flows.hpp"

#include <algorithm>

namespace ndoe {

FlowForward FlowView::forward(Tape& tape, std::span<const Var> params, const Matrix& y, const Matrix& x) const {
  return model_->forward(tape, params, y, x, state_);
}

FlowValues FlowView::evaluate(const Matrix& y, const Matrix& x) const { return model_->evaluate(y, x, state_); }

FlowModel::FlowModel(Index n_y, Index n_x) : n_y_(n_y), n_x_(n_x) {
  if (n_y < 1 || n_x < 1) throw DomainError("flow groups need at least one coordinate each");
}

std::size_t FlowModel::add_parameter(std::string name, Matrix value) {
  names_.push_back(std::move(name));
  params_.push_back(std::move(value));
  return params_.size() - 1;
}

std::size_t FlowModel::parameter_index(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ContractError("no parameter named " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

FlowValues FlowModel::evaluate(const Matrix& y, const Matrix& x, MaskState state) const {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const Matrix& p : params_) vars.push_back(tape.constant(p));
  const FlowForward out = forward(tape, vars, y, x, state);
  FlowValues v;
  v.f1 = out.f1.value();
  v.f2 = out.f2.value();
  v.logdet_y = out.logdet_y.value().col(0);
  v.logdet_x = out.logdet_x.value().col(0);
  if (out.logdiag_y.valid()) v.logdiag_y = out.logdiag_y.value();
  if (out.logdiag_x.valid()) v.logdiag_x = out.logdiag_x.value();
  return v;
}

Matrix numerical_jacobian(const FlowView& view, const Matrix& y, const Matrix& x, double h) {
  const Index ny = view.model().n_y();
  const Index nx = view.model().n_x();
  const Index d = ny + nx;
  if (y.rows() != 1 || x.rows() != 1 || y.cols() != ny || x.cols() != nx) {
    throw DimensionError("numerical_jacobian expects a single (y, x) point");
  }
  // rows 2j and 2j+1 hold the +h / -h perturbation of input j
  Matrix ys = y.replicate(2 * d, 1);
  Matrix xs = x.replicate(2 * d, 1);
  for (Index j = 0; j < d; ++j) {
    Matrix& target = j < ny ? ys : xs;
    const Index c = j < ny ? j : j - ny;
    target(2 * j, c) += h;
    target(2 * j + 1, c) -= h;
  }
  const FlowValues v = view.evaluate(ys, xs);
  Matrix out(2 * d, d);
  out << v.f1, v.f2;
  Matrix jac(d, d);
  for (Index j = 0; j < d; ++j) {
    jac.col(j) = (out.row(2 * j) - out.row(2 * j + 1)).transpose() / (2.0 * h);
  }
  return jac;
}

JacobianReport jacobian_structure_check(const FlowView& view, const Matrix& y, const Matrix& x, double h) {
  const Index ny = view.model().n_y();
  const Index nx = view.model().n_x();
  const Matrix jac = numerical_jacobian(view, y, x, h);
  JacobianReport r;
  r.upper_right_max = jac.topRightCorner(ny, nx).cwiseAbs().maxCoeff();
  r.lower_left_max = jac.bottomLeftCorner(nx, ny).cwiseAbs().maxCoeff();
  r.det_y = jac.topLeftCorner(ny, ny).determinant();
  r.det_x = jac.bottomRightCorner(nx, nx).determinant();
  r.logdet_x_model = view.evaluate(y, x).logdet_x(0);
  r.passed = r.upper_right_max <= 1e-8 && r.det_y > 0.0 && r.det_x > 0.0;
  return r;
}

nlohmann::json to_json(const FlowModel& model) {
  nlohmann::json params = nlohmann::json::array();
  const auto& names = model.parameter_names();
  const auto& values = model.parameters();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Matrix& m = values[i];
    params.push_back({{"name", names[i]},
                      {"rows", m.rows()},
                      {"cols", m.cols()},
                      {"data", std::vector<double>(m.data(), m.data() + m.size())}});
  }
  return {{"format", "ndoe-flow-v1"},
          {"kind", model.kind()},
          {"architecture", model.architecture()},
          {"parameters", std::move(params)}};
}

std::unique_ptr<FlowModel> flow_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "ndoe-flow-v1") throw ConfigError("unrecognized flow file format");
  const std::string kind = j.at("kind").get<std::string>();
  const nlohmann::json& a = j.at("architecture");
  std::unique_ptr<FlowModel> model;
  if (kind == "bnaf") {
    BnafSpec s;
    s.n_y = a.at("n_y").get<Index>();
    s.n_x = a.at("n_x").get<Index>();
    s.hidden_multiplier = a.at("hidden_multiplier").get<Index>();
    s.hidden_layers = a.at("hidden_layers").get<int>();
    s.gated_residual = a.at("gated_residual").get<bool>();
    model = std::make_unique<BnafFlow>(BnafFlow::zeros(s));
  } else if (kind == "realnvp") {
    RealNvpSpec s;
    s.n_y = a.at("n_y").get<Index>();
    s.n_x = a.at("n_x").get<Index>();
    s.coupling_layers = a.at("coupling_layers").get<int>();
    s.hidden_units = a.at("hidden_units").get<Index>();
    s.scale_clamp = a.at("scale_clamp").get<double>();
    model = std::make_unique<RealNvpFlow>(RealNvpFlow::zeros(s));
  } else {
    throw ConfigError("unknown flow kind " + kind);
  }
  const nlohmann::json& params = j.at("parameters");
  auto& values = model->parameters();
  if (params.size() != values.size()) throw ConfigError("parameter count does not match architecture");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const nlohmann::json& p = params[i];
    if (p.at("name").get<std::string>() != model->parameter_names()[i] ||
        p.at("rows").get<Index>() != values[i].rows() || p.at("cols").get<Index>() != values[i].cols()) {
      throw ConfigError("parameter " + std::to_string(i) + " does not match architecture");
    }
    const auto data = p.at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != values[i].size()) throw ConfigError("parameter data size mismatch");
    std::copy(data.begin(), data.end(), values[i].data());
  }
  return model;
}

}  // namespace ndoe
