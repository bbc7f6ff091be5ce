#include "ndoe/optim.hpp"

namespace ndoe {

AdamState::AdamState(AdamConfig config, std::span<const Matrix> params) : config_(config) {
  if (!(config.lr > 0.0)) throw DomainError("adam: learning rate must be positive");
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Matrix& p : params) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamState::check(std::span<Matrix> params, std::span<const Matrix> grads) const {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DimensionError("optimizer: parameter list does not match state");
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (params[i].rows() != m_[i].rows() || params[i].cols() != m_[i].cols() || grads[i].rows() != m_[i].rows() ||
        grads[i].cols() != m_[i].cols()) {
      throw DimensionError("optimizer: shape mismatch in parameter " + std::to_string(i));
    }
    if (!all_finite(grads[i])) {
      throw NumericError("optimizer: non-finite gradient in parameter " + std::to_string(i), static_cast<long>(i));
    }
  }
}

void AdamState::adam_step(std::span<Matrix> params, std::span<const Matrix> grads) {
  check(params, grads);
  ++t_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = c.beta1 * m_[i] + (1.0 - c.beta1) * grads[i];
    v_[i] = c.beta2 * v_[i] + (1.0 - c.beta2) * grads[i].cwiseAbs2();
    params[i].array() -= c.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + c.eps);
  }
}

void AdamState::adamax_step(std::span<Matrix> params, std::span<const Matrix> grads) {
  check(params, grads);
  ++t_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = c.beta1 * m_[i] + (1.0 - c.beta1) * grads[i];
    v_[i] = (c.beta2 * v_[i]).cwiseMax(grads[i].cwiseAbs());
    params[i].array() -= (c.lr / bc1) * m_[i].array() / v_[i].array().max(c.eps);
  }
}

double global_norm(std::span<const Matrix> grads) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Matrix> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw DomainError("clip_grad_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Matrix& g : grads) g *= factor;
  }
  return norm;
}

}  // namespace ndoe
