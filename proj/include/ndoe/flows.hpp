#pragma once

// Normalizing flows over a (y, x) pair with a block-triangular Jacobian:
// f(y, x) = (f1(y), f2(y, x)). Two families are provided, block neural
// autoregressive flows (BNAF) and Real NVP coupling stacks. Both expose the
// per-sample log-determinant of d_x f2 and support deactivating every y -> x
// path through a masked view that shares parameter storage with the model.

#include "ndoe/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ndoe {

enum class MaskState { Active, Masked };

// Tape handles produced by one forward pass over a batch of B rows.
struct FlowForward {
  Var f1;         // [B x n_y]
  Var f2;         // [B x n_x]
  Var logdet_y;   // [B x 1], log det d_y f1
  Var logdet_x;   // [B x 1], log det d_x f2
  Var logdiag_y;  // [B x n_y], BNAF only
  Var logdiag_x;  // [B x n_x], BNAF only
};

// Plain values of the same quantities.
struct FlowValues {
  Matrix f1, f2;
  Vector logdet_y, logdet_x;
  Matrix logdiag_y, logdiag_x;  // empty for Real NVP
};

class FlowModel;

// Forward pass of a model in a fixed mask state. Parameters are shared with
// the model, not copied.
class FlowView {
 public:
  FlowView(const FlowModel& model, MaskState state) : model_(&model), state_(state) {}
  const FlowModel& model() const { return *model_; }
  MaskState state() const { return state_; }
  FlowForward forward(Tape& tape, std::span<const Var> params, const Matrix& y, const Matrix& x) const;
  FlowValues evaluate(const Matrix& y, const Matrix& x) const;

 private:
  const FlowModel* model_;
  MaskState state_;
};

class FlowModel {
 public:
  virtual ~FlowModel() = default;

  virtual std::string kind() const = 0;
  virtual nlohmann::json architecture() const = 0;
  virtual std::unique_ptr<FlowModel> clone() const = 0;

  // Records the flow on `tape`. `params` are leaves bound from parameters()
  // in order. Throws NumericError carrying the layer index on non-finite
  // intermediate values.
  virtual FlowForward forward(Tape& tape, std::span<const Var> params, const Matrix& y, const Matrix& x,
                              MaskState state) const = 0;

  FlowValues evaluate(const Matrix& y, const Matrix& x, MaskState state) const;

  Index n_y() const { return n_y_; }
  Index n_x() const { return n_x_; }

  std::vector<Matrix>& parameters() { return params_; }
  const std::vector<Matrix>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_index(const std::string& name) const;

  // Entries of each parameter that can never influence the output in the
  // given state (structural zeros, masked blocks). Ones mark live entries.
  virtual std::vector<Matrix> live_entries(MaskState state) const = 0;

 protected:
  FlowModel(Index n_y, Index n_x);
  std::size_t add_parameter(std::string name, Matrix value);

  Index n_y_;
  Index n_x_;
  std::vector<Matrix> params_;
  std::vector<std::string> names_;
};

inline FlowView set_mask(const FlowModel& model, bool masked) {
  return FlowView(model, masked ? MaskState::Masked : MaskState::Active);
}

// --- BNAF ----------------------------------------------------------------

struct BnafSpec {
  Index n_y = 1;
  Index n_x = 1;
  // Hidden units per coordinate; a group of n coordinates has n * m units.
  Index hidden_multiplier = 4;
  // tanh layers before the final linear layer.
  int hidden_layers = 2;
  // Gated residual on hidden layers whose input and output widths agree.
  bool gated_residual = true;
};

// Coordinates are ordered y first, then x. Layer k maps d * a_k units to
// d * a_{k+1} units with weight
//   W = exp(D) .* M_diag + O .* M_lower   (cross block y -> x dropped when masked)
// stored input-major ([d a_k x d a_{k+1}]) so pre-activations are h * W + b.
class BnafFlow final : public FlowModel {
 public:
  BnafFlow(const BnafSpec& spec, Rng& rng);
  // All parameters zero (with hidden_layers == 0 this is the identity map).
  static BnafFlow zeros(const BnafSpec& spec);

  std::string kind() const override { return "bnaf"; }
  nlohmann::json architecture() const override;
  std::unique_ptr<FlowModel> clone() const override { return std::make_unique<BnafFlow>(*this); }
  FlowForward forward(Tape& tape, std::span<const Var> params, const Matrix& y, const Matrix& x,
                      MaskState state) const override;
  std::vector<Matrix> live_entries(MaskState state) const override;

  const BnafSpec& spec() const { return spec_; }
  std::size_t layer_count() const { return layers_.size(); }
  // Indices into parameters() for layer k.
  std::size_t diag_param(std::size_t k) const { return layers_.at(k).diag; }
  std::size_t off_param(std::size_t k) const { return layers_.at(k).off; }
  std::size_t bias_param(std::size_t k) const { return layers_.at(k).bias; }
  // 0/1 mask selecting the y -> x entries of the off-diagonal weight of layer k.
  const Matrix& cross_mask(std::size_t k) const { return layers_.at(k).cross; }

 private:
  struct Layer {
    Index in_width = 1;   // a_k
    Index out_width = 1;  // a_{k+1}
    bool activation = true;
    bool residual = false;
    std::size_t diag = 0, off = 0, bias = 0, gate = 0;
    Matrix diag_mask, lower_mask, cross, masked_lower;
  };

  explicit BnafFlow(const BnafSpec& spec);
  void build_layers(Rng* rng);

  BnafSpec spec_;
  std::vector<Layer> layers_;
};

// --- Real NVP ------------------------------------------------------------

struct RealNvpSpec {
  Index n_y = 1;
  Index n_x = 1;
  int coupling_layers = 4;
  Index hidden_units = 32;
  // s <- clamp * tanh(s / clamp)
  double scale_clamp = 5.0;
};

// Each coupling layer transforms part of y conditioned on the rest of y, and
// part of x conditioned on the rest of x and on the layer's input y. Partitions
// alternate between layers; a one-dimensional group is transformed every layer
// with only the cross-group input (none for y).
class RealNvpFlow final : public FlowModel {
 public:
  RealNvpFlow(const RealNvpSpec& spec, Rng& rng);
  static RealNvpFlow zeros(const RealNvpSpec& spec);

  std::string kind() const override { return "realnvp"; }
  nlohmann::json architecture() const override;
  std::unique_ptr<FlowModel> clone() const override { return std::make_unique<RealNvpFlow>(*this); }
  FlowForward forward(Tape& tape, std::span<const Var> params, const Matrix& y, const Matrix& x,
                      MaskState state) const override;
  std::vector<Matrix> live_entries(MaskState state) const override;

  // Inverts the whole stack: given (f1, f2) returns (y, x).
  std::pair<Matrix, Matrix> inverse(const Matrix& f1, const Matrix& f2, MaskState state) const;

  const RealNvpSpec& spec() const { return spec_; }

 private:
  struct Net {
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  };
  struct Partition {
    Index cond_offset = 0, cond_size = 0;
    Index out_offset = 0, out_size = 0;
  };
  struct Layer {
    Partition py, px;
    Net s_y, t_y, s_x, t_x;
  };

  explicit RealNvpFlow(const RealNvpSpec& spec);
  void build_layers(Rng* rng);
  Net add_net(const std::string& prefix, Index in, Index out, Rng* rng);

  RealNvpSpec spec_;
  std::vector<Layer> layers_;
};

// --- structure checks and persistence -------------------------------------

struct JacobianReport {
  double upper_right_max = 0.0;  // max |d f1 / d x|
  double lower_left_max = 0.0;   // max |d f2 / d y|
  double det_y = 0.0;            // det d_y f1
  double det_x = 0.0;            // det d_x f2
  double logdet_x_model = 0.0;   // the model's own log det d_x f2
  bool passed = false;
};

// Central-difference Jacobian of (f1, f2) at a single point (y, x), given as
// [1 x n_y] and [1 x n_x] rows.
Matrix numerical_jacobian(const FlowView& view, const Matrix& y, const Matrix& x, double h = 1e-6);

JacobianReport jacobian_structure_check(const FlowView& view, const Matrix& y, const Matrix& x,
                                        double h = 1e-6);

nlohmann::json to_json(const FlowModel& model);
std::unique_ptr<FlowModel> flow_from_json(const nlohmann::json& j);

}  // namespace ndoe
