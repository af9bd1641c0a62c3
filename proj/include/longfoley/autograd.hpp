#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "longfoley/tensor.hpp"

namespace lf {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the recorded computation. Intermediate nodes own their
// backward closure; parameter leaves forward their gradient to `sink`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;
  Tensor* sink = nullptr;
};

// Handle to a node of the tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }
  // Gradient recorded by the last backward pass; empty when none reached this node.
  const Tensor& grad() const { return node_->grad; }

 private:
  NodePtr node_;
};

// While alive on a thread, new operations record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Named parameters with same-shaped gradient accumulators.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Tensor& value(const std::string& name) const { return at(name).value; }

  // Leaf variable for a parameter; tracks gradients only when the parameter is trainable.
  Var var(const std::string& name);

  void zero_grad();
  void set_trainable(bool trainable);
  std::size_t num_scalars() const;
  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  std::vector<std::string> names() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

// Row-wise linear interpolation: output row r = w0[r]*x[i0[r]] + w1[r]*x[i1[r]].
struct InterpPlan {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w0, w1;
  std::size_t source_rows = 0;
  std::size_t size() const { return i0.size(); }
};

Var constant(Tensor value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// x[..., d] + b[d] broadcast over rows.
Var add_bias(const Var& x, const Var& b);
// x[..., d] * g[d] broadcast over rows.
Var mul_cols(const Var& x, const Var& g);
// x * (1 + scale) + shift, with shift and scale of length d broadcast over rows.
Var modulate(const Var& x, const Var& shift, const Var& scale);
Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);
Var layer_norm(const Var& x, double eps);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
Var gelu(const Var& x);
Var silu(const Var& x);
// softmax(q k^T / sqrt(d)) v for one head.
Var attention(const Var& q, const Var& k, const Var& v);
Var slice_cols(const Var& x, std::size_t start, std::size_t count);
Var slice_rows(const Var& x, std::size_t start, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
Var mean_rows(const Var& x);
Var interp_rows(const Var& x, const InterpPlan& plan);
Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& pred, const Var& target);

// Reverse pass from a scalar loss. Parameter accumulators add the new gradient
// to whatever they already hold.
void backward(const Var& loss);

// Plain tensor kernels shared by the ops and by tests.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::map<std::string, double> per_parameter;
};

// Compares reverse-mode gradients of `loss_fn` against central differences for
// every trainable parameter. Error per parameter tensor is
// |analytic - numeric| / max(|analytic| + |numeric|, 1e-6) using L2 norms.
GradCheckResult finite_difference_check(const std::function<Var(ParameterStore&)>& loss_fn,
                                        ParameterStore& store, double h);
// Same check over several stores whose parameters all feed `loss_fn`.
GradCheckResult finite_difference_check(const std::function<Var()>& loss_fn,
                                        const std::vector<ParameterStore*>& stores, double h);

}  // namespace lf
