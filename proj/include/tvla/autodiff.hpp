#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tvla/tensor.hpp"

namespace tvla {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode tape. Interior nodes keep their parents
// alive and a closure that pushes this node's gradient into them.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  // Gradient buffer, allocated (zeroed) on first use.
  Tensor& grad_buffer();
};

// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }

  // Accumulated gradient; a zero tensor of matching shape if none has flowed.
  Tensor grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  void zero_grad() { node_->grad = Tensor(); }

  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

// Disables tape construction on this thread for the guard's lifetime.
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

// Creates an interior node. The backward closure is only stored when some
// parent needs a gradient and the tape is enabled. Throws NumericError if
// the forward value is not finite.
Var make_node(Tensor value, std::vector<Var> parents, const char* op,
              std::function<void(Node&)> backward_fn);

// Runs reverse accumulation from a scalar. Gradients are added into every
// leaf that requires them; call zero_grad on leaves between steps.
void backward(const Var& loss);

// Trainable leaf with a hierarchical name. Frozen parameters do not request
// gradients, so no gradient work is spent on them.
struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Var var;

  bool frozen() const { return frozen_; }
  void set_frozen(bool f);
  const Tensor& value() const { return var.value(); }
  Tensor& mutable_value() { return var.mutable_value(); }

 private:
  bool frozen_ = false;
};

using ParamPtr = std::shared_ptr<Parameter>;

}  // namespace tvla
