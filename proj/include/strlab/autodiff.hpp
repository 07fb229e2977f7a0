#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "strlab/tensor.hpp"

namespace strlab {

template <typename Scalar>
class Tape;

namespace detail {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  // Leaf accumulator. Persists across backward calls until zero_grad.
  Tensor<Scalar> grad;
  // Gradient flowing into this node during the current backward pass.
  Tensor<Scalar> pending;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads `pending` of the node it belongs to and adds into its inputs.
  std::function<void(Node&)> propagate;
  Tape<Scalar>* tape = nullptr;
  std::size_t position = 0;
};

}  // namespace detail

/// Handle to a value in the computation graph. Copies share the same node, so
/// a parameter stored in a layer and in an optimizer's list is one object.
template <typename Scalar_>
class Variable {
 public:
  using Scalar = Scalar_;
  using NodeType = detail::Node<Scalar>;

  Variable() = default;
  explicit Variable(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  /// Mutable access for leaves only (optimizer updates, checkpoint loading).
  Tensor<Scalar>& mutable_value() {
    if (!node_->leaf) throw Error(ErrorCode::DetachedGraph, "cannot mutate a non-leaf value");
    return node_->value;
  }
  const Shape& shape() const { return node_->value.shape(); }
  Index size() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return node_->grad.is_set(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  const std::shared_ptr<NodeType>& node() const { return node_; }
  explicit Variable(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  friend bool same_node(const Variable& a, const Variable& b) { return a.node_ == b.node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

/// Append-only record of differentiable operations. Constructing a tape makes
/// it the active tape of the calling thread; operations executed while no tape
/// is active produce constants, which is how inference avoids graph overhead.
template <typename Scalar>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded node up to the loss
  /// in reverse order exactly once. Leaf gradients accumulate.
  void backward(const Variable<Scalar>& loss);

  void append(const std::shared_ptr<detail::Node<Scalar>>& node);

 private:
  std::vector<std::shared_ptr<detail::Node<Scalar>>> nodes_;
  Tape* previous_ = nullptr;
};

/// Runs backward on the tape the loss was recorded on.
/// Throws NotScalar for multi-element losses and DetachedGraph when the loss
/// is not on a live tape.
template <typename Scalar>
void backward(const Variable<Scalar>& loss);

namespace detail {

/// Creates the result node of an operation. When any input requires a
/// gradient and a tape is active, the node is recorded with `propagate`;
/// otherwise it is a constant. Non-finite results throw NonFinite.
template <typename Scalar>
Variable<Scalar> record(Tensor<Scalar> value, std::vector<Variable<Scalar>> inputs,
                        std::function<void(Node<Scalar>&)> propagate);

/// Gradient buffer of `input` for the running backward pass, or nullptr when
/// the input does not take gradients. Zero-initialized on first access.
template <typename Scalar>
Tensor<Scalar>* grad_slot(Node<Scalar>& input);

}  // namespace detail

}  // namespace strlab
