#include "strlab/autodiff.hpp"

#include <sstream>

namespace strlab {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

template <typename Scalar>
thread_local Tape<Scalar>* g_active_tape = nullptr;

// Leaves touched by the backward pass currently running on this thread.
template <typename Scalar>
thread_local std::vector<detail::Node<Scalar>*>* g_touched_leaves = nullptr;

}  // namespace

template <typename Scalar>
Tape<Scalar>::Tape() : previous_(g_active_tape<Scalar>) {
  g_active_tape<Scalar> = this;
}

template <typename Scalar>
Tape<Scalar>::~Tape() {
  for (auto& node : nodes_) {
    node->tape = nullptr;
    node->propagate = nullptr;
    node->inputs.clear();
  }
  g_active_tape<Scalar> = previous_;
}

template <typename Scalar>
Tape<Scalar>* Tape<Scalar>::active() {
  return g_active_tape<Scalar>;
}

template <typename Scalar>
void Tape<Scalar>::append(const std::shared_ptr<detail::Node<Scalar>>& node) {
  node->tape = this;
  node->position = nodes_.size();
  nodes_.push_back(node);
}

template <typename Scalar>
void Tape<Scalar>::backward(const Variable<Scalar>& loss) {
  auto& root = *loss.node();
  if (root.value.size() != 1) {
    throw Error(ErrorCode::NotScalar, "loss has shape " + shape_string(root.value.shape()));
  }
  if (root.tape != this) throw Error(ErrorCode::DetachedGraph, "loss is not recorded on this tape");

  std::vector<detail::Node<Scalar>*> touched;
  g_touched_leaves<Scalar> = &touched;
  struct Reset {
    ~Reset() { g_touched_leaves<Scalar> = nullptr; }
  } reset;

  for (std::size_t i = 0; i <= root.position; ++i) nodes_[i]->pending = Tensor<Scalar>();
  root.pending = Tensor<Scalar>(root.value.shape(), Scalar(1));
  for (std::size_t i = root.position + 1; i-- > 0;) {
    auto& node = *nodes_[i];
    if (!node.pending.is_set()) continue;
    node.propagate(node);
    node.pending = Tensor<Scalar>();
  }
  // Flushing per pass (rather than adding contributions straight into grad)
  // makes a repeated backward add exactly the same total again.
  for (auto* leaf : touched) {
    if (leaf->grad.is_set()) {
      leaf->grad.vec() += leaf->pending.vec();
    } else {
      leaf->grad = std::move(leaf->pending);
    }
    leaf->pending = Tensor<Scalar>();
  }
}

template <typename Scalar>
void backward(const Variable<Scalar>& loss) {
  if (!loss.defined()) throw Error(ErrorCode::DetachedGraph, "undefined loss");
  const auto& root = *loss.node();
  if (root.value.size() != 1) {
    throw Error(ErrorCode::NotScalar, "loss has shape " + shape_string(root.value.shape()));
  }
  if (root.tape == nullptr) {
    throw Error(ErrorCode::DetachedGraph, "loss was not recorded on a live tape");
  }
  root.tape->backward(loss);
}

namespace detail {

template <typename Scalar>
Variable<Scalar> record(Tensor<Scalar> value, std::vector<Variable<Scalar>> inputs,
                        std::function<void(Node<Scalar>&)> propagate) {
  if (!value.all_finite()) {
    throw Error(ErrorCode::NonFinite, "operation produced NaN/Inf in " + shape_string(value.shape()));
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->leaf = false;
  auto* tape = Tape<Scalar>::active();
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (tape != nullptr && needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->propagate = std::move(propagate);
    tape->append(node);
  }
  return Variable<Scalar>(std::move(node));
}

template <typename Scalar>
Tensor<Scalar>* grad_slot(Node<Scalar>& input) {
  if (!input.requires_grad) return nullptr;
  if (!input.pending.is_set()) {
    input.pending = Tensor<Scalar>(input.value.shape());
    if (input.leaf && g_touched_leaves<Scalar> != nullptr) g_touched_leaves<Scalar>->push_back(&input);
  }
  return &input.pending;
}

}  // namespace detail

#define STRLAB_INSTANTIATE(S)                                                                     \
  template class Tape<S>;                                                                         \
  template void backward<S>(const Variable<S>&);                                                  \
  template Variable<S> detail::record<S>(Tensor<S>, std::vector<Variable<S>>,                     \
                                         std::function<void(detail::Node<S>&)>);                  \
  template Tensor<S>* detail::grad_slot<S>(detail::Node<S>&);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab
