// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "clipforge/errors.hpp"

namespace clipforge {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::span<float> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

void TensorImpl::accumulate_grad(std::span<const float> g) {
  if (!requires_grad) return;
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

}  // namespace detail

namespace {
thread_local bool grad_mode_enabled = true;

void check_shape(const Shape& shape) {
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
}
}  // namespace

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(clipforge::numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  check_shape(shape);
  if (clipforge::numel(shape) != values.size())
    throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(clipforge::numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::size(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return clipforge::numel(shape()); }

std::span<const float> Tensor::data() const {
  shape();
  return impl_->data;
}

std::span<float> Tensor::mutable_data() {
  shape();
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
}

bool Tensor::is_leaf() const {
  shape();
  return impl_->node == nullptr;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  shape();
  return impl_->grad;
}

std::span<float> Tensor::mutable_grad() {
  shape();
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

const char* Tensor::producer() const {
  shape();
  return impl_->node ? impl_->node->op : "leaf";
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.impl()->node) return g;
  // Iterative post-order DFS; post-order of a DAG is a topological order.
  std::unordered_set<const detail::TensorImpl*> visited;
  struct Frame {
    detail::ImplPtr impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.impl(), 0});
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const detail::Node* node = top.impl->node.get();
    if (top.next_input < node->inputs.size()) {
      const detail::ImplPtr& in = node->inputs[top.next_input++];
      if (in->node && visited.insert(in.get()).second) stack.push_back({in, 0});
      continue;
    }
    g.records_.push_back({top.impl, node});
    stack.pop_back();
  }
  return g;
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw ContractError("backward() needs a scalar root, got " + (root.defined() ? to_string(root.shape()) : "undefined"));
  if (!root.requires_grad()) throw ContractError("backward() root is not connected to any tensor requiring grad");
  const Graph graph = Graph::trace(root);
  root.impl()->accumulate_grad(std::vector<float>{1.0f});
  const auto& records = graph.records();
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    detail::TensorImpl& out = *it->output;
    if (!out.grad.empty()) it->node->backward(out);
    // Intermediate buffers are not needed once propagated.
    out.grad.clear();
    out.grad.shrink_to_fit();
  }
}

Tensor record(Tensor out, const char* op, std::vector<Tensor> inputs,
              std::function<void(const detail::TensorImpl& out)> rule) {
  if (!GradMode::enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(rule);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

}  // namespace clipforge
