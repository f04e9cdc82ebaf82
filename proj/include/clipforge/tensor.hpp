// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float32 tensors with a reverse-mode differentiation graph.
//
// A Tensor is a cheap handle: copies share storage and graph identity. Data is
// row-major and contiguous; there are no views, so reshape copies. Gradients
// accumulate into leaves until zero_grad() is called.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace clipforge {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves

  // Gradient buffer, allocated as zeros on first use.
  std::span<float> grad_buffer();
  void accumulate_grad(std::span<const float> g);
};

using ImplPtr = std::shared_ptr<TensorImpl>;

// One recorded operation. The backward rule reads the output's gradient and
// accumulates into the inputs; it never holds a reference to the output itself.
struct Node {
  const char* op = "";
  std::vector<ImplPtr> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

}  // namespace detail

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  /// In-place access for optimizers and initializers. Does not touch the graph.
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  /// Only valid on leaves; intermediate results inherit the flag from their inputs.
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  /// Accumulated gradient; empty span if nothing has accumulated yet.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// Fresh leaf holding a copy of the data, detached from any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Name of the op that produced this tensor, or "leaf".
  const char* producer() const;

  // Graph-level plumbing used by the ops library.
  const detail::ImplPtr& impl() const { return impl_; }
  static Tensor from_impl(detail::ImplPtr impl) { return Tensor(std::move(impl)); }

  friend bool same_storage(const Tensor& a, const Tensor& b) { return a.impl_ == b.impl_; }

 private:
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}
  detail::ImplPtr impl_;
};

/// Topologically ordered operation records reachable from a root.
class Graph {
 public:
  struct Record {
    detail::ImplPtr output;
    const detail::Node* node;
  };

  static Graph trace(const Tensor& root);

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<Record> records_;
};

/// Reverse-mode sweep from a scalar root. Every reachable leaf that requires grad
/// accumulates d(root)/d(leaf); intermediate gradient buffers are released afterwards.
void backward(const Tensor& root);

/// Records `out` as the result of `op` over `inputs` when any input requires grad and
/// grad mode is on. Returns `out` for chaining.
Tensor record(Tensor out, const char* op, std::vector<Tensor> inputs,
              std::function<void(const detail::TensorImpl& out)> rule);

}  // namespace clipforge
