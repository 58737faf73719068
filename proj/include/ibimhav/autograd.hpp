/*
 * Copyright (c) 2026, The ibimhav Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ibimhav/tensor.hpp"

namespace ibv {

// Global switch for graph recording. Inference runs under NoGradGuard so no
// closures or saved activations are kept.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Multiply-accumulate tally for the matrix products inside linear layers and
// attention. Used to cross-check the analytical cost model.
class MacCounter {
 public:
  static void reset();
  static std::uint64_t total();
  static void add(std::uint64_t macs);
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into the inputs' gradients.
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::int64_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->grad.shape() == node_->value.shape(); }
  // Allocates a zero gradient if nothing has been accumulated yet.
  const Tensor<T>& grad() const;
  void zero_grad();

  // Reverse pass from a single-element output, seeded with 1.
  void backward();

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds the output node of an operation. When grad mode is off or no input
// needs a gradient, inputs and closure are dropped.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn);

// Adds g into the gradient of v if v takes part in differentiation.
template <typename T>
void accumulate_grad(const std::shared_ptr<Node<T>>& v, const Tensor<T>& g);

extern template class Var<float>;
extern template class Var<double>;

}  // namespace ibv
