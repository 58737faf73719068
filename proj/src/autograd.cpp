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

#include "ibimhav/autograd.hpp"

#include <unordered_set>

namespace ibv {

namespace {
thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_macs = 0;
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

void MacCounter::reset() { g_macs = 0; }
std::uint64_t MacCounter::total() { return g_macs; }
void MacCounter::add(std::uint64_t macs) { g_macs += macs; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  if (!node_) throw InternalError("grad of undefined variable");
  return node_->ensure_grad();
}

template <typename T>
void Var<T>::zero_grad() {
  if (node_) node_->grad = Tensor<T>();
}

template <typename T>
void Var<T>::backward() {
  if (!node_) throw InternalError("backward on undefined variable");
  if (node_->value.size() != 1) {
    throw DimensionError("backward needs a single-element output, got shape " + shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.shape() == n->value.shape()) n->backward_fn(*n);
  }
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) {
      if (in.defined()) node->inputs.push_back(in.node());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void accumulate_grad(const std::shared_ptr<Node<T>>& v, const Tensor<T>& g) {
  if (!v || !v->requires_grad) return;
  auto& dst = v->ensure_grad();
  if (g.size() != dst.size()) {
    throw InternalError("gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(dst.shape()));
  }
  T* d = dst.ptr();
  const T* s = g.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>);
template void accumulate_grad(const std::shared_ptr<Node<float>>&, const Tensor<float>&);
template void accumulate_grad(const std::shared_ptr<Node<double>>&, const Tensor<double>&);

}  // namespace ibv
