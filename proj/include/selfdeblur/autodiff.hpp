#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "selfdeblur/tensor.hpp"

namespace selfdeblur {

template <class T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
};

// Named trainable tensors with paired gradient slots. Ordered by name so
// iteration order (and hence every optimizer update) is deterministic.
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (params_.count(name)) throw ContractViolation("duplicate parameter name: " + name);
    Tensor<T> g(init.shape());
    auto [it, ok] = params_.emplace(name, Parameter<T>{std::move(init), std::move(g)});
    return it->second;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractViolation("unknown parameter: " + name);
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractViolation("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(T(0));
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter<T>> params_;
};

template <class T>
class Tape;

// Handle to one node of a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, so backward() is a single reverse sweep.
template <class T>
class Tape {
 public:
  // Backward closure of a node: reads grad(self) and accumulates into parents.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> parents;
    Tensor<T> value;
    Tensor<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  // A non-recording tape evaluates forward only.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> v) { return leaf("constant", std::move(v), false, nullptr); }
  Var<T> variable(Tensor<T> v) { return leaf("variable", std::move(v), record_, nullptr); }

  // Binds a stored parameter. Frozen parameters enter as constants.
  Var<T> param(ParamStore<T>& store, const std::string& name, bool trainable = true) {
    Parameter<T>& p = store.at(name);
    return leaf(name, p.value, trainable && record_, trainable ? &p : nullptr);
  }

  template <class Fn>
  Var<T> push(std::string op, Tensor<T> value, std::vector<std::size_t> parents, Fn&& backward) {
    bool rg = false;
    if (record_)
      for (std::size_t p : parents) rg = rg || nodes_[p].requires_grad;
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg) {
      n.parents = std::move(parents);
      n.backward = std::forward<Fn>(backward);
    }
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, allocated on first use. nullptr when the node
  // does not participate in differentiation.
  Tensor<T>* grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  const Tensor<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }
  const Tensor<T>& grad(Var<T> v) const { return grad(v.id); }

  // Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse, then adds leaf
  // gradients into their bound parameters.
  void backward(Var<T> loss) {
    if (!record_) throw ContractViolation("backward() on a non-recording tape");
    if (loss.value().size() != 1)
      throw ContractViolation("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    Tensor<T>* g = grad_slot(loss.id);
    if (!g) return;
    (*g)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    for (Node& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

 private:
  Var<T> leaf(std::string op, Tensor<T> v, bool rg, Parameter<T>* p) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(v);
    n.requires_grad = rg;
    n.param = rg ? p : nullptr;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool record_;
  std::deque<Node> nodes_;  // stable references across push_back
};

}  // namespace selfdeblur
