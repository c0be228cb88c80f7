#pragma once

// Tensor-level reverse-mode differentiation.
//
// A Tape records one forward pass as a list of nodes in creation order. Each
// node owns its value, a lazily allocated gradient, and a closure that pushes
// its gradient into its parents. backward() walks the list once in reverse,
// which is a valid reverse topological order because parents are always
// created before children.

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace moments_nerf {

/// A named trainable tensor with its gradient accumulator.
template <class T>
struct Parameter {
  std::string name;
  std::string group;  // e.g. "gabor", "zernike", "trunk", "field"
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;
};

/// Ordered collection of parameters. Element addresses are stable.
template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { *this = other; }
  ParamSet& operator=(const ParamSet& other) {
    if (this == &other) return *this;
    params_ = other.params_;
    index_ = other.index_;
    return *this;
  }
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Parameter<T>& add(std::string name, std::string group, Tensor<T> value) {
    require(!index_.count(name), "duplicate parameter name: " + name);
    index_[name] = params_.size();
    Parameter<T> p;
    p.name = std::move(name);
    p.group = std::move(group);
    p.grad = Tensor<T>(value.shape);
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& operator[](const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter<T>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  void set_group_frozen(const std::string& group, bool frozen) {
    for (auto& p : params_)
      if (p.group == group) p.frozen = frozen;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.group, p.value.template cast<U>());
      q.frozen = p.frozen;
    }
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Input that never receives a gradient.
  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  /// Input whose gradient is retained and can be read after backward().
  Var leaf(Tensor<T> value) { return push(std::move(value), record_, nullptr); }

  /// Parameter leaf; backward() accumulates into p.grad unless p.frozen.
  Var param(Parameter<T>& p) {
    Var v = push(p.value, record_ && !p.frozen, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  /// Register an op result. needs_grad is inherited from the parents.
  Var op(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (Var p : parents) needs = needs || nodes_[p.id].needs_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }
  Var op(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (Var p : parents) needs = needs || nodes_[p.id].needs_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  /// Gradient of the last backward() root with respect to v (zeros if unreached).
  Tensor<T> grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>(n.value.shape) : n.grad;
  }

  /// Gradient buffer of node id, allocated on first use. Used inside backward fns.
  Tensor<T>& grad_buffer(int id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }
  const Tensor<T>& value_of(int id) const { return nodes_[id].value; }
  const Tensor<T>& grad_of(int id) const { return nodes_[id].grad; }

  void backward(Var root) {
    require(record_, "backward on a tape that was not recording");
    auto& r = nodes_.at(root.id);
    require(r.value.size() == 1, "backward root must be a scalar, got " + shape_str(r.value.shape));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(root.id).data[0] = T(1);
    for (int id = root.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param && !n.param->frozen) {
        auto& pg = n.param->grad;
        for (std::size_t i = 0; i < pg.size(); ++i) pg.data[i] += n.grad.data[i];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor<T> value, bool needs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool record_;
};

}  // namespace moments_nerf
