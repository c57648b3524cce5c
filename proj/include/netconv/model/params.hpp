#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "netconv/tensor/autograd.hpp"

namespace netconv::model {

using tensor::Shape;
using tensor::Tensor;
using tensor::Var;

// Named trainable tensors in insertion order. Iteration order is part of the
// contract: initialisation, optimisation and serialisation all walk it.
template <typename T>
class ParameterStore {
 public:
  Var<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, Var<T>::leaf(std::move(value), true));
    return entries_.back().second;
  }

  void remove_prefix(const std::string& prefix) {
    std::vector<std::pair<std::string, Var<T>>> kept;
    for (auto& e : entries_) {
      if (e.first.rfind(prefix, 0) != 0) kept.push_back(std::move(e));
    }
    entries_ = std::move(kept);
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].first, i);
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Var<T>& at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].second;
  }
  Var<T>& at(const std::string& name) { return const_cast<Var<T>&>(std::as_const(*this).at(name)); }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
  }

  void set_requires_grad(const std::string& prefix, bool on) {
    for (auto& [name, v] : entries_) {
      if (name.rfind(prefix, 0) == 0) v.node()->requires_grad = on;
    }
  }

  // Deep copy with a different scalar type.
  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, v] : entries_) {
      out.add(name, v.value().template cast<U>());
      out.at(name).node()->requires_grad = v.requires_grad();
    }
    return out;
  }

  ParameterStore clone() const { return cast<T>(); }

  bool values_equal(const ParameterStore& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].first != other.entries_[i].first) return false;
      if (!(entries_[i].second.value() == other.entries_[i].second.value())) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace netconv::model
