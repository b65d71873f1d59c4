#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcssl/graph.hpp"
#include "mcssl/tensor.hpp"

namespace mcssl {

// Ordered, named parameter tensors. Order is the declaration order, which the
// checkpoint format and the optimizer both rely on.
template <typename T>
class ParamSet {
 public:
  void add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return tensors_[it->second];
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return tensors_[it->second];
  }

  size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor<T>& tensor(size_t i) { return tensors_[i]; }
  const Tensor<T>& tensor(size_t i) const { return tensors_[i]; }

  bool shape_congruent(const ParamSet& o) const {
    if (names_ != o.names_) return false;
    for (size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].shape() != o.tensors_[i].shape()) return false;
    return true;
  }

  // Same names and shapes, all values zero.
  ParamSet zeros_like() const {
    ParamSet out;
    for (size_t i = 0; i < names_.size(); ++i) out.add(names_[i], Tensor<T>(tensors_[i].shape()));
    return out;
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (size_t i = 0; i < names_.size(); ++i)
      out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// Leaves for one ParamSet on a tape, addressable by name.
template <typename T>
class GraphParams {
 public:
  GraphParams(Tape<T>& tape, const ParamSet<T>& params, bool needs_grad) : tape_(&tape) {
    for (size_t i = 0; i < params.size(); ++i) {
      ids_[params.names()[i]] = tape.leaf(params.tensor(i), needs_grad);
    }
  }

  int at(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw std::out_of_range("no graph parameter named " + name);
    return it->second;
  }

  // Collect accumulated gradients back into ParamSet layout (zeros when a
  // parameter did not participate in the loss).
  ParamSet<T> gradients(const ParamSet<T>& like) const {
    ParamSet<T> out;
    for (size_t i = 0; i < like.size(); ++i) {
      const std::string& name = like.names()[i];
      int id = at(name);
      out.add(name, tape_->grad(id));
    }
    return out;
  }

 private:
  Tape<T>* tape_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace mcssl
