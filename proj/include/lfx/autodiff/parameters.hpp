#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lfx/autodiff/tensor.hpp"

namespace lfx::ad {

// Named learnable tensors in registration order.
template <typename Scalar>
class ParameterStore {
 public:
  Tensor<Scalar>& add(const std::string& name, Shape shape, Buffer<Scalar> values) {
    if (index_.count(name)) throw ConfigError("parameter registered twice: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor<Scalar>::parameter(std::move(shape), std::move(values)));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  const Tensor<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<Scalar>>>& entries() const { return entries_; }

  std::vector<Tensor<Scalar>> tensors() const {
    std::vector<Tensor<Scalar>> out;
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& [name, t] : entries_)
      out.add(name, t.shape(), t.value().template cast<Other>());
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor<Scalar>>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace lfx::ad
