// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lem/ad/tensor.hpp"
#include "lem/util/rng.hpp"

namespace lem::model {

using ad::Shape;
using ad::Tensor;

// Named trainable tensors in creation order. Names are dotted paths such as
// "encoder.vsn.select.w2"; the order is stable and drives checkpoints and the
// optimiser state layout.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, const std::vector<double>& values);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor<T>& tensor(std::size_t i) { return entries_[i].second; }
  const Tensor<T>& tensor(std::size_t i) const { return entries_[i].second; }
  std::size_t total_elements() const;

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Initialisers returning row-major values.
std::vector<double> glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                                   std::size_t count);
std::vector<double> constant_values(std::size_t count, double value);

}  // namespace lem::model
