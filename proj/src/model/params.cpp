// SPDX-License-Identifier: Apache-2.0

#include "lem/model/params.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace lem::model {

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, Shape shape,
                             const std::vector<double>& values) {
  if (contains(name)) {
    throw std::logic_error(fmt::format("duplicate parameter '{}'", name));
  }
  if (ad::numel(shape) != values.size()) {
    throw std::logic_error(fmt::format("parameter '{}' of shape {} given {} values", name,
                                       ad::shape_str(shape), values.size()));
  }
  std::vector<T> cast(values.begin(), values.end());
  auto t = Tensor<T>::parameter(std::move(shape), std::move(cast));
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range(fmt::format("no parameter '{}'", name));
  }
  return entries_[it->second].second;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range(fmt::format("no parameter '{}'", name));
  }
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    n += e.second.size();
  }
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) {
    e.second.zero_grad();
  }
}

std::vector<double> glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                                   std::size_t count) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(count);
  for (auto& x : v) {
    x = rng.uniform(-limit, limit);
  }
  return v;
}

std::vector<double> constant_values(std::size_t count, double value) {
  return std::vector<double>(count, value);
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace lem::model
