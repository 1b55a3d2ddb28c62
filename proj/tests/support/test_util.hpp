// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "lem/ad/ops.hpp"
#include "lem/util/rng.hpp"

namespace lem::testing {

using ad::Shape;
using TensorD = ad::Tensor<double>;

inline std::vector<double> uniform_values(Rng& rng, std::size_t n, double lo = -1.0,
                                          double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) {
    x = rng.uniform(lo, hi);
  }
  return v;
}

inline TensorD random_param(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = ad::numel(shape);
  return TensorD::parameter(std::move(shape), uniform_values(rng, n, lo, hi));
}

inline TensorD random_const(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = ad::numel(shape);
  return TensorD::constant(std::move(shape), uniform_values(rng, n, lo, hi));
}

// Central differences of a scalar function against reverse-mode gradients
// for every entry of every input. Returns the worst relative error.
inline double max_fd_error(const std::function<TensorD()>& f, std::vector<TensorD> inputs,
                           double h = 1e-6) {
  for (auto& x : inputs) {
    x.zero_grad();
  }
  f().backward();
  double worst = 0.0;
  for (auto& x : inputs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      double num = 0.0;
      {
        ad::NoGradGuard ng;
        data[i] = keep + h;
        const double up = f().item();
        data[i] = keep - h;
        const double down = f().item();
        num = (up - down) / (2 * h);
      }
      data[i] = keep;
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double rel = std::fabs(a - num) / std::max({std::fabs(a), std::fabs(num), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Weighted sum with fixed pseudo-random weights, so every output entry
// contributes a distinct amount to the scalar.
inline TensorD probe(const TensorD& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum_all(ad::mul(y, random_const(rng, y.shape())));
}

}  // namespace lem::testing

#include <filesystem>
#include <fstream>
#include <string>

namespace lem::testing {

// Fresh, empty scratch directory per test.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  std::string tag = name;
  if (info != nullptr) {
    tag = std::string(info->test_suite_name()) + "_" + info->name() + "_" + name;
  }
  auto dir = std::filesystem::temp_directory_path() / ("lem_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace lem::testing
