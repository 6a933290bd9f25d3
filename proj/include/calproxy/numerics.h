/* Copyright 2026 The calproxy Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Vector algebra, elementary functions and seeded randomness shared by every
// other module. All arithmetic is double precision.

#ifndef CALPROXY_NUMERICS_H_
#define CALPROXY_NUMERICS_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace calproxy {

using Vec = std::vector<double>;

// Dense row-major matrix. Rows are the unit of access almost everywhere
// (one embedding, one proxy, one feature vector per row).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

// dot(a,b)/(|a||b|). Throws DomainError naming the zero-norm argument.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

Vec l2_normalize(std::span<const double> a);

// Max-subtracted softmax. Throws DomainError on empty input.
Vec softmax(std::span<const double> v);

// log(1 + e^z) without overflow for large |z|.
double softplus(double z);

// log(1 + sum_i e^{z_i}); the implicit 1 acts as an extra zero logit.
double log1p_sum_exp(std::span<const double> z);

double log_sum_exp(std::span<const double> z);

bool all_finite(std::span<const double> v);

// Seeded 64-bit generator. Distributions are implemented here on top of the
// raw mt19937_64 stream (whose output is fixed by the standard) so draws are
// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Mixes a base seed with a stream id so independent consumers (data,
// noise, init, sampling) never share a stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Unit vector with a uniformly random direction.
Vec random_unit_vector(std::size_t dim, Rng& rng);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Max over coordinates of |fd_i - g_i| / max(1, |fd_i|, |g_i|) where fd is
// the central difference with step eps. Throws NumericError if f is not
// finite at a probe point.
double grad_check(const ScalarFunction& f, std::span<const double> x0,
                  std::span<const double> analytic_grad, double eps);

}  // namespace calproxy

#endif  // CALPROXY_NUMERICS_H_
