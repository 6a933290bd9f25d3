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

#include "calproxy/numerics.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "calproxy/errors.h"

namespace calproxy {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: dimension mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a,
                         std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0) throw DomainError("cosine_similarity: first argument has zero norm");
  if (nb == 0.0) throw DomainError("cosine_similarity: second argument has zero norm");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

Vec l2_normalize(std::span<const double> a) {
  const double n = l2_norm(a);
  if (n == 0.0) throw DomainError("l2_normalize: zero-norm vector");
  Vec out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

Vec softmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("softmax: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    total += out[i];
  }
  for (double& o : out) o /= total;
  return out;
}

double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

double log1p_sum_exp(std::span<const double> z) {
  double m = 0.0;
  for (double v : z) m = std::max(m, v);
  if (m == 0.0) {
    // log1p keeps full relative precision when every exp(z) is tiny.
    double sum = 0.0;
    for (double v : z) sum += std::exp(v);
    return std::log1p(sum);
  }
  double total = std::exp(-m);
  for (double v : z) total += std::exp(v - m);
  return m + std::log(total);
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw DomainError("log_sum_exp: empty input");
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - m);
  return m + std::log(total);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_index: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return draw % n;
}

std::string Rng::save_state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::load_state(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (in.fail()) throw ParseError("Rng: malformed generator state");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Vec random_unit_vector(std::size_t dim, Rng& rng) {
  Vec v(dim);
  double n = 0.0;
  while (n == 0.0) {
    for (double& x : v) x = rng.normal();
    n = l2_norm(v);
  }
  for (double& x : v) x /= n;
  return v;
}

double grad_check(const ScalarFunction& f, std::span<const double> x0,
                  std::span<const double> analytic_grad, double eps) {
  if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");
  if (x0.size() != analytic_grad.size()) {
    throw ShapeError("grad_check: gradient length does not match parameters");
  }
  Vec x(x0.begin(), x0.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f(x);
    x[i] = saved - eps;
    const double down = f(x);
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite value at coordinate " +
                         std::to_string(i));
    }
    const double fd = (up - down) / (2.0 * eps);
    const double g = analytic_grad[i];
    const double denom = std::max({1.0, std::abs(fd), std::abs(g)});
    worst = std::max(worst, std::abs(fd - g) / denom);
  }
  return worst;
}

}  // namespace calproxy
