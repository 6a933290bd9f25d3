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

#include "calproxy/similarity.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "calproxy/errors.h"

namespace calproxy {

ProxyBank::ProxyBank(std::size_t class_count, std::size_t proxies_per_class,
                     std::size_t dim)
    : ProxyBank(class_count, proxies_per_class,
                Matrix(class_count * proxies_per_class, dim)) {}

ProxyBank::ProxyBank(std::size_t class_count, std::size_t proxies_per_class,
                     Matrix proxies)
    : class_count_(class_count),
      proxies_per_class_(proxies_per_class),
      proxies_(std::move(proxies)) {
  if (proxies_per_class == 0) {
    throw ConfigError("ProxyBank: at least one proxy per class is required");
  }
  if (proxies_.rows() != class_count * proxies_per_class) {
    throw ShapeError("ProxyBank: expected " +
                     std::to_string(class_count * proxies_per_class) +
                     " proxy rows, got " + std::to_string(proxies_.rows()));
  }
}

ProxyBank ProxyBank::random(std::size_t class_count,
                            std::size_t proxies_per_class, std::size_t dim,
                            Rng& rng) {
  ProxyBank bank(class_count, proxies_per_class, dim);
  for (std::size_t r = 0; r < bank.proxies_.rows(); ++r) {
    const Vec v = random_unit_vector(dim, rng);
    std::copy(v.begin(), v.end(), bank.proxies_.row(r).begin());
  }
  return bank;
}

std::vector<Vec> ProxyBank::class_proxies(std::size_t c) const {
  if (c >= class_count_) {
    throw IndexError("ProxyBank: class id " + std::to_string(c) +
                     " out of range");
  }
  std::vector<Vec> out;
  out.reserve(proxies_per_class_);
  for (std::size_t j = 0; j < proxies_per_class_; ++j) {
    const auto p = proxy(c, j);
    out.emplace_back(p.begin(), p.end());
  }
  return out;
}

double s_mul(std::span<const double> x, const std::vector<Vec>& class_proxies) {
  if (class_proxies.empty()) throw DomainError("s_mul: empty proxy list");
  Vec sims;
  sims.reserve(class_proxies.size());
  for (const Vec& p : class_proxies) sims.push_back(cosine_similarity(x, p));
  const Vec w = softmax(sims);
  double total = 0.0;
  for (std::size_t j = 0; j < sims.size(); ++j) total += sims[j] * w[j];
  return total;
}

double s_em(std::span<const double> x, const std::deque<Vec>& class_queue) {
  if (class_queue.empty()) return 0.0;
  double total = 0.0;
  for (const Vec& b : class_queue) total += cosine_similarity(x, b);
  return total / static_cast<double>(class_queue.size());
}

SimBreakdown s_cp(std::span<const double> x, std::size_t class_id,
                  const ProxyBank& bank, const GlobalCenter& gc, bool active) {
  SimBreakdown out;
  out.s_ep = s_mul(x, bank.class_proxies(class_id));
  out.s_em = active ? s_em(x, gc.entries(class_id)) : 0.0;
  out.s_cp = out.s_ep + out.s_em;
  return out;
}

namespace {

void normalize_rows(const Matrix& in, Matrix& out, Vec& norms,
                    const char* what) {
  out = Matrix(in.rows(), in.cols());
  norms.assign(in.rows(), 0.0);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const double n = l2_norm(in.row(r));
    if (n == 0.0) {
      throw DomainError(std::string("compute_similarities: zero-norm ") +
                        what + " at row " + std::to_string(r));
    }
    norms[r] = n;
    auto dst = out.row(r);
    auto src = in.row(r);
    for (std::size_t k = 0; k < in.cols(); ++k) dst[k] = src[k] / n;
  }
}

}  // namespace

SimilarityTable compute_similarities(const Matrix& embeddings,
                                     const ProxyBank& bank,
                                     const GlobalCenter* gc, bool use_center) {
  const std::size_t n_b = embeddings.rows();
  const std::size_t n_c = bank.class_count();
  const std::size_t n_p = bank.proxies_per_class();
  const std::size_t d = bank.dim();
  if (embeddings.cols() != d) {
    throw ShapeError("compute_similarities: embedding dimension " +
                     std::to_string(embeddings.cols()) +
                     " does not match proxy dimension " + std::to_string(d));
  }

  SimilarityTable t;
  t.batch_size = n_b;
  t.class_count = n_c;
  t.proxies_per_class = n_p;
  t.uses_center = use_center && gc != nullptr;
  normalize_rows(embeddings, t.x_hat, t.x_norm, "embedding");
  normalize_rows(bank.matrix(), t.p_hat, t.p_norm, "proxy");

  t.center_mean = Matrix(n_c, d);
  if (t.uses_center) {
    if (gc->class_count() != n_c || gc->dim() != d) {
      throw ShapeError("compute_similarities: global center shape mismatch");
    }
    for (std::size_t c = 0; c < n_c; ++c) {
      const std::size_t m = gc->entries(c).size();
      if (m == 0) continue;
      const Vec sum = gc->entry_sum(c);
      auto row = t.center_mean.row(c);
      for (std::size_t k = 0; k < d; ++k) {
        row[k] = sum[k] / static_cast<double>(m);
      }
    }
  }

  t.cosine = Matrix(n_b, n_c * n_p);
  t.weight = Matrix(n_b, n_c * n_p);
  t.s_ep = Matrix(n_b, n_c);
  t.s_em = Matrix(n_b, n_c);
  t.s_cp = Matrix(n_b, n_c);
  Vec sims(n_p);
  for (std::size_t i = 0; i < n_b; ++i) {
    const auto xi = t.x_hat.row(i);
    for (std::size_t c = 0; c < n_c; ++c) {
      for (std::size_t j = 0; j < n_p; ++j) {
        sims[j] = dot(xi, t.p_hat.row(c * n_p + j));
        t.cosine(i, c * n_p + j) = sims[j];
      }
      const Vec w = softmax(sims);
      double sep = 0.0;
      for (std::size_t j = 0; j < n_p; ++j) {
        t.weight(i, c * n_p + j) = w[j];
        sep += sims[j] * w[j];
      }
      t.s_ep(i, c) = sep;
      t.s_em(i, c) = t.uses_center ? dot(xi, t.center_mean.row(c)) : 0.0;
      t.s_cp(i, c) = t.s_ep(i, c) + t.s_em(i, c);
    }
  }
  return t;
}

void backprop_similarities(const SimilarityTable& t, const Matrix& d_scp,
                           Matrix& d_embeddings, Matrix& d_proxies) {
  const std::size_t n_p = t.proxies_per_class;
  const std::size_t d = t.x_hat.cols();
  if (d_scp.rows() != t.batch_size || d_scp.cols() != t.class_count ||
      d_embeddings.rows() != t.batch_size || d_embeddings.cols() != d ||
      d_proxies.rows() != t.p_hat.rows() || d_proxies.cols() != d) {
    throw ShapeError("backprop_similarities: gradient shape mismatch");
  }
  for (std::size_t i = 0; i < t.batch_size; ++i) {
    const auto xi = t.x_hat.row(i);
    auto gx = d_embeddings.row(i);
    const double inv_xn = 1.0 / t.x_norm[i];
    for (std::size_t c = 0; c < t.class_count; ++c) {
      const double g = d_scp(i, c);
      if (g == 0.0) continue;
      const double sep = t.s_ep(i, c);
      for (std::size_t j = 0; j < n_p; ++j) {
        const std::size_t r = c * n_p + j;
        const double s = t.cosine(i, r);
        // d s_ep / d s_j = w_j (1 + s_j - s_ep)
        const double h = g * t.weight(i, r) * (1.0 + s - sep);
        const auto pr = t.p_hat.row(r);
        auto gp = d_proxies.row(r);
        const double inv_pn = 1.0 / t.p_norm[r];
        for (std::size_t k = 0; k < d; ++k) {
          gx[k] += h * (pr[k] - s * xi[k]) * inv_xn;
          gp[k] += h * (xi[k] - s * pr[k]) * inv_pn;
        }
      }
      if (t.uses_center) {
        const double sem = t.s_em(i, c);
        const auto mu = t.center_mean.row(c);
        for (std::size_t k = 0; k < d; ++k) {
          gx[k] += g * (mu[k] - sem * xi[k]) * inv_xn;
        }
      }
    }
  }
}

}  // namespace calproxy
