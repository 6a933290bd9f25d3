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

// Sample-to-class similarities of the calibrate-proxy structure:
//
//   s_ep(x, c) = sum_j s(x, p_cj) * softmax_j(s(x, p_cj))    (multi-proxy)
//   s_em(x, c) = mean_k s(x, b_ck)                           (global center)
//   s_cp(x, c) = s_ep(x, c) + s_em(x, c)
//
// where s is cosine similarity. The scalar functions are the reference
// definitions; SimilarityTable evaluates the same quantities for a whole
// batch and carries what the backward pass needs.

#ifndef CALPROXY_SIMILARITY_H_
#define CALPROXY_SIMILARITY_H_

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "calproxy/global_center.h"
#include "calproxy/numerics.h"

namespace calproxy {

// n_c x n_p learnable proxies stored as rows c * n_p + j.
class ProxyBank {
 public:
  ProxyBank(std::size_t class_count, std::size_t proxies_per_class,
            std::size_t dim);
  ProxyBank(std::size_t class_count, std::size_t proxies_per_class,
            Matrix proxies);

  // Unit-norm random directions.
  static ProxyBank random(std::size_t class_count,
                          std::size_t proxies_per_class, std::size_t dim,
                          Rng& rng);

  std::size_t class_count() const { return class_count_; }
  std::size_t proxies_per_class() const { return proxies_per_class_; }
  std::size_t dim() const { return proxies_.cols(); }

  std::span<double> proxy(std::size_t c, std::size_t j) {
    return proxies_.row(c * proxies_per_class_ + j);
  }
  std::span<const double> proxy(std::size_t c, std::size_t j) const {
    return proxies_.row(c * proxies_per_class_ + j);
  }
  std::vector<Vec> class_proxies(std::size_t c) const;

  Matrix& matrix() { return proxies_; }
  const Matrix& matrix() const { return proxies_; }

  friend bool operator==(const ProxyBank&, const ProxyBank&) = default;

 private:
  std::size_t class_count_;
  std::size_t proxies_per_class_;
  Matrix proxies_;
};

struct SimBreakdown {
  double s_ep = 0.0;
  double s_em = 0.0;
  double s_cp = 0.0;
};

// Softmax-weighted similarity of x to one class's proxies.
double s_mul(std::span<const double> x, const std::vector<Vec>& class_proxies);

// Mean cosine similarity of x to the stored entries; 0 for an empty queue.
double s_em(std::span<const double> x, const std::deque<Vec>& class_queue);

// s_em is forced to 0 when `active` is false.
SimBreakdown s_cp(std::span<const double> x, std::size_t class_id,
                  const ProxyBank& bank, const GlobalCenter& gc, bool active);

// Batched similarities of every sample to every class.
struct SimilarityTable {
  std::size_t batch_size = 0;
  std::size_t class_count = 0;
  std::size_t proxies_per_class = 0;
  bool uses_center = false;

  Matrix x_hat;        // n_b x d, normalized samples
  Vec x_norm;          // n_b
  Matrix p_hat;        // (n_c * n_p) x d, normalized proxies
  Vec p_norm;          // n_c * n_p
  Matrix cosine;       // n_b x (n_c * n_p)
  Matrix weight;       // n_b x (n_c * n_p), per-class softmax of cosine
  Matrix center_mean;  // n_c x d, mean stored entry per class
  Matrix s_ep;         // n_b x n_c
  Matrix s_em;         // n_b x n_c, zero unless uses_center
  Matrix s_cp;         // n_b x n_c
};

// When `gc` is null or `use_center` is false, s_em is identically zero.
SimilarityTable compute_similarities(const Matrix& embeddings,
                                     const ProxyBank& bank,
                                     const GlobalCenter* gc, bool use_center);

// Chain rule from dL/ds_cp (n_b x n_c) onto the samples and the proxies.
// Gradients are accumulated into d_embeddings and d_proxies, which must
// already have the shapes of the embeddings and of bank.matrix().
void backprop_similarities(const SimilarityTable& table, const Matrix& d_scp,
                           Matrix& d_embeddings, Matrix& d_proxies);

}  // namespace calproxy

#endif  // CALPROXY_SIMILARITY_H_
