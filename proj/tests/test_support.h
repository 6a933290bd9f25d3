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

// Random small problem instances shared by the loss tests and the
// acceptance binary.

#ifndef CALPROXY_TESTS_TEST_SUPPORT_H_
#define CALPROXY_TESTS_TEST_SUPPORT_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "calproxy/global_center.h"
#include "calproxy/losses.h"
#include "calproxy/numerics.h"
#include "calproxy/similarity.h"

namespace calproxy::testing {

struct Instance {
  Matrix embeddings;
  std::vector<std::size_t> labels;
  ProxyBank bank;
  GlobalCenter gc;
};

// n_b samples in d dimensions over n_c classes with n_p proxies each. Every
// class appears at least once when n_b >= n_c, and every queue holds
// between 1 and 4 entries.
inline Instance random_instance(Rng& rng, std::size_t d, std::size_t n_c,
                                std::size_t n_b, std::size_t n_p) {
  Instance inst{Matrix(n_b, d), std::vector<std::size_t>(n_b),
                ProxyBank::random(n_c, n_p, d, rng), GlobalCenter(n_c, 4, 0, d)};
  for (double& v : inst.embeddings.flat()) v = rng.normal();
  for (std::size_t i = 0; i < n_b; ++i) {
    inst.labels[i] = i < n_c ? i : rng.uniform_index(n_c);
  }
  rng.shuffle(inst.labels);
  // Proxies off the unit sphere exercise the normalization chain rule.
  for (double& v : inst.bank.matrix().flat()) v *= 0.5 + rng.uniform();
  for (std::size_t c = 0; c < n_c; ++c) {
    const std::size_t count = 1 + rng.uniform_index(4);
    for (std::size_t k = 0; k < count; ++k) {
      inst.gc.push(c, random_unit_vector(d, rng));
    }
  }
  return inst;
}

struct GradErrors {
  double embeddings = 0.0;
  double proxies = 0.0;
  double worst() const { return std::max(embeddings, proxies); }
};

// Central-difference check of loss_and_grad against total_loss.
inline GradErrors check_gradients(const Instance& inst, const LossSpec& spec,
                                  bool active, double eps = 1e-5) {
  const LossResult r = loss_and_grad(BatchView{inst.embeddings, inst.labels},
                                     inst.bank, inst.gc, spec, active);
  const ScalarFunction f_emb = [&](std::span<const double> x) {
    Matrix e = inst.embeddings;
    std::copy(x.begin(), x.end(), e.flat().begin());
    return total_loss(BatchView{e, inst.labels}, inst.bank, inst.gc, spec,
                      active);
  };
  const ScalarFunction f_prox = [&](std::span<const double> x) {
    ProxyBank b = inst.bank;
    std::copy(x.begin(), x.end(), b.matrix().flat().begin());
    return total_loss(BatchView{inst.embeddings, inst.labels}, b, inst.gc,
                      spec, active);
  };
  return {grad_check(f_emb, inst.embeddings.flat(), r.grads.d_embeddings.flat(),
                     eps),
          grad_check(f_prox, inst.bank.matrix().flat(),
                     r.grads.d_proxies.flat(), eps)};
}

inline std::vector<LossFamily> all_families() {
  return {LossFamily::kProxyAnchor, LossFamily::kProxyNca,
          LossFamily::kSoftTriple};
}

inline std::string kind_name(LossFamily f, LossVariant v) {
  return std::string(to_string(f)) + "/" + std::string(to_string(v));
}

// MAP@R by brute force: every candidate's rank is the number of candidates
// that beat it (higher cosine, or equal cosine and lower index).
inline double brute_force_map_at_r(const Matrix& emb,
                                   const std::vector<std::size_t>& labels) {
  const std::size_t n = emb.rows();
  const std::size_t d = emb.cols();
  Matrix unit(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += emb(i, k) * emb(i, k);
    const double norm = std::sqrt(sq);
    for (std::size_t k = 0; k < d; ++k) unit(i, k) = emb(i, k) / norm;
  }
  double total = 0.0;
  std::size_t scored = 0;
  std::vector<double> sim(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += unit(q, k) * unit(j, k);
      sim[j] = s;
    }
    std::vector<std::size_t> relevant_ranks;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q || labels[j] != labels[q]) continue;
      std::size_t rank = 0;
      for (std::size_t o = 0; o < n; ++o) {
        if (o == q || o == j) continue;
        if (sim[o] > sim[j] || (sim[o] == sim[j] && o < j)) ++rank;
      }
      relevant_ranks.push_back(rank);
    }
    const std::size_t r = relevant_ranks.size();
    if (r == 0) continue;
    std::sort(relevant_ranks.begin(), relevant_ranks.end());
    double precision_sum = 0.0;
    for (std::size_t t = 0; t < r && relevant_ranks[t] < r; ++t) {
      precision_sum += static_cast<double>(t + 1) /
                       static_cast<double>(relevant_ranks[t] + 1);
    }
    total += precision_sum / static_cast<double>(r);
    ++scored;
  }
  return scored == 0 ? 0.0 : total / static_cast<double>(scored);
}

// Random retrieval instance of n points in d dimensions over n_c classes,
// with roughly one point in ten duplicated to force exact ties.
inline void random_retrieval(Rng& rng, std::size_t n, std::size_t d,
                             std::size_t n_c, Matrix& emb,
                             std::vector<std::size_t>& labels) {
  emb = Matrix(n, d);
  labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = rng.uniform_index(n_c);
    if (i > 0 && rng.uniform() < 0.1) {
      const std::size_t src = rng.uniform_index(i);
      std::copy(emb.row(src).begin(), emb.row(src).end(), emb.row(i).begin());
    } else {
      for (double& v : emb.row(i)) v = rng.normal();
    }
  }
}

}  // namespace calproxy::testing

#endif  // CALPROXY_TESTS_TEST_SUPPORT_H_
