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

#include "calproxy/evaluator.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "calproxy/errors.h"

namespace calproxy {
namespace {

void check_inputs(const Matrix& embeddings,
                  std::span<const std::size_t> labels, const char* what) {
  if (embeddings.rows() < 2) {
    throw DomainError(std::string(what) + ": at least two samples required");
  }
  if (labels.size() != embeddings.rows()) {
    throw ShapeError(std::string(what) + ": label count mismatch");
  }
}

Matrix normalized_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const Vec unit = l2_normalize(m.row(r));
    std::copy(unit.begin(), unit.end(), out.row(r).begin());
  }
  return out;
}

// True when candidate a ranks ahead of candidate b.
bool ranks_before(double sim_a, std::size_t a, double sim_b, std::size_t b) {
  return sim_a > sim_b || (sim_a == sim_b && a < b);
}

}  // namespace

RecallResult recall_at_k(const Matrix& embeddings,
                         std::span<const std::size_t> labels,
                         std::span<const std::size_t> ks) {
  check_inputs(embeddings, labels, "recall_at_k");
  for (std::size_t k : ks) {
    if (k == 0) throw DomainError("recall_at_k: K must be at least 1");
  }
  const std::size_t n = embeddings.rows();
  const Matrix unit = normalized_rows(embeddings);
  std::vector<std::size_t> hits(ks.size(), 0);
  std::size_t scored = 0;
  RecallResult result;
  Vec sims(n);
  for (std::size_t q = 0; q < n; ++q) {
    const auto xq = unit.row(q);
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      sims[j] = dot(xq, unit.row(j));
      if (labels[j] == labels[q] &&
          (best == n || ranks_before(sims[j], j, sims[best], best))) {
        best = j;
      }
    }
    if (best == n) {
      ++result.excluded_queries;
      continue;
    }
    // Rank of the first correct neighbour (0-based).
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != q && ranks_before(sims[j], j, sims[best], best)) ++ahead;
    }
    ++scored;
    for (std::size_t t = 0; t < ks.size(); ++t) {
      if (ahead < ks[t]) ++hits[t];
    }
  }
  for (std::size_t t = 0; t < ks.size(); ++t) {
    result.recall_at[ks[t]] =
        scored == 0 ? 0.0
                    : static_cast<double>(hits[t]) / static_cast<double>(scored);
  }
  return result;
}

MapResult map_at_r(const Matrix& embeddings,
                   std::span<const std::size_t> labels) {
  check_inputs(embeddings, labels, "map_at_r");
  const std::size_t n = embeddings.rows();
  const Matrix unit = normalized_rows(embeddings);
  MapResult result;
  double total = 0.0;
  std::size_t scored = 0;
  Vec sims(n);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t q = 0; q < n; ++q) {
    const auto xq = unit.row(q);
    order.clear();
    std::size_t relevant = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      sims[j] = dot(xq, unit.row(j));
      order.push_back(j);
      if (labels[j] == labels[q]) ++relevant;
    }
    if (relevant == 0) {
      ++result.excluded_queries;
      continue;
    }
    const auto mid = order.begin() + static_cast<std::ptrdiff_t>(relevant);
    std::partial_sort(order.begin(), mid, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return ranks_before(sims[a], a, sims[b], b);
                      });
    double precision_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < relevant; ++i) {
      if (labels[order[i]] != labels[q]) continue;
      ++correct;
      precision_sum +=
          static_cast<double>(correct) / static_cast<double>(i + 1);
    }
    total += precision_sum / static_cast<double>(relevant);
    ++scored;
  }
  result.map_at_r = scored == 0 ? 0.0 : total / static_cast<double>(scored);
  return result;
}

DeviationResult proxy_deviation(const Matrix& embeddings,
                                std::span<const std::size_t> labels,
                                const ProxyBank& bank) {
  if (labels.size() != embeddings.rows()) {
    throw ShapeError("proxy_deviation: label count mismatch");
  }
  if (embeddings.rows() > 0 && embeddings.cols() != bank.dim()) {
    throw ShapeError("proxy_deviation: dimension mismatch");
  }
  const std::size_t n_c = bank.class_count();
  const std::size_t d = bank.dim();
  Matrix sums(n_c, d);
  std::vector<std::size_t> counts(n_c, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_c) continue;
    ++counts[labels[i]];
    auto s = sums.row(labels[i]);
    const auto x = embeddings.row(i);
    for (std::size_t k = 0; k < d; ++k) s[k] += x[k];
  }

  DeviationResult result;
  result.per_class.assign(n_c, std::nullopt);
  double total = 0.0;
  std::size_t evaluated = 0;
  const auto n_p = static_cast<double>(bank.proxies_per_class());
  Vec diff(d);
  for (std::size_t c = 0; c < n_c; ++c) {
    if (counts[c] == 0) {
      result.excluded_classes.push_back(c);
      continue;
    }
    std::fill(diff.begin(), diff.end(), 0.0);
    for (std::size_t j = 0; j < bank.proxies_per_class(); ++j) {
      const auto p = bank.proxy(c, j);
      for (std::size_t k = 0; k < d; ++k) diff[k] -= p[k];
    }
    const auto s = sums.row(c);
    for (std::size_t k = 0; k < d; ++k) {
      diff[k] = s[k] / static_cast<double>(counts[c]) + diff[k] / n_p;
    }
    const double dev = l2_norm(diff);
    result.per_class[c] = dev;
    total += dev;
    ++evaluated;
  }
  result.mean = evaluated == 0 ? 0.0 : total / static_cast<double>(evaluated);
  return result;
}

void export_embeddings(const Matrix& embeddings,
                       std::span<const std::size_t> labels,
                       const std::string& path) {
  if (labels.size() != embeddings.rows()) {
    throw ShapeError("export_embeddings: label count mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "label";
  for (std::size_t k = 0; k < embeddings.cols(); ++k) out << ",e" << k;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    out << labels[i];
    for (double v : embeddings.row(i)) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace calproxy
