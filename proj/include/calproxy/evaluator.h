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

// Retrieval metrics and embedding diagnostics.
//
// Ranking is by cosine similarity with the query itself excluded; ties are
// broken by ascending sample index. Queries without any same-class partner
// are excluded from every metric and counted.

#ifndef CALPROXY_EVALUATOR_H_
#define CALPROXY_EVALUATOR_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calproxy/numerics.h"
#include "calproxy/similarity.h"

namespace calproxy {

struct RecallResult {
  std::map<std::size_t, double> recall_at;
  std::size_t excluded_queries = 0;
};

RecallResult recall_at_k(const Matrix& embeddings,
                         std::span<const std::size_t> labels,
                         std::span<const std::size_t> ks);

struct MapResult {
  double map_at_r = 0.0;
  std::size_t excluded_queries = 0;
};

MapResult map_at_r(const Matrix& embeddings,
                   std::span<const std::size_t> labels);

struct DeviationResult {
  // Indexed by class; nullopt for classes without samples.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
  std::vector<std::size_t> excluded_classes;
};

// Per class c: || mean of class-c samples - mean of class-c proxies ||.
// Samples whose label has no proxies (label >= class_count) are ignored, so
// a file with unseen classes can still be scored.
DeviationResult proxy_deviation(const Matrix& embeddings,
                                std::span<const std::size_t> labels,
                                const ProxyBank& bank);

// Writes `label,e0,...,e{d-1}` with 17 significant digits.
void export_embeddings(const Matrix& embeddings,
                       std::span<const std::size_t> labels,
                       const std::string& path);

struct EvalReport {
  std::map<std::size_t, double> recall_at;
  double map_at_r = 0.0;
  double mean_deviation = 0.0;
  std::vector<std::optional<double>> per_class_deviation;
  std::size_t excluded_queries = 0;
  std::vector<std::size_t> excluded_classes;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string loss_kind;
};

}  // namespace calproxy

#endif  // CALPROXY_EVALUATOR_H_
