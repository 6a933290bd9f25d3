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

#ifndef CALPROXY_DATALAB_H_
#define CALPROXY_DATALAB_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calproxy/numerics.h"

namespace calproxy {

struct Dataset {
  Matrix features;
  std::vector<std::size_t> true_labels;
  // Labels used for training. Differ from true_labels only at
  // flipped_indices.
  std::vector<std::size_t> train_labels;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::size_t n_classes = 0;
  // Proxy classes; training labels are all below this.
  std::size_t n_train_classes = 0;
  std::vector<std::size_t> flipped_indices;

  // Generator ground truth, empty for loaded data.
  Matrix blob_centers;
  std::vector<std::size_t> blob_ids;

  std::size_t size() const { return features.rows(); }
  std::size_t input_dim() const { return features.cols(); }
};

struct ClusterSpec {
  std::size_t n_classes = 20;
  std::size_t subclusters_per_class = 2;
  std::size_t input_dim = 32;
  std::size_t samples_per_class = 100;
  double intra_spread = 0.8;
  double subcluster_separation = 4.0;
  // Std-dev of each class-center coordinate.
  double class_spread = 1.0;
  // Per-class fraction of samples placed in the training split.
  double train_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Each class is an equal-weight mixture of isotropic Gaussian blobs. Blob
// centers sit subcluster_separation / 2 from a N(0, class_spread^2 I) class
// center; with two blobs they are antipodal, so exactly
// subcluster_separation apart. Sample k of a class belongs to blob
// k % subclusters_per_class. The split is within-class.
Dataset gen_clusters(const ClusterSpec& spec);

struct NoiseResult {
  std::vector<std::size_t> labels;
  std::vector<std::size_t> flipped_indices;  // ascending
};

// Reassigns exactly round(ratio * n) labels, picked by a seeded
// permutation, to a uniformly random different class.
NoiseResult inject_noise(std::span<const std::size_t> labels, double ratio,
                         std::size_t n_classes, std::uint64_t seed);

// Applies inject_noise to the training split of `dataset` in place.
void apply_label_noise(Dataset& dataset, double ratio, std::uint64_t seed);

// One batch of distinct training indices drawn uniformly.
std::vector<std::size_t> sample_batch(const Dataset& dataset,
                                      std::size_t batch_size, Rng& rng);

// One epoch: a shuffled partition of the training split into consecutive
// batches of batch_size; the last batch holds the remainder.
std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset,
                                                    std::size_t batch_size,
                                                    Rng& rng);

// Parses a `label,f0,...,f{D-1}` CSV (an `e` column prefix is accepted as
// well, so exported embeddings load back). Labels are remapped to dense ids
// in ascending order; the lower half of the classes forms the training
// split, the rest the test split.
Dataset load_features(const std::string& path);

// Same as load_features but returns the raw rows without splitting.
struct LabeledRows {
  Matrix values;
  std::vector<std::size_t> labels;
};
LabeledRows read_labeled_csv(const std::string& path);

}  // namespace calproxy

#endif  // CALPROXY_DATALAB_H_
