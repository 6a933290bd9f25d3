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

#include "calproxy/datalab.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string_view>

#include "calproxy/errors.h"

namespace calproxy {

void ClusterSpec::validate() const {
  if (n_classes < 1 || subclusters_per_class < 1 || input_dim < 1 ||
      samples_per_class < 1) {
    throw ConfigError("cluster spec: all counts must be at least 1");
  }
  if (!(intra_spread > 0.0) || !(class_spread > 0.0) ||
      !(subcluster_separation >= 0.0)) {
    throw ConfigError("cluster spec: spreads must be positive");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("cluster spec: train_fraction must be in (0, 1]");
  }
}

Dataset gen_clusters(const ClusterSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n_c = spec.n_classes;
  const std::size_t n_s = spec.subclusters_per_class;
  const std::size_t d = spec.input_dim;
  const std::size_t m = spec.samples_per_class;

  Dataset ds;
  ds.n_classes = n_c;
  ds.n_train_classes = n_c;
  ds.features = Matrix(n_c * m, d);
  ds.blob_centers = Matrix(n_c * n_s, d);
  ds.true_labels.resize(n_c * m);
  ds.blob_ids.resize(n_c * m);

  const double radius = spec.subcluster_separation / 2.0;
  for (std::size_t c = 0; c < n_c; ++c) {
    Vec center(d);
    for (double& v : center) v = spec.class_spread * rng.normal();
    Vec first_dir = random_unit_vector(d, rng);
    for (std::size_t s = 0; s < n_s; ++s) {
      Vec dir;
      if (s == 0) {
        dir = first_dir;
      } else if (n_s == 2) {
        dir = first_dir;
        for (double& v : dir) v = -v;
      } else {
        dir = random_unit_vector(d, rng);
      }
      auto blob = ds.blob_centers.row(c * n_s + s);
      for (std::size_t k = 0; k < d; ++k) {
        blob[k] = n_s == 1 ? center[k] : center[k] + radius * dir[k];
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t row = c * m + i;
      const std::size_t blob_id = c * n_s + i % n_s;
      const auto blob = ds.blob_centers.row(blob_id);
      auto x = ds.features.row(row);
      for (std::size_t k = 0; k < d; ++k) {
        x[k] = blob[k] + spec.intra_spread * rng.normal();
      }
      ds.true_labels[row] = c;
      ds.blob_ids[row] = blob_id;
    }
  }

  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(m)));
  for (std::size_t c = 0; c < n_c; ++c) {
    std::vector<std::size_t> rows(m);
    std::iota(rows.begin(), rows.end(), c * m);
    rng.shuffle(rows);
    for (std::size_t i = 0; i < m; ++i) {
      (i < n_train ? ds.train_indices : ds.test_indices).push_back(rows[i]);
    }
  }
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.test_indices.begin(), ds.test_indices.end());
  ds.train_labels = ds.true_labels;
  return ds;
}

NoiseResult inject_noise(std::span<const std::size_t> labels, double ratio,
                         std::size_t n_classes, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw DomainError("inject_noise: ratio must be in [0, 1]");
  }
  NoiseResult out{{labels.begin(), labels.end()}, {}};
  const auto count = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(labels.size())));
  if (count == 0) return out;
  if (n_classes < 2) {
    throw DomainError("inject_noise: at least two classes required");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) {
      throw IndexError("inject_noise: label out of range at index " +
                       std::to_string(i));
    }
  }
  Rng rng(seed);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  order.resize(count);
  std::sort(order.begin(), order.end());
  for (std::size_t idx : order) {
    const auto draw = static_cast<std::size_t>(rng.uniform_index(n_classes - 1));
    out.labels[idx] = draw >= labels[idx] ? draw + 1 : draw;
  }
  out.flipped_indices = std::move(order);
  return out;
}

void apply_label_noise(Dataset& dataset, double ratio, std::uint64_t seed) {
  std::vector<std::size_t> train_labels;
  train_labels.reserve(dataset.train_indices.size());
  for (std::size_t idx : dataset.train_indices) {
    train_labels.push_back(dataset.true_labels[idx]);
  }
  const NoiseResult noisy =
      inject_noise(train_labels, ratio, dataset.n_train_classes, seed);
  dataset.train_labels = dataset.true_labels;
  dataset.flipped_indices.clear();
  for (std::size_t k = 0; k < dataset.train_indices.size(); ++k) {
    dataset.train_labels[dataset.train_indices[k]] = noisy.labels[k];
  }
  for (std::size_t k : noisy.flipped_indices) {
    dataset.flipped_indices.push_back(dataset.train_indices[k]);
  }
}

std::vector<std::size_t> sample_batch(const Dataset& dataset,
                                      std::size_t batch_size, Rng& rng) {
  const std::size_t n = dataset.train_indices.size();
  if (batch_size == 0 || batch_size > n) {
    throw ConfigError("sample_batch: batch size " + std::to_string(batch_size) +
                      " not in [1, " + std::to_string(n) + "]");
  }
  // Partial Fisher-Yates: the first batch_size slots are a uniform draw
  // without replacement.
  std::vector<std::size_t> pool = dataset.train_indices;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(batch_size);
  return pool;
}

std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset,
                                                    std::size_t batch_size,
                                                    Rng& rng) {
  const std::size_t n = dataset.train_indices.size();
  if (batch_size == 0 || batch_size > n) {
    throw ConfigError("epoch_batches: batch size " +
                      std::to_string(batch_size) + " not in [1, " +
                      std::to_string(n) + "]");
  }
  std::vector<std::size_t> order = dataset.train_indices;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string at_line(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line) + ": ";
}

}  // namespace

LabeledRows read_labeled_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path + ": no rows");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "label") {
    throw ParseError(at_line(path, line_no) +
                     "unknown header (expected label,f0,...)");
  }
  const char prefix = header[1].empty() ? '\0' : header[1][0];
  if (prefix != 'f' && prefix != 'e') {
    throw ParseError(at_line(path, line_no) +
                     "unknown header column '" + std::string(header[1]) + "'");
  }
  for (std::size_t k = 1; k < header.size(); ++k) {
    const std::string expected = prefix + std::to_string(k - 1);
    if (header[k] != expected) {
      throw ParseError(at_line(path, line_no) + "unknown header column '" +
                       std::string(header[k]) + "', expected '" + expected +
                       "'");
    }
  }
  const std::size_t dim = header.size() - 1;

  std::vector<double> values;
  std::vector<std::size_t> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != dim + 1) {
      throw ParseError(at_line(path, line_no) + "expected " +
                       std::to_string(dim + 1) + " cells, got " +
                       std::to_string(cells.size()));
    }
    std::size_t label = 0;
    const auto lres = std::from_chars(
        cells[0].data(), cells[0].data() + cells[0].size(), label);
    if (lres.ec != std::errc() ||
        lres.ptr != cells[0].data() + cells[0].size()) {
      throw ParseError(at_line(path, line_no) + "label '" +
                       std::string(cells[0]) +
                       "' is not a non-negative integer");
    }
    labels.push_back(label);
    for (std::size_t k = 1; k <= dim; ++k) {
      double v = 0.0;
      const auto res = std::from_chars(
          cells[k].data(), cells[k].data() + cells[k].size(), v);
      if (res.ec != std::errc() ||
          res.ptr != cells[k].data() + cells[k].size() || !std::isfinite(v)) {
        throw ParseError(at_line(path, line_no) + "cell " + std::to_string(k) +
                         " '" + std::string(cells[k]) +
                         "' is not a finite number");
      }
      values.push_back(v);
    }
  }
  LabeledRows rows;
  rows.values = Matrix(labels.size(), dim);
  std::copy(values.begin(), values.end(), rows.values.flat().begin());
  rows.labels = std::move(labels);
  return rows;
}

Dataset load_features(const std::string& path) {
  LabeledRows rows = read_labeled_csv(path);
  if (rows.labels.empty()) throw ParseError(path + ": no rows");

  std::map<std::size_t, std::size_t> dense;
  for (std::size_t label : rows.labels) dense.emplace(label, 0);
  std::size_t next = 0;
  for (auto& [label, id] : dense) id = next++;

  Dataset ds;
  ds.features = std::move(rows.values);
  ds.n_classes = dense.size();
  ds.n_train_classes = std::max<std::size_t>(1, ds.n_classes / 2);
  ds.true_labels.reserve(rows.labels.size());
  for (std::size_t i = 0; i < rows.labels.size(); ++i) {
    const std::size_t id = dense.at(rows.labels[i]);
    ds.true_labels.push_back(id);
    (id < ds.n_train_classes ? ds.train_indices : ds.test_indices).push_back(i);
  }
  ds.train_labels = ds.true_labels;
  return ds;
}

}  // namespace calproxy
