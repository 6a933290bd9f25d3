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

#include "calproxy/global_center.h"

#include <cmath>
#include <string>
#include <utility>

#include "calproxy/errors.h"

namespace calproxy {

GlobalCenter::GlobalCenter(std::size_t class_count,
                           std::size_t capacity_per_class, int start_epoch,
                           std::size_t dim)
    : queues_(class_count),
      capacity_(capacity_per_class),
      start_epoch_(start_epoch),
      dim_(dim) {
  if (capacity_per_class == 0) {
    throw ConfigError("GlobalCenter: capacity must be at least 1");
  }
  if (start_epoch < 0) {
    throw ConfigError("GlobalCenter: start epoch must be non-negative");
  }
}

void GlobalCenter::check_class(std::size_t class_id) const {
  if (class_id >= queues_.size()) {
    throw IndexError("GlobalCenter: class id " + std::to_string(class_id) +
                     " out of range [0, " + std::to_string(queues_.size()) +
                     ")");
  }
}

void GlobalCenter::push(std::size_t class_id,
                        std::span<const double> embedding) {
  check_class(class_id);
  if (embedding.size() != dim_) {
    throw ShapeError("GlobalCenter: embedding has dimension " +
                     std::to_string(embedding.size()) + ", expected " +
                     std::to_string(dim_));
  }
  Vec stored = l2_normalize(embedding);
  auto& queue = queues_[class_id];
  if (queue.size() == capacity_) queue.pop_front();
  queue.push_back(std::move(stored));
}

void GlobalCenter::restore(std::size_t class_id, Vec unit_embedding) {
  check_class(class_id);
  if (unit_embedding.size() != dim_) {
    throw ShapeError("GlobalCenter: restored entry has wrong dimension");
  }
  if (std::abs(l2_norm(unit_embedding) - 1.0) > 1e-9) {
    throw DomainError("GlobalCenter: restored entry is not unit norm");
  }
  auto& queue = queues_[class_id];
  if (queue.size() == capacity_) queue.pop_front();
  queue.push_back(std::move(unit_embedding));
}

const std::deque<Vec>& GlobalCenter::entries(std::size_t class_id) const {
  check_class(class_id);
  return queues_[class_id];
}

Vec GlobalCenter::entry_sum(std::size_t class_id) const {
  check_class(class_id);
  Vec sum(dim_, 0.0);
  for (const Vec& e : queues_[class_id]) {
    for (std::size_t k = 0; k < dim_; ++k) sum[k] += e[k];
  }
  return sum;
}

}  // namespace calproxy
