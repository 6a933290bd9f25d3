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

#ifndef CALPROXY_GLOBAL_CENTER_H_
#define CALPROXY_GLOBAL_CENTER_H_

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "calproxy/numerics.h"

namespace calproxy {

// Per-class FIFO memory of detached, L2-normalized sample embeddings.
//
// Queues fill from the first training epoch but are only consulted once the
// training epoch exceeds `start_epoch` (see is_active). Entries are plain
// values: nothing downstream differentiates through them.
class GlobalCenter {
 public:
  GlobalCenter(std::size_t class_count, std::size_t capacity_per_class,
               int start_epoch, std::size_t dim);

  // Normalizes `embedding` and appends it to queue `class_id`, evicting the
  // oldest entry first when the queue is full.
  void push(std::size_t class_id, std::span<const double> embedding);

  // Appends an already-normalized entry as is; used when restoring a
  // checkpoint so queues come back bit-exact.
  void restore(std::size_t class_id, Vec unit_embedding);

  // Oldest-first contents of one queue.
  const std::deque<Vec>& entries(std::size_t class_id) const;

  // True iff epoch > start_epoch.
  bool is_active(int epoch) const { return epoch > start_epoch_; }

  // Sum of the stored unit vectors of one class; zero vector when empty.
  Vec entry_sum(std::size_t class_id) const;

  std::size_t class_count() const { return queues_.size(); }
  std::size_t capacity() const { return capacity_; }
  int start_epoch() const { return start_epoch_; }
  std::size_t dim() const { return dim_; }

  friend bool operator==(const GlobalCenter&, const GlobalCenter&) = default;

 private:
  void check_class(std::size_t class_id) const;

  std::vector<std::deque<Vec>> queues_;
  std::size_t capacity_;
  int start_epoch_;
  std::size_t dim_;
};

}  // namespace calproxy

#endif  // CALPROXY_GLOBAL_CENTER_H_
