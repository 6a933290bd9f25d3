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

// Proxy-based metric learning losses and their calibrate-proxy variants.
//
// Each family scores a sample against a class through a similarity S(x, c).
// The base variant uses the multi-proxy similarity s_ep alone; the
// calibrated variant uses s_cp = s_ep + s_em once the global center is
// active, and adds lambda_cal * L_mse, which pulls every normalized proxy
// toward the stored embeddings of its class.
//
//   proxy anchor:
//     1/|C+| sum_{c in C+} log(1 + sum_{x in X_c+} e^{-alpha (S(x,c) - delta)})
//   + 1/N    sum_{c in C}  log(1 + sum_{x in X_c-} e^{ alpha (S(x,c) + delta)})
//
//   N = |C| while the global center is in use, otherwise N = |P-|, the
//   number of classes with at least one negative in the batch.
//
//   proxy nca (positive class excluded from the denominator, so the value
//   may be negative):
//     mean_x -log( e^{S(x,y)} / sum_{c != y} e^{S(x,c)} )
//
//   soft triple:
//     mean_x -log( e^{l (S(x,y) - m)} /
//                  (e^{l (S(x,y) - m)} + sum_{c != y} e^{l S(x,c)}) )
//
//   L_mse = sum_c sum_j sum_i || normalize(p_cj) - b_ci ||^2

#ifndef CALPROXY_LOSSES_H_
#define CALPROXY_LOSSES_H_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "calproxy/global_center.h"
#include "calproxy/numerics.h"
#include "calproxy/similarity.h"

namespace calproxy {

enum class LossFamily { kProxyAnchor, kProxyNca, kSoftTriple };
enum class LossVariant { kBase, kCalibrated };

std::string_view to_string(LossFamily family);
std::string_view to_string(LossVariant variant);
LossFamily parse_loss_family(std::string_view name);
LossVariant parse_loss_variant(std::string_view name);

struct LossSpec {
  LossFamily family = LossFamily::kProxyAnchor;
  LossVariant variant = LossVariant::kCalibrated;
  double alpha = 32.0;  // proxy anchor scale
  double delta = 0.1;   // proxy anchor margin
  double lambda_cal = 1.0;
  double st_scale = 20.0;   // soft triple scale
  double st_margin = 0.01;  // soft triple margin
  std::size_t proxies_per_class = 1;
  // Divide L_mse by its number of terms instead of summing.
  bool mse_mean = false;

  bool calibrated() const { return variant == LossVariant::kCalibrated; }
  // Throws ConfigError on out-of-range hyperparameters.
  void validate() const;
};

struct BatchView {
  const Matrix& embeddings;
  std::span<const std::size_t> labels;
};

struct GradBundle {
  Matrix d_embeddings;
  Matrix d_proxies;  // same layout as ProxyBank::matrix()
};

struct LossResult {
  double value = 0.0;
  double class_term = 0.0;  // L_c
  double calibration_term = 0.0;  // L_mse, 0 when not applied
  GradBundle grads;
};

double proxy_anchor_value(const BatchView& batch, const ProxyBank& bank,
                          const GlobalCenter& gc, const LossSpec& spec,
                          bool active);
double proxy_nca_value(const BatchView& batch, const ProxyBank& bank,
                       const GlobalCenter& gc, const LossSpec& spec,
                       bool active);
double soft_triple_value(const BatchView& batch, const ProxyBank& bank,
                         const GlobalCenter& gc, const LossSpec& spec,
                         bool active);

double l_mse(const ProxyBank& bank, const GlobalCenter& gc,
             bool mean_reduction = false);

// L_c + lambda_cal * L_mse when the variant is calibrated and active,
// L_c otherwise.
double total_loss(const BatchView& batch, const ProxyBank& bank,
                  const GlobalCenter& gc, const LossSpec& spec, bool active);

LossResult loss_and_grad(const BatchView& batch, const ProxyBank& bank,
                         const GlobalCenter& gc, const LossSpec& spec,
                         bool active);

}  // namespace calproxy

#endif  // CALPROXY_LOSSES_H_
