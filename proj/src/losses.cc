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

#include "calproxy/losses.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "calproxy/errors.h"

namespace calproxy {

std::string_view to_string(LossFamily family) {
  switch (family) {
    case LossFamily::kProxyAnchor:
      return "proxy_anchor";
    case LossFamily::kProxyNca:
      return "proxy_nca";
    case LossFamily::kSoftTriple:
      return "soft_triple";
  }
  return "unknown";
}

std::string_view to_string(LossVariant variant) {
  return variant == LossVariant::kBase ? "base" : "cp";
}

LossFamily parse_loss_family(std::string_view name) {
  if (name == "proxy_anchor") return LossFamily::kProxyAnchor;
  if (name == "proxy_nca") return LossFamily::kProxyNca;
  if (name == "soft_triple") return LossFamily::kSoftTriple;
  throw ConfigError("unknown loss family '" + std::string(name) +
                    "' (expected proxy_anchor, proxy_nca or soft_triple)");
}

LossVariant parse_loss_variant(std::string_view name) {
  if (name == "base") return LossVariant::kBase;
  if (name == "cp") return LossVariant::kCalibrated;
  throw ConfigError("unknown loss variant '" + std::string(name) +
                    "' (expected base or cp)");
}

void LossSpec::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("loss: alpha must be positive");
  if (!(st_scale > 0.0)) throw ConfigError("loss: st_scale must be positive");
  if (!(lambda_cal >= 0.0)) {
    throw ConfigError("loss: lambda_cal must be non-negative");
  }
  if (!std::isfinite(delta) || !std::isfinite(st_margin) ||
      !std::isfinite(lambda_cal)) {
    throw ConfigError("loss: hyperparameters must be finite");
  }
  if (proxies_per_class < 1) {
    throw ConfigError("loss: at least one proxy per class is required");
  }
}

namespace {

// Value of a loss head together with dL/dS for every (sample, class).
struct HeadOutput {
  double value = 0.0;
  Matrix d_s;
};

void check_batch(const BatchView& batch, std::size_t n_c) {
  if (batch.embeddings.rows() == 0) throw DomainError("loss: empty batch");
  if (batch.labels.size() != batch.embeddings.rows()) {
    throw ShapeError("loss: " + std::to_string(batch.labels.size()) +
                     " labels for " + std::to_string(batch.embeddings.rows()) +
                     " embeddings");
  }
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    if (batch.labels[i] >= n_c) {
      throw IndexError("loss: label " + std::to_string(batch.labels[i]) +
                       " at batch row " + std::to_string(i) +
                       " out of range for " + std::to_string(n_c) +
                       " classes");
    }
  }
}

// With `all_classes` the negative term is averaged over every class;
// otherwise over the classes that have at least one negative in the batch.
HeadOutput proxy_anchor_head(const Matrix& s, std::span<const std::size_t> y,
                             const LossSpec& spec, bool all_classes) {
  const std::size_t n_b = s.rows();
  const std::size_t n_c = s.cols();
  HeadOutput out{0.0, Matrix(n_b, n_c)};

  std::vector<std::vector<std::size_t>> members(n_c);
  for (std::size_t i = 0; i < n_b; ++i) members[y[i]].push_back(i);
  std::size_t present = 0;
  std::size_t with_negatives = 0;
  for (const auto& m : members) {
    present += m.empty() ? 0 : 1;
    with_negatives += m.size() < n_b ? 1 : 0;
  }

  const double pos_scale = 1.0 / static_cast<double>(present);
  const double neg_scale =
      all_classes ? 1.0 / static_cast<double>(n_c)
                  : with_negatives == 0
                        ? 0.0
                        : 1.0 / static_cast<double>(with_negatives);
  double pos = 0.0;
  double neg = 0.0;
  std::vector<double> z;
  std::vector<std::size_t> rows;
  for (std::size_t c = 0; c < n_c; ++c) {
    if (!members[c].empty()) {
      z.clear();
      for (std::size_t i : members[c]) {
        z.push_back(-spec.alpha * (s(i, c) - spec.delta));
      }
      const double term = log1p_sum_exp(z);
      pos += term;
      for (std::size_t k = 0; k < z.size(); ++k) {
        out.d_s(members[c][k], c) +=
            -spec.alpha * pos_scale * std::exp(z[k] - term);
      }
    }
    z.clear();
    rows.clear();
    for (std::size_t i = 0; i < n_b; ++i) {
      if (y[i] == c) continue;
      z.push_back(spec.alpha * (s(i, c) + spec.delta));
      rows.push_back(i);
    }
    if (z.empty()) continue;
    const double term = log1p_sum_exp(z);
    neg += term;
    for (std::size_t k = 0; k < z.size(); ++k) {
      out.d_s(rows[k], c) += spec.alpha * neg_scale * std::exp(z[k] - term);
    }
  }
  out.value = pos * pos_scale + neg * neg_scale;
  return out;
}

HeadOutput proxy_nca_head(const Matrix& s, std::span<const std::size_t> y) {
  const std::size_t n_b = s.rows();
  const std::size_t n_c = s.cols();
  if (n_c < 2) throw DomainError("proxy_nca: at least two classes required");
  HeadOutput out{0.0, Matrix(n_b, n_c)};
  const double inv_b = 1.0 / static_cast<double>(n_b);
  std::vector<double> z;
  for (std::size_t i = 0; i < n_b; ++i) {
    z.clear();
    for (std::size_t c = 0; c < n_c; ++c) {
      if (c != y[i]) z.push_back(s(i, c));
    }
    const double lse = log_sum_exp(z);
    out.value += (lse - s(i, y[i])) * inv_b;
    out.d_s(i, y[i]) -= inv_b;
    for (std::size_t c = 0; c < n_c; ++c) {
      if (c != y[i]) out.d_s(i, c) += std::exp(s(i, c) - lse) * inv_b;
    }
  }
  return out;
}

HeadOutput soft_triple_head(const Matrix& s, std::span<const std::size_t> y,
                            const LossSpec& spec) {
  const std::size_t n_b = s.rows();
  const std::size_t n_c = s.cols();
  if (n_c < 2) throw DomainError("soft_triple: at least two classes required");
  HeadOutput out{0.0, Matrix(n_b, n_c)};
  const double inv_b = 1.0 / static_cast<double>(n_b);
  std::vector<double> logits(n_c);
  for (std::size_t i = 0; i < n_b; ++i) {
    for (std::size_t c = 0; c < n_c; ++c) {
      logits[c] = c == y[i] ? spec.st_scale * (s(i, c) - spec.st_margin)
                            : spec.st_scale * s(i, c);
    }
    const double lse = log_sum_exp(logits);
    out.value += (lse - logits[y[i]]) * inv_b;
    for (std::size_t c = 0; c < n_c; ++c) {
      double g = std::exp(logits[c] - lse);
      if (c == y[i]) g -= 1.0;
      out.d_s(i, c) = spec.st_scale * g * inv_b;
    }
  }
  return out;
}

HeadOutput class_head(const SimilarityTable& table,
                      std::span<const std::size_t> labels,
                      const LossSpec& spec, bool center) {
  switch (spec.family) {
    case LossFamily::kProxyAnchor:
      return proxy_anchor_head(table.s_cp, labels, spec, center);
    case LossFamily::kProxyNca:
      return proxy_nca_head(table.s_cp, labels);
    case LossFamily::kSoftTriple:
      return soft_triple_head(table.s_cp, labels, spec);
  }
  throw ConfigError("unknown loss family");
}

bool uses_center(const LossSpec& spec, bool active) {
  return spec.calibrated() && active;
}

double class_term_value(const BatchView& batch, const ProxyBank& bank,
                        const GlobalCenter& gc, const LossSpec& spec,
                        bool active) {
  check_batch(batch, bank.class_count());
  const bool center = uses_center(spec, active);
  const SimilarityTable table =
      compute_similarities(batch.embeddings, bank, &gc, center);
  return class_head(table, batch.labels, spec, center).value;
}

// Value of L_mse and, when `grad` is non-null, its gradient with respect to
// the raw proxies accumulated into *grad.
double mse_term(const ProxyBank& bank, const GlobalCenter& gc,
                bool mean_reduction, Matrix* grad) {
  const std::size_t n_p = bank.proxies_per_class();
  const std::size_t d = bank.dim();
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t c = 0; c < bank.class_count(); ++c) {
    terms += gc.entries(c).size() * n_p;
  }
  if (terms == 0) return 0.0;
  const double scale = mean_reduction ? 1.0 / static_cast<double>(terms) : 1.0;

  Vec g(d);
  for (std::size_t c = 0; c < bank.class_count(); ++c) {
    const auto& queue = gc.entries(c);
    if (queue.empty()) continue;
    for (std::size_t j = 0; j < n_p; ++j) {
      const auto p = bank.proxy(c, j);
      const double p_norm = l2_norm(p);
      if (p_norm == 0.0) throw DomainError("l_mse: zero-norm proxy");
      const Vec unit = l2_normalize(p);
      std::fill(g.begin(), g.end(), 0.0);
      for (const Vec& b : queue) {
        for (std::size_t k = 0; k < d; ++k) {
          const double r = unit[k] - b[k];
          total += r * r;
          g[k] += 2.0 * r;
        }
      }
      if (grad == nullptr) continue;
      // Chain through normalize: (I - u u^T) g / |p|.
      const double along = dot(unit, g);
      auto out = grad->row(c * n_p + j);
      for (std::size_t k = 0; k < d; ++k) {
        out[k] += scale * (g[k] - along * unit[k]) / p_norm;
      }
    }
  }
  return total * scale;
}

}  // namespace

double proxy_anchor_value(const BatchView& batch, const ProxyBank& bank,
                          const GlobalCenter& gc, const LossSpec& spec,
                          bool active) {
  LossSpec s = spec;
  s.family = LossFamily::kProxyAnchor;
  return class_term_value(batch, bank, gc, s, active);
}

double proxy_nca_value(const BatchView& batch, const ProxyBank& bank,
                       const GlobalCenter& gc, const LossSpec& spec,
                       bool active) {
  LossSpec s = spec;
  s.family = LossFamily::kProxyNca;
  return class_term_value(batch, bank, gc, s, active);
}

double soft_triple_value(const BatchView& batch, const ProxyBank& bank,
                         const GlobalCenter& gc, const LossSpec& spec,
                         bool active) {
  LossSpec s = spec;
  s.family = LossFamily::kSoftTriple;
  return class_term_value(batch, bank, gc, s, active);
}

double l_mse(const ProxyBank& bank, const GlobalCenter& gc,
             bool mean_reduction) {
  return mse_term(bank, gc, mean_reduction, nullptr);
}

double total_loss(const BatchView& batch, const ProxyBank& bank,
                  const GlobalCenter& gc, const LossSpec& spec, bool active) {
  const double lc = class_term_value(batch, bank, gc, spec, active);
  if (!uses_center(spec, active)) return lc;
  return lc + spec.lambda_cal * l_mse(bank, gc, spec.mse_mean);
}

LossResult loss_and_grad(const BatchView& batch, const ProxyBank& bank,
                         const GlobalCenter& gc, const LossSpec& spec,
                         bool active) {
  check_batch(batch, bank.class_count());
  const bool center = uses_center(spec, active);
  const SimilarityTable table =
      compute_similarities(batch.embeddings, bank, &gc, center);
  const HeadOutput head = class_head(table, batch.labels, spec, center);

  LossResult result;
  result.grads.d_embeddings =
      Matrix(batch.embeddings.rows(), batch.embeddings.cols());
  result.grads.d_proxies = Matrix(bank.matrix().rows(), bank.dim());
  backprop_similarities(table, head.d_s, result.grads.d_embeddings,
                        result.grads.d_proxies);
  result.class_term = head.value;
  result.value = head.value;
  if (center) {
    Matrix mse_grad(bank.matrix().rows(), bank.dim());
    result.calibration_term = mse_term(bank, gc, spec.mse_mean, &mse_grad);
    result.value = head.value + spec.lambda_cal * result.calibration_term;
    auto dst = result.grads.d_proxies.flat();
    auto src = mse_grad.flat();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] += spec.lambda_cal * src[k];
    }
  }
  return result;
}

}  // namespace calproxy
