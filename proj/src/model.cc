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

#include "calproxy/model.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <utility>

#include "calproxy/errors.h"

namespace calproxy {
namespace {

// Versions are unique across all embedders so a cache from one model is
// never accepted by another.
std::uint64_t next_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace

Embedder::Embedder(EmbedderDims dims)
    : Embedder(dims, Vec(dims.param_count(), 0.0)) {}

Embedder::Embedder(EmbedderDims dims, Vec params)
    : dims_(dims), params_(std::move(params)), version_(next_version()) {
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.embed_dim == 0) {
    throw ConfigError("Embedder: all dimensions must be positive");
  }
  if (params_.size() != dims.param_count()) {
    throw ShapeError("Embedder: expected " +
                     std::to_string(dims.param_count()) + " parameters, got " +
                     std::to_string(params_.size()));
  }
}

Embedder Embedder::random(EmbedderDims dims, Rng& rng) {
  Embedder e(dims);
  auto p = e.mutable_params();
  const double r1 =
      std::sqrt(6.0 / static_cast<double>(dims.input_dim + dims.hidden_dim));
  const double r2 =
      std::sqrt(6.0 / static_cast<double>(dims.hidden_dim + dims.embed_dim));
  for (std::size_t k = 0; k < dims.hidden_dim * dims.input_dim; ++k) {
    p[e.w1_offset() + k] = r1 * (2.0 * rng.uniform() - 1.0);
  }
  for (std::size_t k = 0; k < dims.embed_dim * dims.hidden_dim; ++k) {
    p[e.w2_offset() + k] = r2 * (2.0 * rng.uniform() - 1.0);
  }
  e.version_ = next_version();
  return e;
}

ForwardResult Embedder::forward(const Matrix& features) const {
  if (features.cols() != dims_.input_dim) {
    throw ShapeError("Embedder::forward: feature width " +
                     std::to_string(features.cols()) + ", expected " +
                     std::to_string(dims_.input_dim));
  }
  const std::size_t n = features.rows();
  const std::size_t in = dims_.input_dim;
  const std::size_t hid = dims_.hidden_dim;
  const std::size_t out = dims_.embed_dim;
  const double* w1 = params_.data() + w1_offset();
  const double* b1 = params_.data() + b1_offset();
  const double* w2 = params_.data() + w2_offset();
  const double* b2 = params_.data() + b2_offset();

  ForwardResult r{Matrix(n, out), {features, Matrix(n, hid), version_}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = features.row(i);
    auto h = r.cache.hidden.row(i);
    for (std::size_t u = 0; u < hid; ++u) {
      double a = b1[u];
      for (std::size_t k = 0; k < in; ++k) a += w1[u * in + k] * x[k];
      h[u] = std::tanh(a);
    }
    auto e = r.embeddings.row(i);
    for (std::size_t v = 0; v < out; ++v) {
      double a = b2[v];
      for (std::size_t u = 0; u < hid; ++u) a += w2[v * hid + u] * h[u];
      e[v] = a;
    }
  }
  return r;
}

Vec Embedder::backward(const ForwardCache& cache,
                       const Matrix& d_embeddings) const {
  if (cache.version != version_) {
    throw ContractError(
        "Embedder::backward: cache is stale (parameters changed since "
        "forward)");
  }
  const std::size_t n = cache.inputs.rows();
  const std::size_t in = dims_.input_dim;
  const std::size_t hid = dims_.hidden_dim;
  const std::size_t out = dims_.embed_dim;
  if (d_embeddings.rows() != n || d_embeddings.cols() != out) {
    throw ShapeError("Embedder::backward: gradient shape mismatch");
  }
  const double* w2 = params_.data() + w2_offset();
  Vec grad(params_.size(), 0.0);
  double* g_w1 = grad.data() + w1_offset();
  double* g_b1 = grad.data() + b1_offset();
  double* g_w2 = grad.data() + w2_offset();
  double* g_b2 = grad.data() + b2_offset();

  Vec d_hidden(hid);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = cache.inputs.row(i);
    const auto h = cache.hidden.row(i);
    const auto de = d_embeddings.row(i);
    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
    for (std::size_t v = 0; v < out; ++v) {
      g_b2[v] += de[v];
      for (std::size_t u = 0; u < hid; ++u) {
        g_w2[v * hid + u] += de[v] * h[u];
        d_hidden[u] += de[v] * w2[v * hid + u];
      }
    }
    for (std::size_t u = 0; u < hid; ++u) {
      const double da = d_hidden[u] * (1.0 - h[u] * h[u]);
      g_b1[u] += da;
      for (std::size_t k = 0; k < in; ++k) g_w1[u * in + k] += da * x[k];
    }
  }
  return grad;
}

AdamState::AdamState(AdamConfig cfg, std::size_t embedder_params,
                     std::size_t proxy_params)
    : config(cfg),
      m_embedder(embedder_params, 0.0),
      v_embedder(embedder_params, 0.0),
      m_proxies(proxy_params, 0.0),
      v_proxies(proxy_params, 0.0) {}

namespace {

void update_group(const AdamConfig& cfg, double lr, std::uint64_t step,
                  std::span<double> params, std::span<const double> grads,
                  Vec& m, Vec& v) {
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grads[k];
    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grads[k] * grads[k];
    params[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.epsilon);
  }
}

}  // namespace

void adam_step(AdamState& state, std::span<double> embedder_params,
               std::span<const double> embedder_grads,
               std::span<double> proxy_params,
               std::span<const double> proxy_grads) {
  if (embedder_params.size() != embedder_grads.size() ||
      embedder_params.size() != state.m_embedder.size() ||
      proxy_params.size() != proxy_grads.size() ||
      proxy_params.size() != state.m_proxies.size()) {
    throw ShapeError("adam_step: parameter/gradient/state shape mismatch");
  }
  ++state.step;
  const AdamConfig& cfg = state.config;
  update_group(cfg, cfg.lr, state.step, embedder_params, embedder_grads,
               state.m_embedder, state.v_embedder);
  update_group(cfg, cfg.lr * cfg.proxy_lr_multiplier, state.step,
               proxy_params, proxy_grads, state.m_proxies, state.v_proxies);
}

}  // namespace calproxy
