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

#ifndef CALPROXY_MODEL_H_
#define CALPROXY_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <span>

#include "calproxy/numerics.h"

namespace calproxy {

struct EmbedderDims {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t embed_dim = 0;

  std::size_t param_count() const {
    return hidden_dim * input_dim + hidden_dim + embed_dim * hidden_dim +
           embed_dim;
  }
  friend bool operator==(const EmbedderDims&, const EmbedderDims&) = default;
};

// Intermediates of one forward pass, tied to the parameter version that
// produced them.
struct ForwardCache {
  Matrix inputs;
  Matrix hidden;  // post-activation
  std::uint64_t version = 0;
};

struct ForwardResult {
  Matrix embeddings;
  ForwardCache cache;
};

// Two-layer perceptron: embed = W2 tanh(W1 x + b1) + b2.
//
// All parameters live in one flat vector laid out as W1 (hidden x input,
// row-major), b1, W2 (embed x hidden, row-major), b2, which is also the
// layout of gradients returned by backward().
class Embedder {
 public:
  explicit Embedder(EmbedderDims dims);
  Embedder(EmbedderDims dims, Vec params);

  // Glorot-uniform weights, zero biases.
  static Embedder random(EmbedderDims dims, Rng& rng);

  const EmbedderDims& dims() const { return dims_; }
  std::span<const double> params() const { return params_; }
  // Any mutable access invalidates outstanding forward caches.
  std::span<double> mutable_params() {
    ++version_;
    return params_;
  }

  ForwardResult forward(const Matrix& features) const;

  // Gradient of the loss with respect to params(), given dL/d(embeddings).
  // Throws ContractError if the cache predates a parameter change.
  Vec backward(const ForwardCache& cache, const Matrix& d_embeddings) const;

 private:
  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return dims_.hidden_dim * dims_.input_dim; }
  std::size_t w2_offset() const { return b1_offset() + dims_.hidden_dim; }
  std::size_t b2_offset() const {
    return w2_offset() + dims_.embed_dim * dims_.hidden_dim;
  }

  EmbedderDims dims_;
  Vec params_;
  std::uint64_t version_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double proxy_lr_multiplier = 100.0;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  Vec m_embedder, v_embedder;
  Vec m_proxies, v_proxies;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::size_t embedder_params,
            std::size_t proxy_params);
};

// One Adam update over both parameter groups; proxies use
// lr * proxy_lr_multiplier.
void adam_step(AdamState& state, std::span<double> embedder_params,
               std::span<const double> embedder_grads,
               std::span<double> proxy_params,
               std::span<const double> proxy_grads);

}  // namespace calproxy

#endif  // CALPROXY_MODEL_H_
