// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests.
#pragma once

#include <random>

#include "taskfuse/channel.hpp"
#include "taskfuse/taskbench.hpp"
#include "taskfuse/tinyvit.hpp"

namespace tftest {

// Small enough for finite differences and fast training.
inline taskfuse::ModelConfig tiny_model(std::uint64_t seed = 3) {
  taskfuse::ModelConfig m;
  m.image_size = 8;
  m.patch_size = 4;
  m.embed_dim = 8;
  m.num_layers = 1;
  m.num_heads = 2;
  m.mlp_dim = 16;
  m.num_classes = 4;
  m.seed = seed;
  return m;
}

inline taskfuse::TaskSpec tiny_task(const std::string& id, taskfuse::GeneratorKind kind, std::uint64_t seed) {
  taskfuse::TaskSpec s;
  s.task_id = id;
  s.generator_kind = kind;
  s.samples_train = 128;
  s.samples_test = 64;
  s.samples_fewshot_per_class = 10;
  s.seed = seed;
  return s;
}

inline taskfuse::CMatrix random_complex(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, std::sqrt(0.5) * scale);
  taskfuse::CMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = {n01(rng), n01(rng)};
  }
  return m;
}

// Random Hermitian positive definite matrix with trace `tr`.
inline taskfuse::CMatrix random_hpd(int n, double tr, std::mt19937_64& rng) {
  taskfuse::CMatrix a = random_complex(n, n, rng);
  taskfuse::CMatrix c = a * a.adjoint() + 0.1 * taskfuse::CMatrix::Identity(n, n);
  return c * (tr / c.trace().real());
}

}  // namespace tftest
