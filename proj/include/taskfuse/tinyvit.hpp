// SPDX-License-Identifier: Apache-2.0
//
// A small pre-norm vision transformer with hand-written backward pass.
//
// Parameter groups, in order:
//   patch_embed              [patch_embed]  W (patch_dim x D), b (D)
//   pos_embed                [pos_embed]    (tokens x D), token 0 is the class token
//   class_embed              [class_embed]  (D)
//   layer<i>.norm1           [norm]         gamma (D), beta (D)
//   layer<i>.attn            [attention]    Wqkv (D x 3D), bqkv (3D), Wo (D x D), bo (D)
//   layer<i>.norm2           [norm]         gamma (D), beta (D)
//   layer<i>.mlp             [mlp]          W1 (D x M), b1 (M), W2 (M x D), b2 (D)
//   final_norm               [norm]         gamma (D), beta (D)
//   head                     [head]         W (D x classes), b (classes)
// Matrices are row-major. The group count is 3 + 4 * num_layers + 2.
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "taskfuse/dataset.hpp"
#include "taskfuse/params.hpp"

namespace taskfuse {

struct ModelConfig {
  int image_size = 16;
  int patch_size = 4;
  int channels = 1;
  int embed_dim = 32;
  int num_layers = 2;
  int num_heads = 4;
  int mlp_dim = 64;
  int num_classes = 4;
  std::uint64_t seed = 0;

  // Throws InvalidArgumentError describing the first bad field.
  void validate() const;
  // Architecture identity; excludes the seed.
  std::string hash() const;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int num_tokens() const { return num_patches() + 1; }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int head_dim() const { return embed_dim / num_heads; }
};

enum class Optimizer { sgd, adam };

struct TrainSpec {
  int iterations = 300;
  int batch_size = 32;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 0;
};

using Logits = Eigen::MatrixXd;  // rows = images, cols = classes

ParameterSet init_model(const ModelConfig& cfg);

// Throws InvalidArgumentError on a geometry mismatch and NumericalError if any
// parameter is non-finite.
Logits forward(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& batch);

struct LossAndGrad {
  double loss = 0.0;  // mean cross-entropy over the batch
  ParameterSet grad;
};

LossAndGrad loss_and_grad(const ParameterSet& params, const ModelConfig& cfg,
                          const ImageSet& batch);

// Zeroes the gradient of every group whose tag is in `frozen`.
void mask_gradient(ParameterSet& grad, const std::set<GroupTag>& frozen);

// Mini-batch training. Groups tagged in `freeze_tags` are never written.
// `loss_trace`, when given, receives the per-iteration batch loss.
ParameterSet finetune(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& dataset,
                      const TrainSpec& spec, const std::set<GroupTag>& freeze_tags,
                      std::vector<double>* loss_trace = nullptr);

// Argmax class per image; ties go to the lowest class index.
std::vector<int> predict(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& data);
std::vector<int> argmax_rows(const Logits& logits);

// Fraction of argmax-correct predictions.
double evaluate(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& dataset);

}  // namespace taskfuse
