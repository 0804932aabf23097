// SPDX-License-Identifier: Apache-2.0
//
// Procedural image-classification tasks. Each generator kind draws images
// whose class is encoded by one visual property (orientation, position,
// scale, ...). Sample i of a task has class i mod num_classes and is drawn
// from its own RNG stream, so splits are disjoint index ranges:
//   train   [0, samples_train)
//   test    [samples_train, samples_train + samples_test)
//   fewshot the next num_classes * samples_fewshot_per_class indices
// Label noise applies to train and fewshot; test labels are clean.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "taskfuse/dataset.hpp"
#include "taskfuse/tinyvit.hpp"

namespace taskfuse {

enum class GeneratorKind { stripes, blobs, checker, ring, gradient, corner, diag, noise_texture };

std::string_view to_string(GeneratorKind kind);
GeneratorKind parse_generator_kind(std::string_view name);
const std::vector<GeneratorKind>& all_generator_kinds();

struct TaskSpec {
  std::string task_id;
  GeneratorKind generator_kind = GeneratorKind::stripes;
  int num_classes = 4;
  int samples_train = 512;
  int samples_test = 200;
  int samples_fewshot_per_class = 20;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
  // Optional second generator: each sample is drawn from `mix_kind` with
  // probability `mix_fraction` (set by task_similarity_knob).
  std::optional<GeneratorKind> mix_kind;
  double mix_fraction = 0.0;

  void validate() const;
};

struct TaskData {
  std::string task_id;
  ImageSet train;
  ImageSet test;
  ImageSet fewshot;

  bool operator==(const TaskData&) const = default;
};

TaskData generate_task(const TaskSpec& spec, const ModelConfig& cfg);

// The first `per_class` few-shot items of every class, in index order.
ImageSet fewshot_prefix(const ImageSet& fewshot, int num_classes, int per_class);

// Self-supervised pretext set: the first `per_task` train images of every
// task, image j rotated by (j mod 4) quarter turns and labelled with j mod 4.
ImageSet rotation_pretext(const std::vector<TaskData>& tasks, int per_task);

// Returns (a, b') where b' shares a fraction `overlap` of its samples with
// a's generator; overlap = 1 makes b' identical to a apart from task_id.
std::pair<TaskSpec, TaskSpec> task_similarity_knob(const TaskSpec& a, const TaskSpec& b,
                                                   double overlap);

// One spec per generator kind (task ids "t1".."t8"), seeds derived from `seed`.
std::vector<TaskSpec> default_task_specs(std::uint64_t seed, int count = 8);

// Dataset cache: "<dir>/<task_id>.tfdata", layout documented in docs/formats.md.
void save_task_data(const std::filesystem::path& dir, const TaskData& data);
TaskData load_task_data(const std::filesystem::path& dir, const std::string& task_id);

}  // namespace taskfuse
