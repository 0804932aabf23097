// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration. A "world" is everything that depends only on the
// experiment seed: the pretrained base model, the task datasets, and the
// per-task fine-tuned models and task vectors. A "cell" is one
// (regime, combination, seed) fusion round; it produces one row per defense
// mode.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "taskfuse/adversary.hpp"
#include "taskfuse/analysis.hpp"
#include "taskfuse/channel.hpp"
#include "taskfuse/config.hpp"
#include "taskfuse/defense.hpp"

namespace taskfuse {

struct World {
  std::uint64_t seed = 0;
  ModelConfig model;
  ParameterSet base;
  std::vector<TaskSpec> specs;
  std::vector<TaskData> data;
  std::vector<ParameterSet> finetuned;
  std::vector<TaskVector> vectors;    // source_user = index + 1
  std::vector<double> reference_acc;  // fine-tuned accuracy on own test split
};

// Pretrains (rotation pretext), generates tasks and fine-tunes each one. When
// `cache_dir` is given, checkpoints are reused if their config digest matches.
World build_world(const ExperimentConfig& cfg, std::uint64_t seed,
                  const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

// Task specs with per-seed generator seeds.
std::vector<TaskSpec> world_task_specs(const ExperimentConfig& cfg, std::uint64_t seed);
ModelConfig world_model_config(const ExperimentConfig& cfg, std::uint64_t seed);

struct ChannelRecord {
  NoiseKind regime = NoiseKind::ideal;
  std::uint64_t seed = 0;
  ChannelState state;
  NoiseDesign design;
  LinkMetrics metrics;
  double concentration = 0.0;  // trace(C^2) / trace(C)^2
};

// Channel draw for `seed` (shared by all regimes) and the regime's design.
ChannelRecord simulate_channel(const ExperimentConfig& cfg, NoiseKind regime, std::uint64_t seed);

struct ResultRow {
  std::string regime;
  std::string defense_mode;
  int n_tasks = 0;
  std::string combination_id;  // sorted task ids joined by '+'
  std::uint64_t seed = 0;
  std::vector<double> acc_raw;
  std::vector<double> acc_normalized;
  double mean_normalized = 0.0;
  double snr_db = 0.0;
  double mean_mu = 0.0;
  double xi = 0.0;
  double reject_rate = 0.0;
  double threshold = 0.0;
  double mean_offdiag_cosine = 0.0;
  double max_offdiag_cosine = 0.0;
  double lambda = 0.0;
  double kappa = 0.0;
  int fewshot_per_class = 0;
  std::vector<double> mu;         // per member user
  std::vector<double> noise_var;  // per member vector
};

struct Combination {
  std::vector<int> members;  // 0-based task/user indices, ascending
};

// All subsets of size n of {0..q-1} in lexicographic order, or a
// deterministic sample of k of them.
std::vector<Combination> enumerate_combinations(int q, int n, std::optional<int> sample_k,
                                                std::uint64_t seed);

std::string combination_id(const std::vector<TaskSpec>& specs, const Combination& c);

struct CellSpec {
  NoiseKind regime = NoiseKind::ideal;
  Combination combination;
  std::size_t seed_index = 0;
  std::vector<DefenseMode> modes;
  std::optional<int> fewshot_override;
};

// Runs one fusion round against a prepared world and channel record.
std::vector<ResultRow> run_cell(const ExperimentConfig& cfg, const World& world,
                                const ChannelRecord& channel, const CellSpec& cell);

struct CellFailure {
  std::string what;
  std::string cell;
};

struct SweepResult {
  std::vector<ResultRow> rows;  // canonical order
  std::vector<CellFailure> failures;
  // Mean cosine matrix of all Q transported vectors per regime (seed average).
  std::vector<std::pair<std::string, Eigen::MatrixXd>> cosine;
};

struct SweepOptions {
  int jobs = 1;
  std::optional<std::filesystem::path> cache_dir;
  // Few-shot sizes for the ablation grid; empty = config value only.
  std::vector<int> fewshot_sizes;
  std::function<void(const std::string&)> log;
};

SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opts);

// Sorts rows by (regime, defense_mode, n_tasks, combination_id, seed,
// fewshot_per_class).
void canonical_sort(std::vector<ResultRow>& rows);

// Runs fn(i) for i in [0, n) on `jobs` threads.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace taskfuse
