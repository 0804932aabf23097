// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a JSON document with a `config_version` key.
// Every key is optional; omitted keys take the defaults below. Unknown keys
// and type errors are reported with the line they occur on. The key set is
// documented in docs/config.md.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "taskfuse/adversary.hpp"
#include "taskfuse/defense.hpp"
#include "taskfuse/fusion.hpp"
#include "taskfuse/taskbench.hpp"
#include "taskfuse/tinyvit.hpp"

namespace taskfuse {

inline constexpr int kConfigVersion = 1;

// Mean reported SNR of -16.2 dB with isotropic noise at Q = 8, N_R = 16,
// P_max = 0.1 mW (calibrate_noise_power over 2000 placements, seed 7).
inline constexpr double kDefaultNoisePower = 0.012932;

struct PretrainConfig {
  int iterations = 1000;  // 0 disables pretraining
  int images_per_task = 256;
  double learning_rate = 1e-3;
  int batch_size = 32;
};

struct ChannelConfig {
  int num_rx = 16;
  int num_users = 8;
  double p_max = 1e-4;
  double noise_power = kDefaultNoisePower;
  double delta_reg = kDefaultDeltaReg;
};

enum class LambdaMode { table, sweep };

struct AnalysisConfig {
  double beta = 0.05;
  int ratio_images_per_task = 50;
  int jacobian_probes = 4;
};

struct ExperimentConfig {
  ModelConfig model;
  PretrainConfig pretrain;
  TrainSpec finetune;
  std::set<GroupTag> finetune_freeze_tags;  // held fixed while fine-tuning tasks
  std::vector<TaskSpec> tasks;  // one per user
  ChannelConfig channel;
  TransportConfig transport;
  LambdaMode lambda_mode = LambdaMode::table;
  DefenseConfig defense;
  std::vector<NoiseKind> regimes{NoiseKind::ideal, NoiseKind::worst_sum_rate,
                                 NoiseKind::worst_strongest_user};
  std::vector<DefenseMode> defense_modes{DefenseMode::none, DefenseMode::freeze_only,
                                         DefenseMode::realign_only, DefenseMode::full};
  std::vector<int> task_counts{2, 3, 4, 5, 6, 7, 8};
  std::optional<int> sample_k;  // nullopt = all combinations
  std::vector<std::uint64_t> seeds{0};
  std::uint64_t global_seed = 0;
  AnalysisConfig analysis;
  std::filesystem::path output_dir = "out";

  // Throws InvalidArgumentError on a violated invariant.
  void validate() const;
};

ExperimentConfig default_config();

// Parses JSON text. Errors are InvalidArgumentError with "line N: ..." text.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical JSON form (all keys, stable order).
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace taskfuse
