// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint files. Layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "TFCKPT01"
//   offset 8   u64       manifest byte length M
//   offset 16  M bytes   UTF-8 JSON manifest
//   then       payloads  each group's values as IEEE-754 binary64 LE,
//                        concatenated in manifest group order
//
// Manifest keys: format_version (1), model_config_hash, groups
// [{name, tag, length}], and for task vectors an extra "task_vector" object
// {task_id, source_user, is_perturbed, noise_variance_used}.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "taskfuse/params.hpp"

namespace taskfuse {

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& p);
ParameterSet load_checkpoint(const std::filesystem::path& path);

void save_task_vector(const std::filesystem::path& path, const TaskVector& tv);
TaskVector load_task_vector(const std::filesystem::path& path);

// Little-endian binary64 helpers, shared with the dataset cache.
void append_f64_le(std::vector<std::uint8_t>& out, std::span<const double> values);
std::vector<double> read_f64_le(std::span<const std::uint8_t> bytes);

}  // namespace taskfuse
