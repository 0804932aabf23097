// SPDX-License-Identifier: Apache-2.0
//
// Post-fusion defense: restore embedding groups from the base model, then
// few-shot fine-tune the merged model on a small pooled set.
#pragma once

#include <cstdint>
#include <set>
#include <string_view>
#include <vector>

#include "taskfuse/dataset.hpp"
#include "taskfuse/params.hpp"
#include "taskfuse/tinyvit.hpp"

namespace taskfuse {

enum class DefenseMode { none, freeze_only, realign_only, full };

std::string_view to_string(DefenseMode mode);
DefenseMode parse_defense_mode(std::string_view name);
const std::vector<DefenseMode>& all_defense_modes();

struct DefenseConfig {
  std::set<GroupTag> freeze_tags{GroupTag::patch_embed, GroupTag::pos_embed, GroupTag::class_embed};
  int fewshot_per_class = 10;
  int realign_steps = 50;
  double realign_lr = 5e-4;
  bool enabled_freeze = true;
  bool enabled_realign = true;
  std::uint64_t seed = 0;

  void validate() const;
  // Copy with the enable flags set for `mode`.
  DefenseConfig with_mode(DefenseMode mode) const;
};

ParameterSet restore_frozen(const ParameterSet& theta_mtllm, const ParameterSet& theta_base,
                            const DefenseConfig& dcfg);

// Few-shot items (the first fewshot_per_class per class of each split) pooled
// in task order.
ImageSet pool_fewshot(const std::vector<ImageSet>& fewshot_splits, int num_classes,
                      int per_class);

// Fine-tunes on the pooled few-shot set, one full-pool batch per step. The
// freeze tags stay frozen when freezing is enabled.
ParameterSet realign(const ParameterSet& theta, const ModelConfig& cfg,
                     const std::vector<ImageSet>& fewshot_splits, const DefenseConfig& dcfg);

// restore_frozen then realign, each gated by its flag.
ParameterSet apply_defense(const ParameterSet& theta_mtllm, const ParameterSet& theta_base,
                           const ModelConfig& cfg, const std::vector<ImageSet>& fewshot_splits,
                           const DefenseConfig& dcfg);

}  // namespace taskfuse
