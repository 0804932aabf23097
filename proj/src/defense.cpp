// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/defense.hpp"

#include <string>

#include "taskfuse/error.hpp"
#include "taskfuse/rng.hpp"
#include "taskfuse/taskbench.hpp"

namespace taskfuse {

std::string_view to_string(DefenseMode mode) {
  switch (mode) {
    case DefenseMode::none: return "none";
    case DefenseMode::freeze_only: return "freeze_only";
    case DefenseMode::realign_only: return "realign_only";
    case DefenseMode::full: return "full";
  }
  return "?";
}

DefenseMode parse_defense_mode(std::string_view name) {
  for (DefenseMode m : all_defense_modes()) {
    if (to_string(m) == name) return m;
  }
  throw InvalidArgumentError("unknown defense mode '" + std::string(name) + "'");
}

const std::vector<DefenseMode>& all_defense_modes() {
  static const std::vector<DefenseMode> modes{DefenseMode::none, DefenseMode::freeze_only,
                                              DefenseMode::realign_only, DefenseMode::full};
  return modes;
}

void DefenseConfig::validate() const {
  if (enabled_realign && fewshot_per_class < 1) {
    throw InvalidArgumentError("defense: fewshot_per_class must be >= 1 when realignment is on");
  }
  if (realign_steps < 0) throw InvalidArgumentError("defense: realign_steps must be >= 0");
  if (!(realign_lr > 0.0)) throw InvalidArgumentError("defense: realign_lr must be positive");
}

DefenseConfig DefenseConfig::with_mode(DefenseMode mode) const {
  DefenseConfig c = *this;
  c.enabled_freeze = mode == DefenseMode::freeze_only || mode == DefenseMode::full;
  c.enabled_realign = mode == DefenseMode::realign_only || mode == DefenseMode::full;
  return c;
}

ParameterSet restore_frozen(const ParameterSet& theta_mtllm, const ParameterSet& theta_base,
                            const DefenseConfig& dcfg) {
  require_compatible(theta_mtllm, theta_base, "restore_frozen");
  ParameterSet out = theta_mtllm;
  for (std::size_t i = 0; i < out.group_count(); ++i) {
    auto& g = out.groups()[i];
    if (dcfg.freeze_tags.contains(g.tag)) g.values = theta_base.groups()[i].values;
  }
  return out;
}

ImageSet pool_fewshot(const std::vector<ImageSet>& fewshot_splits, int num_classes,
                      int per_class) {
  ImageSet pool;
  bool first = true;
  for (const auto& split : fewshot_splits) {
    ImageSet part = fewshot_prefix(split, num_classes, per_class);
    if (first) {
      pool = std::move(part);
      first = false;
    } else {
      pool.append(part);
    }
  }
  return pool;
}

ParameterSet realign(const ParameterSet& theta, const ModelConfig& cfg,
                     const std::vector<ImageSet>& fewshot_splits, const DefenseConfig& dcfg) {
  dcfg.validate();
  if (dcfg.realign_steps == 0) return theta;
  const ImageSet pool = pool_fewshot(fewshot_splits, cfg.num_classes, dcfg.fewshot_per_class);
  if (pool.empty()) throw InvalidArgumentError("realign: empty few-shot pool");
  TrainSpec spec;
  spec.iterations = dcfg.realign_steps;
  spec.batch_size = static_cast<int>(pool.size());
  spec.learning_rate = dcfg.realign_lr;
  spec.optimizer = Optimizer::adam;
  spec.seed = derive_seed(dcfg.seed, "realign");
  const std::set<GroupTag> frozen = dcfg.enabled_freeze ? dcfg.freeze_tags : std::set<GroupTag>{};
  return finetune(theta, cfg, pool, spec, frozen);
}

ParameterSet apply_defense(const ParameterSet& theta_mtllm, const ParameterSet& theta_base,
                           const ModelConfig& cfg, const std::vector<ImageSet>& fewshot_splits,
                           const DefenseConfig& dcfg) {
  dcfg.validate();
  ParameterSet theta = theta_mtllm;
  if (dcfg.enabled_freeze) theta = restore_frozen(theta, theta_base, dcfg);
  if (dcfg.enabled_realign) theta = realign(theta, cfg, fewshot_splits, dcfg);
  return theta;
}

}  // namespace taskfuse
