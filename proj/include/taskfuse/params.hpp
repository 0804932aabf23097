// SPDX-License-Identifier: Apache-2.0
//
// Parameter containers and task-vector arithmetic.
//
// A ParameterSet is an ordered list of named groups, each a flat array of
// doubles carrying exactly one GroupTag. Tags are the unit of freezing: the
// defense restores whole tagged groups, never individual weights.
#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace taskfuse {

enum class GroupTag { patch_embed, pos_embed, class_embed, attention, mlp, norm, head };

std::string_view to_string(GroupTag tag);
// Throws InvalidArgumentError on an unknown name.
GroupTag parse_group_tag(std::string_view name);
const std::vector<GroupTag>& all_group_tags();

struct ParameterGroup {
  std::string name;
  GroupTag tag = GroupTag::attention;
  std::vector<double> values;

  bool operator==(const ParameterGroup&) const = default;
};

class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::string model_config_hash) : config_hash_(std::move(model_config_hash)) {}

  // Appends a group. Names must be unique.
  void add_group(std::string name, GroupTag tag, std::vector<double> values);

  const std::vector<ParameterGroup>& groups() const { return groups_; }
  std::vector<ParameterGroup>& groups() { return groups_; }
  std::size_t group_count() const { return groups_.size(); }

  const ParameterGroup* find(std::string_view name) const;
  ParameterGroup* find(std::string_view name);
  const ParameterGroup& at(std::string_view name) const;
  ParameterGroup& at(std::string_view name);

  std::size_t total_dim() const;
  const std::string& config_hash() const { return config_hash_; }

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<ParameterGroup> groups_;
  std::string config_hash_;
};

// Returns the first reason `a` and `b` cannot be combined elementwise, or
// nullopt when they share config hash, group names, order and lengths.
std::optional<std::string> incompatibility(const ParameterSet& a, const ParameterSet& b);
void require_compatible(const ParameterSet& a, const ParameterSet& b, std::string_view context);

// Zero-valued set with the same layout as `like`.
ParameterSet zeros_like(const ParameterSet& like);

std::vector<double> flatten(const ParameterSet& p);
ParameterSet unflatten(const ParameterSet& layout, std::span<const double> flat);

// Groups whose tag is in `tags`, in their original order.
ParameterSet group_select(const ParameterSet& p, const std::set<GroupTag>& tags);
ParameterSet group_select(const ParameterSet& p, const std::set<std::string>& tag_names);

struct TaskVector {
  ParameterSet delta;
  std::string task_id;
  int source_user = 1;  // 1-based, one task per user
  bool is_perturbed = false;
  double noise_variance_used = 0.0;
};

// delta = fine - base.
TaskVector compute_task_vector(const ParameterSet& fine, const ParameterSet& base,
                               std::string task_id = {}, int source_user = 1);

// base + lambda * sum(delta). Vectors are summed left to right in ascending
// source_user order (ties keep input order) so the result is bit-reproducible
// regardless of how the caller ordered them.
ParameterSet add_scaled(const ParameterSet& base, const std::vector<TaskVector>& vectors,
                        double lambda_n);

double dot(const ParameterSet& a, const ParameterSet& b);
double squared_norm(const ParameterSet& p);

// Cosine of the flattened deltas. Throws DegenerateInputError for a zero vector.
double cosine_similarity(const TaskVector& a, const TaskVector& b);

}  // namespace taskfuse
