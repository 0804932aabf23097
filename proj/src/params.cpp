// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taskfuse/error.hpp"

namespace taskfuse {

namespace {

constexpr std::string_view kTagNames[] = {"patch_embed", "pos_embed", "class_embed", "attention",
                                          "mlp",         "norm",      "head"};

}  // namespace

std::string_view to_string(GroupTag tag) { return kTagNames[static_cast<int>(tag)]; }

GroupTag parse_group_tag(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kTagNames); ++i) {
    if (kTagNames[i] == name) return static_cast<GroupTag>(i);
  }
  throw InvalidArgumentError("unknown group tag '" + std::string(name) + "'");
}

const std::vector<GroupTag>& all_group_tags() {
  static const std::vector<GroupTag> tags = {GroupTag::patch_embed, GroupTag::pos_embed,
                                             GroupTag::class_embed, GroupTag::attention,
                                             GroupTag::mlp,         GroupTag::norm,
                                             GroupTag::head};
  return tags;
}

void ParameterSet::add_group(std::string name, GroupTag tag, std::vector<double> values) {
  if (find(name) != nullptr) {
    throw InvalidArgumentError("duplicate parameter group '" + name + "'");
  }
  groups_.push_back(ParameterGroup{std::move(name), tag, std::move(values)});
}

const ParameterGroup* ParameterSet::find(std::string_view name) const {
  auto it = std::find_if(groups_.begin(), groups_.end(),
                         [&](const ParameterGroup& g) { return g.name == name; });
  return it == groups_.end() ? nullptr : &*it;
}

ParameterGroup* ParameterSet::find(std::string_view name) {
  auto it = std::find_if(groups_.begin(), groups_.end(),
                         [&](const ParameterGroup& g) { return g.name == name; });
  return it == groups_.end() ? nullptr : &*it;
}

const ParameterGroup& ParameterSet::at(std::string_view name) const {
  const auto* g = find(name);
  if (g == nullptr) throw InvalidArgumentError("no parameter group '" + std::string(name) + "'");
  return *g;
}

ParameterGroup& ParameterSet::at(std::string_view name) {
  auto* g = find(name);
  if (g == nullptr) throw InvalidArgumentError("no parameter group '" + std::string(name) + "'");
  return *g;
}

std::size_t ParameterSet::total_dim() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.values.size();
  return n;
}

std::optional<std::string> incompatibility(const ParameterSet& a, const ParameterSet& b) {
  if (a.config_hash() != b.config_hash()) {
    return "model_config_hash differs ('" + a.config_hash() + "' vs '" + b.config_hash() + "')";
  }
  const auto& ga = a.groups();
  const auto& gb = b.groups();
  const std::size_t n = std::min(ga.size(), gb.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (ga[i].name != gb[i].name) {
      return "group " + std::to_string(i) + " name differs ('" + ga[i].name + "' vs '" +
             gb[i].name + "')";
    }
    if (ga[i].values.size() != gb[i].values.size()) {
      return "group '" + ga[i].name + "' length differs (" + std::to_string(ga[i].values.size()) +
             " vs " + std::to_string(gb[i].values.size()) + ")";
    }
    if (ga[i].tag != gb[i].tag) {
      return "group '" + ga[i].name + "' tag differs";
    }
  }
  if (ga.size() != gb.size()) {
    const auto& extra = ga.size() > gb.size() ? ga[n] : gb[n];
    return "group '" + extra.name + "' missing from one side";
  }
  return std::nullopt;
}

void require_compatible(const ParameterSet& a, const ParameterSet& b, std::string_view context) {
  if (auto why = incompatibility(a, b)) {
    throw IncompatibleError(std::string(context) + ": incompatible parameter sets: " + *why);
  }
}

ParameterSet zeros_like(const ParameterSet& like) {
  ParameterSet out(like.config_hash());
  for (const auto& g : like.groups()) {
    out.add_group(g.name, g.tag, std::vector<double>(g.values.size(), 0.0));
  }
  return out;
}

std::vector<double> flatten(const ParameterSet& p) {
  std::vector<double> flat;
  flat.reserve(p.total_dim());
  for (const auto& g : p.groups()) flat.insert(flat.end(), g.values.begin(), g.values.end());
  return flat;
}

ParameterSet unflatten(const ParameterSet& layout, std::span<const double> flat) {
  if (flat.size() != layout.total_dim()) {
    throw InvalidArgumentError("unflatten: expected " + std::to_string(layout.total_dim()) +
                               " values, got " + std::to_string(flat.size()));
  }
  ParameterSet out(layout.config_hash());
  std::size_t offset = 0;
  for (const auto& g : layout.groups()) {
    auto first = flat.begin() + static_cast<std::ptrdiff_t>(offset);
    out.add_group(g.name, g.tag,
                  std::vector<double>(first, first + static_cast<std::ptrdiff_t>(g.values.size())));
    offset += g.values.size();
  }
  return out;
}

ParameterSet group_select(const ParameterSet& p, const std::set<GroupTag>& tags) {
  ParameterSet out(p.config_hash());
  for (const auto& g : p.groups()) {
    if (tags.contains(g.tag)) out.add_group(g.name, g.tag, g.values);
  }
  return out;
}

ParameterSet group_select(const ParameterSet& p, const std::set<std::string>& tag_names) {
  std::set<GroupTag> tags;
  for (const auto& name : tag_names) tags.insert(parse_group_tag(name));
  return group_select(p, tags);
}

TaskVector compute_task_vector(const ParameterSet& fine, const ParameterSet& base,
                               std::string task_id, int source_user) {
  require_compatible(fine, base, "compute_task_vector");
  ParameterSet delta(base.config_hash());
  for (std::size_t i = 0; i < base.groups().size(); ++i) {
    const auto& f = fine.groups()[i].values;
    const auto& b = base.groups()[i].values;
    std::vector<double> d(b.size());
    for (std::size_t k = 0; k < b.size(); ++k) d[k] = f[k] - b[k];
    delta.add_group(base.groups()[i].name, base.groups()[i].tag, std::move(d));
  }
  return TaskVector{std::move(delta), std::move(task_id), source_user, false, 0.0};
}

ParameterSet add_scaled(const ParameterSet& base, const std::vector<TaskVector>& vectors,
                        double lambda_n) {
  if (vectors.empty()) throw InvalidArgumentError("add_scaled: empty task-vector list");
  if (!(lambda_n >= 0.0 && lambda_n <= 1.0)) {
    throw InvalidArgumentError("add_scaled: lambda_n must lie in [0, 1]");
  }
  for (const auto& v : vectors) require_compatible(v.delta, base, "add_scaled(" + v.task_id + ")");

  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return vectors[a].source_user < vectors[b].source_user;
  });

  ParameterSet out = base;
  for (std::size_t gi = 0; gi < out.groups().size(); ++gi) {
    auto& values = out.groups()[gi].values;
    for (std::size_t k = 0; k < values.size(); ++k) {
      double sum = 0.0;
      for (std::size_t idx : order) sum += vectors[idx].delta.groups()[gi].values[k];
      values[k] += lambda_n * sum;
    }
  }
  return out;
}

double dot(const ParameterSet& a, const ParameterSet& b) {
  require_compatible(a, b, "dot");
  double s = 0.0;
  for (std::size_t gi = 0; gi < a.groups().size(); ++gi) {
    const auto& x = a.groups()[gi].values;
    const auto& y = b.groups()[gi].values;
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
  }
  return s;
}

double squared_norm(const ParameterSet& p) {
  double s = 0.0;
  for (const auto& g : p.groups()) {
    for (double v : g.values) s += v * v;
  }
  return s;
}

double cosine_similarity(const TaskVector& a, const TaskVector& b) {
  require_compatible(a.delta, b.delta, "cosine_similarity");
  const double na = squared_norm(a.delta);
  const double nb = squared_norm(b.delta);
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateInputError("cosine_similarity: zero-norm task vector ('" +
                               (na == 0.0 ? a.task_id : b.task_id) + "')");
  }
  const double c = dot(a.delta, b.delta) / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace taskfuse
