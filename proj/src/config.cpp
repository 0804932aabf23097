// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "taskfuse/error.hpp"

namespace taskfuse {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Maps JSON pointers ("/model/embed_dim", "/seeds/2") to the line their key
// or array element starts on. nlohmann::json does not keep positions.
class LineIndex {
 public:
  explicit LineIndex(const std::string& text) { scan(text); }

  int line(std::string pointer) const {
    for (;;) {
      const auto it = lines_.find(pointer);
      if (it != lines_.end()) return it->second;
      const auto cut = pointer.rfind('/');
      if (cut == std::string::npos || pointer.empty()) return 1;
      pointer.resize(cut);
    }
  }

 private:
  struct Frame {
    bool object = false;
    bool expect_key = true;
    std::string key;
    int index = 0;
  };

  std::string path(const std::vector<Frame>& st) const {
    std::string p;
    for (const auto& f : st) p += "/" + (f.object ? f.key : std::to_string(f.index));
    return p;
  }

  void scan(const std::string& s) {
    std::vector<Frame> st;
    int line = 1;
    auto value_start = [&] {
      if (!st.empty() && !st.back().object) lines_.emplace(path(st), line);
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (c == '\n') {
        ++line;
      } else if (c == '"') {
        std::string str;
        for (++i; i < s.size() && s[i] != '"'; ++i) {
          if (s[i] == '\\' && i + 1 < s.size()) ++i;
          str += s[i];
        }
        if (!st.empty() && st.back().object && st.back().expect_key) {
          st.back().key = str;
          st.back().expect_key = false;
          lines_.emplace(path(st), line);
        } else {
          value_start();
        }
      } else if (c == ',') {
        if (!st.empty()) {
          if (st.back().object) {
            st.back().expect_key = true;
          } else {
            ++st.back().index;
          }
        }
      } else if (c == '{' || c == '[') {
        value_start();
        Frame f;
        f.object = c == '{';
        st.push_back(f);
      } else if (c == '}' || c == ']') {
        if (!st.empty()) st.pop_back();
      } else if (c != ':' && c != ' ' && c != '\t' && c != '\r') {
        value_start();
        while (i + 1 < s.size() && std::string_view(",}] \t\r\n").find(s[i + 1]) == std::string_view::npos) ++i;
      }
    }
  }

  std::map<std::string, int> lines_;
};

std::string dotted(const std::string& pointer) {
  std::string d = pointer.empty() ? "<root>" : pointer.substr(1);
  std::replace(d.begin(), d.end(), '/', '.');
  return d;
}

class Reader {
 public:
  explicit Reader(const LineIndex& idx) : idx_(idx) {}

  [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
    throw InvalidArgumentError("line " + std::to_string(idx_.line(pointer)) + ": " + msg);
  }

  const json* section(const json& parent, const std::string& pointer, const char* key) const {
    const auto it = parent.find(key);
    if (it == parent.end()) return nullptr;
    if (!it->is_object()) fail(pointer + "/" + key, "'" + dotted(pointer + "/" + key) + "' must be an object");
    return &*it;
  }

  void allow(const json& obj, const std::string& pointer, std::set<std::string> keys) const {
    for (const auto& [k, v] : obj.items()) {
      if (!keys.contains(k)) fail(pointer + "/" + k, "unknown key '" + dotted(pointer + "/" + k) + "'");
    }
  }

  template <typename T>
  void read(const json& obj, const std::string& pointer, const char* key, T& out) const {
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    out = convert<T>(*it, pointer + "/" + key);
  }

  template <typename T>
  T convert(const json& v, const std::string& p) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(p, "'" + dotted(p) + "' must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) fail(p, "'" + dotted(p) + "' must be a nonnegative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(p, "'" + dotted(p) + "' must be an integer");
      return static_cast<T>(v.get<std::int64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(p, "'" + dotted(p) + "' must be a number");
      return v.get<double>();
    } else {
      if (!v.is_string()) fail(p, "'" + dotted(p) + "' must be a string");
      return v.get<std::string>();
    }
  }

  template <typename T>
  std::vector<T> list(const json& obj, const std::string& pointer, const char* key) const {
    const std::string p = pointer + "/" + key;
    const auto& v = obj.at(key);
    if (!v.is_array()) fail(p, "'" + dotted(p) + "' must be a list");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<T>(v[i], p + "/" + std::to_string(i)));
    return out;
  }

  // Runs `parse` on a string value, reporting its exception text at the key's line.
  template <typename F>
  auto guarded(const std::string& p, F&& parse) const {
    try {
      return parse();
    } catch (const Error& e) {
      fail(p, e.what());
    }
  }

 private:
  const LineIndex& idx_;
};

int line_of_offset(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgumentError("config: " + what);
  };
  model.validate();
  require(pretrain.iterations >= 0, "pretrain.iterations must be >= 0");
  require(pretrain.iterations == 0 || model.num_classes >= 4,
          "rotation pretraining needs model.num_classes >= 4");
  require(pretrain.images_per_task >= 1 && pretrain.batch_size >= 1, "pretrain sizes must be >= 1");
  require(pretrain.learning_rate > 0.0, "pretrain.learning_rate must be positive");
  require(finetune.iterations >= 1 && finetune.batch_size >= 1, "finetune iterations and batch_size must be >= 1");
  require(finetune.learning_rate > 0.0, "finetune.learning_rate must be positive");
  require(channel.num_rx >= 1 && channel.num_users >= 1, "channel dimensions must be >= 1");
  require(channel.p_max > 0.0 && channel.noise_power > 0.0, "channel powers must be positive");
  require(channel.delta_reg > 0.0 && channel.delta_reg <= 0.1, "channel.delta_reg must lie in (0, 0.1]");
  require(static_cast<int>(tasks.size()) == channel.num_users,
          "one task per user: tasks.count (" + std::to_string(tasks.size()) + ") must equal channel.num_users (" +
              std::to_string(channel.num_users) + ")");
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    t.validate();
    require(t.num_classes == model.num_classes, "task num_classes must match model.num_classes");
    require(t.samples_fewshot_per_class >= defense.fewshot_per_class || !defense.enabled_realign,
            "task few-shot split smaller than defense.fewshot_per_class");
    require(ids.insert(t.task_id).second, "duplicate task id '" + t.task_id + "'");
  }
  transport.validate();
  defense.validate();
  require(!regimes.empty(), "regimes must be nonempty");
  require(!defense_modes.empty(), "defense_modes must be nonempty");
  require(!task_counts.empty(), "task_counts must be nonempty");
  for (int n : task_counts) {
    require(n >= 2 && n <= channel.num_users, "task_counts must lie in [2, Q]");
    if (lambda_mode == LambdaMode::table) transport.lambda_for(n);
  }
  require(!sample_k || *sample_k >= 1, "combinations sample:k needs k >= 1");
  require(!seeds.empty(), "seeds must be nonempty");
  require(analysis.beta > 0.0 && analysis.beta < 1.0, "analysis.beta must lie in (0, 1)");
  require(analysis.ratio_images_per_task >= 1 && analysis.jacobian_probes >= 1,
          "analysis sample sizes must be >= 1");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.tasks = default_task_specs(0, c.channel.num_users);
  for (auto& t : c.tasks) t.seed = 0;  // filled per experiment seed
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgumentError("line " + std::to_string(line_of_offset(text, e.byte)) +
                               ": malformed JSON (" + e.what() + ")");
  }
  const LineIndex idx(text);
  const Reader r(idx);
  if (!root.is_object()) r.fail("", "config must be a JSON object");
  r.allow(root, "", {"config_version", "model", "pretrain", "finetune", "tasks", "channel", "transport",
                     "defense", "regimes", "defense_modes", "task_counts", "combinations", "seeds",
                     "global_seed", "analysis", "output_dir"});
  if (!root.contains("config_version")) r.fail("", "missing key 'config_version'");
  int version = 0;
  r.read(root, "", "config_version", version);
  if (version != kConfigVersion) {
    r.fail("/config_version", "unsupported config_version " + std::to_string(version) + " (expected " +
                                  std::to_string(kConfigVersion) + ")");
  }

  ExperimentConfig c = default_config();
  if (const json* m = r.section(root, "", "model")) {
    r.allow(*m, "/model", {"image_size", "patch_size", "channels", "embed_dim", "num_layers", "num_heads",
                           "mlp_dim", "num_classes", "seed"});
    r.read(*m, "/model", "image_size", c.model.image_size);
    r.read(*m, "/model", "patch_size", c.model.patch_size);
    r.read(*m, "/model", "channels", c.model.channels);
    r.read(*m, "/model", "embed_dim", c.model.embed_dim);
    r.read(*m, "/model", "num_layers", c.model.num_layers);
    r.read(*m, "/model", "num_heads", c.model.num_heads);
    r.read(*m, "/model", "mlp_dim", c.model.mlp_dim);
    r.read(*m, "/model", "num_classes", c.model.num_classes);
    r.read(*m, "/model", "seed", c.model.seed);
  }
  if (const json* p = r.section(root, "", "pretrain")) {
    r.allow(*p, "/pretrain", {"iterations", "images_per_task", "learning_rate", "batch_size"});
    r.read(*p, "/pretrain", "iterations", c.pretrain.iterations);
    r.read(*p, "/pretrain", "images_per_task", c.pretrain.images_per_task);
    r.read(*p, "/pretrain", "learning_rate", c.pretrain.learning_rate);
    r.read(*p, "/pretrain", "batch_size", c.pretrain.batch_size);
  }
  if (const json* f = r.section(root, "", "finetune")) {
    r.allow(*f, "/finetune", {"iterations", "batch_size", "learning_rate", "optimizer", "freeze_tags"});
    r.read(*f, "/finetune", "iterations", c.finetune.iterations);
    r.read(*f, "/finetune", "batch_size", c.finetune.batch_size);
    r.read(*f, "/finetune", "learning_rate", c.finetune.learning_rate);
    std::string opt = c.finetune.optimizer == Optimizer::adam ? "adam" : "sgd";
    r.read(*f, "/finetune", "optimizer", opt);
    if (opt != "adam" && opt != "sgd") r.fail("/finetune/optimizer", "optimizer must be 'adam' or 'sgd'");
    c.finetune.optimizer = opt == "adam" ? Optimizer::adam : Optimizer::sgd;
    if (f->contains("freeze_tags")) {
      const auto names = r.list<std::string>(*f, "/finetune", "freeze_tags");
      for (std::size_t i = 0; i < names.size(); ++i) {
        c.finetune_freeze_tags.insert(
            r.guarded("/finetune/freeze_tags/" + std::to_string(i), [&] { return parse_group_tag(names[i]); }));
      }
    }
  }
  if (const json* ch = r.section(root, "", "channel")) {
    r.allow(*ch, "/channel", {"num_rx", "num_users", "p_max", "noise_power", "delta_reg"});
    r.read(*ch, "/channel", "num_rx", c.channel.num_rx);
    r.read(*ch, "/channel", "num_users", c.channel.num_users);
    r.read(*ch, "/channel", "p_max", c.channel.p_max);
    r.read(*ch, "/channel", "noise_power", c.channel.noise_power);
    r.read(*ch, "/channel", "delta_reg", c.channel.delta_reg);
  }
  {
    // Tasks follow the user count unless listed explicitly.
    std::vector<GeneratorKind> kinds;
    const auto& all = all_generator_kinds();
    for (int i = 0; i < c.channel.num_users; ++i) kinds.push_back(all[static_cast<std::size_t>(i) % all.size()]);
    TaskSpec tmpl;
    if (const json* t = r.section(root, "", "tasks")) {
      r.allow(*t, "/tasks", {"kinds", "samples_train", "samples_test", "samples_fewshot_per_class", "label_noise"});
      if (t->contains("kinds")) {
        kinds.clear();
        const auto names = r.list<std::string>(*t, "/tasks", "kinds");
        for (std::size_t i = 0; i < names.size(); ++i) {
          kinds.push_back(r.guarded("/tasks/kinds/" + std::to_string(i),
                                    [&] { return parse_generator_kind(names[i]); }));
        }
      }
      r.read(*t, "/tasks", "samples_train", tmpl.samples_train);
      r.read(*t, "/tasks", "samples_test", tmpl.samples_test);
      r.read(*t, "/tasks", "samples_fewshot_per_class", tmpl.samples_fewshot_per_class);
      r.read(*t, "/tasks", "label_noise", tmpl.label_noise);
    }
    c.tasks.clear();
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      TaskSpec s = tmpl;
      s.task_id = "t" + std::to_string(i + 1);
      s.generator_kind = kinds[i];
      s.num_classes = c.model.num_classes;
      c.tasks.push_back(s);
    }
  }
  if (const json* t = r.section(root, "", "transport")) {
    r.allow(*t, "/transport", {"kappa", "lambda_table", "lambda_mode", "correlated_noise"});
    r.read(*t, "/transport", "kappa", c.transport.kappa);
    r.read(*t, "/transport", "correlated_noise", c.transport.correlated_noise);
    if (const json* lt = r.section(*t, "/transport", "lambda_table")) {
      c.transport.lambda_table.clear();
      for (const auto& [k, v] : lt->items()) {
        const std::string p = "/transport/lambda_table/" + k;
        int n = 0;
        try {
          std::size_t used = 0;
          n = std::stoi(k, &used);
          if (used != k.size()) throw std::invalid_argument(k);
        } catch (const std::exception&) {
          r.fail(p, "lambda_table keys must be task counts, got '" + k + "'");
        }
        c.transport.lambda_table[n] = r.convert<double>(v, p);
      }
    }
    std::string mode = "table";
    r.read(*t, "/transport", "lambda_mode", mode);
    if (mode != "table" && mode != "sweep") r.fail("/transport/lambda_mode", "lambda_mode must be 'table' or 'sweep'");
    c.lambda_mode = mode == "table" ? LambdaMode::table : LambdaMode::sweep;
  }
  if (const json* d = r.section(root, "", "defense")) {
    r.allow(*d, "/defense", {"freeze_tags", "fewshot_per_class", "realign_steps", "realign_lr",
                             "enabled_freeze", "enabled_realign"});
    if (d->contains("freeze_tags")) {
      c.defense.freeze_tags.clear();
      const auto names = r.list<std::string>(*d, "/defense", "freeze_tags");
      for (std::size_t i = 0; i < names.size(); ++i) {
        c.defense.freeze_tags.insert(
            r.guarded("/defense/freeze_tags/" + std::to_string(i), [&] { return parse_group_tag(names[i]); }));
      }
    }
    r.read(*d, "/defense", "fewshot_per_class", c.defense.fewshot_per_class);
    r.read(*d, "/defense", "realign_steps", c.defense.realign_steps);
    r.read(*d, "/defense", "realign_lr", c.defense.realign_lr);
    r.read(*d, "/defense", "enabled_freeze", c.defense.enabled_freeze);
    r.read(*d, "/defense", "enabled_realign", c.defense.enabled_realign);
  }
  if (root.contains("regimes")) {
    c.regimes.clear();
    const auto names = r.list<std::string>(root, "", "regimes");
    for (std::size_t i = 0; i < names.size(); ++i) {
      c.regimes.push_back(r.guarded("/regimes/" + std::to_string(i), [&] { return parse_noise_kind(names[i]); }));
    }
  }
  if (root.contains("defense_modes")) {
    c.defense_modes.clear();
    const auto names = r.list<std::string>(root, "", "defense_modes");
    for (std::size_t i = 0; i < names.size(); ++i) {
      c.defense_modes.push_back(
          r.guarded("/defense_modes/" + std::to_string(i), [&] { return parse_defense_mode(names[i]); }));
    }
  }
  if (root.contains("task_counts")) c.task_counts = r.list<int>(root, "", "task_counts");
  if (root.contains("combinations")) {
    const auto v = r.convert<std::string>(root.at("combinations"), "/combinations");
    if (v == "all") {
      c.sample_k.reset();
    } else if (v.starts_with("sample:")) {
      try {
        std::size_t used = 0;
        c.sample_k = std::stoi(v.substr(7), &used);
        if (used != v.size() - 7) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        r.fail("/combinations", "combinations must be 'all' or 'sample:<k>'");
      }
    } else {
      r.fail("/combinations", "combinations must be 'all' or 'sample:<k>'");
    }
  }
  if (root.contains("seeds")) c.seeds = r.list<std::uint64_t>(root, "", "seeds");
  r.read(root, "", "global_seed", c.global_seed);
  if (const json* a = r.section(root, "", "analysis")) {
    r.allow(*a, "/analysis", {"beta", "ratio_images_per_task", "jacobian_probes"});
    r.read(*a, "/analysis", "beta", c.analysis.beta);
    r.read(*a, "/analysis", "ratio_images_per_task", c.analysis.ratio_images_per_task);
    r.read(*a, "/analysis", "jacobian_probes", c.analysis.jacobian_probes);
  }
  std::string out = c.output_dir.string();
  r.read(root, "", "output_dir", out);
  c.output_dir = out;

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const InvalidArgumentError& e) {
    throw InvalidArgumentError(path.string() + ":" + e.what());
  }
}

std::string dump_config(const ExperimentConfig& c) {
  ordered_json j;
  j["config_version"] = kConfigVersion;
  j["model"] = {{"image_size", c.model.image_size}, {"patch_size", c.model.patch_size},
                {"channels", c.model.channels},     {"embed_dim", c.model.embed_dim},
                {"num_layers", c.model.num_layers}, {"num_heads", c.model.num_heads},
                {"mlp_dim", c.model.mlp_dim},       {"num_classes", c.model.num_classes},
                {"seed", c.model.seed}};
  j["pretrain"] = {{"iterations", c.pretrain.iterations},
                   {"images_per_task", c.pretrain.images_per_task},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"batch_size", c.pretrain.batch_size}};
  j["finetune"] = {{"iterations", c.finetune.iterations},
                   {"batch_size", c.finetune.batch_size},
                   {"learning_rate", c.finetune.learning_rate},
                   {"optimizer", c.finetune.optimizer == Optimizer::adam ? "adam" : "sgd"}};
  std::vector<std::string> ft_tags;
  for (GroupTag t : c.finetune_freeze_tags) ft_tags.push_back(std::string(to_string(t)));
  j["finetune"]["freeze_tags"] = ft_tags;
  ordered_json kinds = ordered_json::array();
  for (const auto& t : c.tasks) kinds.push_back(std::string(to_string(t.generator_kind)));
  const TaskSpec& t0 = c.tasks.front();
  j["tasks"] = {{"kinds", kinds},
                {"samples_train", t0.samples_train},
                {"samples_test", t0.samples_test},
                {"samples_fewshot_per_class", t0.samples_fewshot_per_class},
                {"label_noise", t0.label_noise}};
  j["channel"] = {{"num_rx", c.channel.num_rx},
                  {"num_users", c.channel.num_users},
                  {"p_max", c.channel.p_max},
                  {"noise_power", c.channel.noise_power},
                  {"delta_reg", c.channel.delta_reg}};
  ordered_json lt = ordered_json::object();
  for (const auto& [n, l] : c.transport.lambda_table) lt[std::to_string(n)] = l;
  j["transport"] = {{"kappa", c.transport.kappa},
                    {"lambda_table", lt},
                    {"lambda_mode", c.lambda_mode == LambdaMode::table ? "table" : "sweep"},
                    {"correlated_noise", c.transport.correlated_noise}};
  ordered_json tags = ordered_json::array();
  for (GroupTag t : c.defense.freeze_tags) tags.push_back(std::string(to_string(t)));
  j["defense"] = {{"freeze_tags", tags},
                  {"fewshot_per_class", c.defense.fewshot_per_class},
                  {"realign_steps", c.defense.realign_steps},
                  {"realign_lr", c.defense.realign_lr},
                  {"enabled_freeze", c.defense.enabled_freeze},
                  {"enabled_realign", c.defense.enabled_realign}};
  ordered_json regimes = ordered_json::array();
  for (NoiseKind k : c.regimes) regimes.push_back(std::string(to_string(k)));
  j["regimes"] = regimes;
  ordered_json modes = ordered_json::array();
  for (DefenseMode m : c.defense_modes) modes.push_back(std::string(to_string(m)));
  j["defense_modes"] = modes;
  j["task_counts"] = c.task_counts;
  j["combinations"] = c.sample_k ? "sample:" + std::to_string(*c.sample_k) : std::string("all");
  j["seeds"] = c.seeds;
  j["global_seed"] = c.global_seed;
  j["analysis"] = {{"beta", c.analysis.beta},
                   {"ratio_images_per_task", c.analysis.ratio_images_per_task},
                   {"jacobian_probes", c.analysis.jacobian_probes}};
  j["output_dir"] = c.output_dir.string();
  return j.dump(2) + "\n";
}

}  // namespace taskfuse
