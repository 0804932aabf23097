// SPDX-License-Identifier: Apache-2.0
//
// taskfuse: command-line front end for the fusion simulator.
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "taskfuse/checkpoint.hpp"
#include "taskfuse/config.hpp"
#include "taskfuse/error.hpp"
#include "taskfuse/harness.hpp"
#include "taskfuse/outputs.hpp"

using namespace taskfuse;

namespace {

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> regimes;
  std::string out;
  int jobs = 1;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seeds, "experiment seed(s), overrides config");
  sub->add_option("--regime", c.regimes, "noise regime(s): ideal, worst_sum_rate, worst_strongest_user");
  sub->add_option("--out", c.out, "output directory (overrides TASKFUSE_OUT and config)");
  sub->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? default_config() : load_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  if (!c.regimes.empty()) {
    cfg.regimes.clear();
    for (const auto& r : c.regimes) cfg.regimes.push_back(parse_noise_kind(r));
  }
  if (!c.out.empty()) {
    cfg.output_dir = c.out;
  } else if (const char* env = std::getenv("TASKFUSE_OUT"); env && *env) {
    cfg.output_dir = env;
  }
  cfg.validate();
  return cfg;
}

SweepOptions sweep_options(const ExperimentConfig& cfg, int jobs) {
  SweepOptions o;
  o.jobs = jobs;
  o.cache_dir = cfg.output_dir / "cache";
  o.log = [](const std::string& m) { std::cerr << m << "\n"; };
  return o;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

void report_failures(const SweepResult& r) {
  for (const auto& f : r.failures) std::cerr << "failed: " << f.cell << ": " << f.what << "\n";
  if (!r.failures.empty()) std::cerr << r.failures.size() << " cell(s) failed\n";
}

int cmd_gen_tasks(const ExperimentConfig& cfg) {
  for (auto seed : cfg.seeds) {
    const auto model = world_model_config(cfg, seed);
    const auto dir = cfg.output_dir / "tasks" / ("seed" + std::to_string(seed));
    for (const auto& s : world_task_specs(cfg, seed)) save_task_data(dir, generate_task(s, model));
    std::cout << dir.string() << "\n";
  }
  return 0;
}

int cmd_finetune(const ExperimentConfig& cfg, int jobs) {
  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const World w = build_world(cfg, seed, cfg.output_dir / "cache");
    const auto dir = cfg.output_dir / "checkpoints" / ("seed" + std::to_string(seed));
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "base.tfckpt", w.base);
    std::ostringstream acc;
    acc << "task_id,reference_acc\n";
    for (std::size_t k = 0; k < w.vectors.size(); ++k) {
      save_checkpoint(dir / (w.specs[k].task_id + ".tfckpt"), w.finetuned[k]);
      save_task_vector(dir / (w.specs[k].task_id + ".tfvec"), w.vectors[k]);
      acc << w.specs[k].task_id << "," << fmt(w.reference_acc[k]) << "\n";
    }
    write_text(dir / "reference_acc.csv", acc.str());
  });
  std::cout << (cfg.output_dir / "checkpoints").string() << "\n";
  return 0;
}

int cmd_channel_sim(const ExperimentConfig& cfg) {
  std::ostringstream o;
  o << "regime,seed,user,sic_position,rate,mse,sum_rate,sum_rate_trace_form,snr_db,objective,nu\n";
  for (NoiseKind regime : cfg.regimes) {
    for (auto seed : cfg.seeds) {
      const ChannelRecord r = simulate_channel(cfg, regime, seed);
      for (std::size_t q = 0; q < r.metrics.rate.size(); ++q) {
        const auto pos = std::find(r.state.order.begin(), r.state.order.end(), static_cast<int>(q)) - r.state.order.begin();
        o << to_string(regime) << "," << seed << "," << q + 1 << "," << pos << "," << fmt(r.metrics.rate[q]) << ","
          << fmt(r.metrics.mse[q]) << "," << fmt(r.metrics.sum_rate) << "," << fmt(r.metrics.sum_rate_trace_form) << ","
          << fmt(r.metrics.snr_db) << "," << fmt(r.design.achieved_objective) << "," << fmt(r.design.nu) << "\n";
      }
    }
  }
  write_text(cfg.output_dir / "channel.csv", o.str());
  std::cout << o.str();
  return 0;
}

Combination parse_combination(const ExperimentConfig& cfg, const std::string& text) {
  Combination c;
  std::stringstream ss(text);
  std::string id;
  while (std::getline(ss, id, '+')) {
    auto it = std::find_if(cfg.tasks.begin(), cfg.tasks.end(), [&](const TaskSpec& s) { return s.task_id == id; });
    if (it == cfg.tasks.end()) throw InvalidArgumentError("unknown task id '" + id + "'");
    c.members.push_back(static_cast<int>(it - cfg.tasks.begin()));
  }
  std::sort(c.members.begin(), c.members.end());
  if (c.members.empty() || std::adjacent_find(c.members.begin(), c.members.end()) != c.members.end()) {
    throw InvalidArgumentError("combination must list distinct task ids joined by '+'");
  }
  return c;
}

int cmd_fuse(const ExperimentConfig& cfg, const std::string& combo) {
  const Combination c = parse_combination(cfg, combo);
  std::vector<ResultRow> rows;
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    const World w = build_world(cfg, cfg.seeds[s], cfg.output_dir / "cache");
    for (NoiseKind regime : cfg.regimes) {
      const ChannelRecord ch = simulate_channel(cfg, regime, cfg.seeds[s]);
      CellSpec cell{regime, c, s, cfg.defense_modes, std::nullopt};
      for (auto& r : run_cell(cfg, w, ch, cell)) rows.push_back(std::move(r));
    }
  }
  canonical_sort(rows);
  write_results_csv(cfg.output_dir / "fuse.csv", rows);
  for (const auto& r : rows) {
    std::cout << r.regime << " " << r.defense_mode << " seed " << r.seed << " " << r.combination_id
              << " mean_normalized=" << fmt(r.mean_normalized) << "\n";
  }
  return 0;
}

int cmd_run(const ExperimentConfig& cfg, int jobs, const std::vector<int>& fewshot_sizes) {
  SweepOptions o = sweep_options(cfg, jobs);
  o.fewshot_sizes = fewshot_sizes;
  const SweepResult r = run_sweep(cfg, o);
  emit_outputs(cfg.output_dir, r);
  report_failures(r);
  std::cout << r.rows.size() << " rows written to " << (cfg.output_dir / "results.csv").string() << "\n";
  return r.rows.empty() ? 1 : 0;
}

int cmd_lambda_sweep(const ExperimentConfig& cfg, int jobs) {
  struct Job {
    std::size_t seed_index;
    Combination combo;
  };
  std::vector<World> worlds(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), jobs,
               [&](std::size_t i) { worlds[i] = build_world(cfg, cfg.seeds[i], cfg.output_dir / "cache"); });
  std::vector<Job> todo;
  for (int n : cfg.task_counts) {
    for (const auto& c : enumerate_combinations(cfg.channel.num_users, n, cfg.sample_k, cfg.global_seed)) {
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) todo.push_back({s, c});
    }
  }
  const auto grid = default_lambda_grid();
  std::vector<LambdaSweep> res(todo.size());
  parallel_for(todo.size(), jobs, [&](std::size_t i) {
    const World& w = worlds[todo[i].seed_index];
    std::vector<TaskVector> v;
    std::vector<ParameterSet> refs;
    std::vector<ImageSet> held;
    for (int m : todo[i].combo.members) {
      v.push_back(w.vectors[static_cast<std::size_t>(m)]);
      refs.push_back(w.finetuned[static_cast<std::size_t>(m)]);
      held.push_back(w.data[static_cast<std::size_t>(m)].fewshot);
    }
    res[i] = sweep_lambda(w.base, w.model, v, refs, held, grid);
  });
  std::ostringstream o;
  o << "n_tasks,combination_id,seed,lambda,mean_normalized,is_best\n";
  std::map<int, std::map<double, std::vector<double>>> by_n;
  for (std::size_t i = 0; i < todo.size(); ++i) {
    const int n = static_cast<int>(todo[i].combo.members.size());
    const auto id = combination_id(cfg.tasks, todo[i].combo);
    for (const auto& p : res[i].points) {
      o << n << "," << id << "," << cfg.seeds[todo[i].seed_index] << "," << fmt(p.lambda) << ","
        << fmt(p.mean_normalized) << "," << (p.lambda == res[i].best_lambda ? 1 : 0) << "\n";
      by_n[n][p.lambda].push_back(p.mean_normalized);
    }
  }
  write_text(cfg.output_dir / "lambda_sweep.csv", o.str());
  // Suggested table: lambda with the best average per task count.
  std::cout << "n_tasks,best_lambda,mean_normalized\n";
  for (const auto& [n, m] : by_n) {
    double best = -1.0, bl = 0.0;
    for (const auto& [l, v] : m) {
      const double avg = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      if (avg > best) {
        best = avg;
        bl = l;
      }
    }
    std::cout << n << "," << fmt(bl) << "," << fmt(best) << "\n";
  }
  return 0;
}

int cmd_plot(const ExperimentConfig& cfg, const std::string& input) {
  const std::filesystem::path in = input.empty() ? cfg.output_dir / "results.csv" : std::filesystem::path(input);
  emit_plots(cfg.output_dir, read_results_csv(in));
  std::cout << cfg.output_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"taskfuse: multi-task model fusion over an adversarial multiple-access channel"};
  app.require_subcommand(1);
  Common c;
  std::string combo;
  std::string input;
  std::vector<int> sizes{1, 5, 10, 20};

  auto* gen = app.add_subcommand("gen-tasks", "materialize task datasets");
  auto* ft = app.add_subcommand("finetune", "pretrain the base model and fine-tune every task");
  auto* ch = app.add_subcommand("channel-sim", "link metrics per regime");
  auto* fu = app.add_subcommand("fuse", "one fusion cell");
  auto* run = app.add_subcommand("run", "full sweep");
  auto* ab = app.add_subcommand("ablate", "defense mode x few-shot size grid");
  auto* ls = app.add_subcommand("lambda-sweep", "clean-fusion accuracy over the lambda grid");
  auto* pl = app.add_subcommand("plot", "summary, long-format plot data and SVG charts from results.csv");
  for (auto* s : {gen, ft, ch, fu, run, ab, ls, pl}) add_common(s, c);
  fu->add_option("--combination", combo, "task ids joined by '+', e.g. t1+t3")->required();
  ab->add_option("--fewshot", sizes, "few-shot sizes per class");
  pl->add_option("--in", input, "results.csv to read (default <out>/results.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig cfg = resolve(c);
    if (*gen) return cmd_gen_tasks(cfg);
    if (*ft) return cmd_finetune(cfg, c.jobs);
    if (*ch) return cmd_channel_sim(cfg);
    if (*fu) return cmd_fuse(cfg, combo);
    if (*run) return cmd_run(cfg, c.jobs, {});
    if (*ab) return cmd_run(cfg, c.jobs, sizes);
    if (*ls) return cmd_lambda_sweep(cfg, c.jobs);
    if (*pl) return cmd_plot(cfg, input);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
