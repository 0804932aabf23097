// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <tuple>

#include "json.hpp"

#include "taskfuse/checkpoint.hpp"
#include "taskfuse/error.hpp"
#include "taskfuse/rng.hpp"

namespace taskfuse {

namespace {

std::uint64_t world_root(const ExperimentConfig& cfg, std::uint64_t seed) {
  return derive_seed(cfg.global_seed, "world", seed);
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Digest of everything a world depends on.
std::uint64_t world_digest(const ExperimentConfig& cfg, std::uint64_t seed) {
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(dump_config(cfg));
  nlohmann::ordered_json k;
  for (const char* key : {"model", "pretrain", "finetune", "tasks"}) k[key] = j[key];
  k["global_seed"] = cfg.global_seed;
  k["seed"] = seed;
  k["format"] = kCheckpointFormatVersion;
  return hash_string(k.dump());
}

template <typename F>
ParameterSet cached(const std::optional<std::filesystem::path>& dir, const std::string& name, F&& make) {
  if (!dir) return make();
  const auto path = *dir / (name + ".tfckpt");
  if (std::filesystem::exists(path)) return load_checkpoint(path);
  ParameterSet p = make();
  std::filesystem::create_directories(*dir);
  const auto tmp = *dir / (name + ".tfckpt.tmp" + hex(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  save_checkpoint(tmp, p);
  std::filesystem::rename(tmp, path);
  return p;
}

ImageSet head_images(const ImageSet& s, int count) {
  std::vector<std::size_t> rows(std::min<std::size_t>(s.size(), static_cast<std::size_t>(count)));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return s.subset(rows);
}

// Task vector with the groups in `tags` zeroed.
TaskVector without_groups(const TaskVector& tv, const std::set<GroupTag>& tags) {
  TaskVector out = tv;
  for (auto& g : out.delta.groups()) {
    if (tags.contains(g.tag)) std::fill(g.values.begin(), g.values.end(), 0.0);
  }
  return out;
}

}  // namespace

ModelConfig world_model_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  ModelConfig m = cfg.model;
  m.seed = derive_seed(world_root(cfg, seed), "model", cfg.model.seed);
  return m;
}

std::vector<TaskSpec> world_task_specs(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<TaskSpec> specs = cfg.tasks;
  for (auto& s : specs) s.seed = derive_seed(world_root(cfg, seed), "task", s.task_id, to_string(s.generator_kind));
  return specs;
}

World build_world(const ExperimentConfig& cfg, std::uint64_t seed,
                  const std::optional<std::filesystem::path>& cache_dir) {
  World w;
  w.seed = seed;
  w.model = world_model_config(cfg, seed);
  w.specs = world_task_specs(cfg, seed);
  for (const auto& s : w.specs) w.data.push_back(generate_task(s, w.model));

  std::optional<std::filesystem::path> dir;
  if (cache_dir) dir = *cache_dir / ("world-" + hex(world_digest(cfg, seed)));

  const std::uint64_t root = world_root(cfg, seed);
  w.base = cached(dir, "base", [&] {
    ParameterSet p = init_model(w.model);
    if (cfg.pretrain.iterations > 0) {
      TrainSpec spec;
      spec.iterations = cfg.pretrain.iterations;
      spec.batch_size = cfg.pretrain.batch_size;
      spec.learning_rate = cfg.pretrain.learning_rate;
      spec.seed = derive_seed(root, "pretrain");
      p = finetune(p, w.model, rotation_pretext(w.data, cfg.pretrain.images_per_task), spec, {});
    }
    return p;
  });
  for (std::size_t i = 0; i < w.specs.size(); ++i) {
    const auto& s = w.specs[i];
    w.finetuned.push_back(cached(dir, s.task_id, [&] {
      TrainSpec spec = cfg.finetune;
      spec.seed = derive_seed(root, "finetune", s.task_id);
      return finetune(w.base, w.model, w.data[i].train, spec, cfg.finetune_freeze_tags);
    }));
    w.vectors.push_back(compute_task_vector(w.finetuned.back(), w.base, s.task_id, static_cast<int>(i) + 1));
    w.reference_acc.push_back(evaluate(w.finetuned.back(), w.model, w.data[i].test));
  }
  return w;
}

ChannelRecord simulate_channel(const ExperimentConfig& cfg, NoiseKind regime, std::uint64_t seed) {
  const std::uint64_t s = derive_seed(cfg.global_seed, "channel", seed);
  ChannelRecord r;
  r.regime = regime;
  r.seed = seed;
  const int q = cfg.channel.num_users;
  auto positions = sample_positions(q, s);
  CMatrix H = sample_channels(q, cfg.channel.num_rx, positions, s);
  const std::vector<double> caps(static_cast<std::size_t>(q), cfg.channel.p_max);
  r.design = design_noise(regime, H, caps, cfg.channel.noise_power, cfg.channel.delta_reg);
  r.state = make_state(std::move(H), caps, r.design.C_z, cfg.channel.noise_power, std::move(positions));
  r.state.validate();
  r.metrics = link_metrics(r.state);
  r.concentration = noise_concentration(r.design.C_z);
  return r;
}

std::vector<Combination> enumerate_combinations(int q, int n, std::optional<int> sample_k,
                                                std::uint64_t seed) {
  if (n < 1 || n > q) throw InvalidArgumentError("enumerate_combinations: need 1 <= n <= q");
  std::vector<Combination> all;
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (;;) {
    all.push_back({idx});
    int i = n - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == q - n + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  if (!sample_k || *sample_k >= static_cast<int>(all.size())) return all;
  // Deterministic subset, kept in lexicographic order.
  Rng rng(derive_seed(seed, "combinations", static_cast<std::uint64_t>(n)));
  std::vector<std::size_t> pick(all.size());
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  std::shuffle(pick.begin(), pick.end(), rng);
  pick.resize(static_cast<std::size_t>(*sample_k));
  std::sort(pick.begin(), pick.end());
  std::vector<Combination> out;
  for (std::size_t p : pick) out.push_back(all[p]);
  return out;
}

std::string combination_id(const std::vector<TaskSpec>& specs, const Combination& c) {
  std::vector<std::string> ids;
  for (int m : c.members) ids.push_back(specs.at(static_cast<std::size_t>(m)).task_id);
  std::sort(ids.begin(), ids.end());
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : "+") + id;
  return out;
}

std::vector<ResultRow> run_cell(const ExperimentConfig& cfg, const World& world,
                                const ChannelRecord& channel, const CellSpec& cell) {
  const auto& members = cell.combination.members;
  const int n = static_cast<int>(members.size());
  const std::string combo = combination_id(world.specs, cell.combination);
  const std::uint64_t cell_seed =
      derive_seed(cfg.global_seed, to_string(cell.regime), combo, static_cast<std::uint64_t>(cell.seed_index));

  std::vector<TaskVector> clean;
  std::vector<ImageSet> tests;
  std::vector<ImageSet> fewshot;
  std::vector<ParameterSet> refs;
  std::vector<double> ref_acc;
  std::vector<double> mu;
  for (int m : members) {
    const auto i = static_cast<std::size_t>(m);
    clean.push_back(world.vectors[i]);
    tests.push_back(world.data[i].test);
    fewshot.push_back(world.data[i].fewshot);
    refs.push_back(world.finetuned[i]);
    ref_acc.push_back(world.reference_acc[i]);
    mu.push_back(channel.metrics.mse[i]);
  }

  TransportConfig tcfg = cfg.transport;
  tcfg.seed = cell_seed;
  if (cfg.lambda_mode == LambdaMode::sweep) {
    const auto sw = sweep_lambda(world.base, world.model, clean, refs, fewshot, default_lambda_grid());
    tcfg.lambda_table[n] = sw.best_lambda;
  }
  const double lambda = tcfg.lambda_for(n);
  const double rho = cfg.transport.correlated_noise ? channel.concentration : 0.0;

  std::vector<TaskVector> sent;
  std::vector<double> noise_var;
  for (std::size_t k = 0; k < clean.size(); ++k) {
    sent.push_back(transmit_task_vector(clean[k], mu[k], tcfg, rho));
    noise_var.push_back(sent.back().noise_variance_used);
  }
  const ParameterSet merged = fuse(world.base, sent, tcfg);
  const ParameterSet undisturbed = fuse(world.base, clean, tcfg);

  const WdeReport w = wde(world.base, sent, std::vector<double>(members.size(), lambda), lambda, tests, world.model);

  // Hypothesis test: threshold from the linearized ratio variance, which
  // does not depend on kappa (the MSE sum is the channel's).
  ImageSet probe;
  for (std::size_t k = 0; k < tests.size(); ++k) {
    ImageSet part = head_images(tests[k], cfg.analysis.ratio_images_per_task);
    if (k == 0) {
      probe = std::move(part);
    } else {
      probe.append(part);
    }
  }
  double ms_mean = 0.0;
  for (const auto& tv : clean) ms_mean += squared_norm(tv.delta) / static_cast<double>(tv.delta.total_dim());
  ms_mean /= static_cast<double>(clean.size());
  const double factor = ratio_sensitivity(world.model, undisturbed, probe, lambda * lambda * ms_mean,
                                          cfg.analysis.jacobian_probes, derive_seed(cell_seed, "jacobian"));
  const double sum_mu = std::accumulate(mu.begin(), mu.end(), 0.0);
  const double T = threshold(cfg.analysis.beta, variance_of_ratio(factor, sum_mu));

  std::vector<ResultRow> rows;
  for (DefenseMode mode : cell.modes) {
    DefenseConfig dcfg = cfg.defense.with_mode(mode);
    dcfg.seed = derive_seed(cell_seed, "defense");
    if (cell.fewshot_override) dcfg.fewshot_per_class = *cell.fewshot_override;
    const ParameterSet theta = apply_defense(merged, world.base, world.model, fewshot, dcfg);
    const auto na = normalized_accuracy(theta, world.model, ref_acc, tests);

    std::vector<double> ratios;
    for (const auto& s : logit_ratios(world.model, undisturbed, theta, probe)) ratios.push_back(s.ratio);
    const auto ht = run_hypothesis_test(ratios, T);

    OffDiagonal cos;
    if (n >= 2) {
      if (dcfg.enabled_freeze) {
        std::vector<TaskVector> eff;
        for (const auto& tv : sent) eff.push_back(without_groups(tv, dcfg.freeze_tags));
        cos = off_diagonal_stats(cosine_matrix(eff));
      } else {
        cos = off_diagonal_stats(cosine_matrix(sent));
      }
    }

    ResultRow r;
    r.regime = std::string(to_string(cell.regime));
    r.defense_mode = std::string(to_string(mode));
    r.n_tasks = n;
    r.combination_id = combo;
    r.seed = world.seed;
    r.acc_raw = na.raw;
    r.acc_normalized = na.normalized;
    r.mean_normalized = na.mean;
    r.snr_db = channel.metrics.snr_db;
    r.mean_mu = std::accumulate(mu.begin(), mu.end(), 0.0) / static_cast<double>(mu.size());
    r.xi = w.xi;
    r.reject_rate = ht.reject_rate;
    r.threshold = T;
    r.mean_offdiag_cosine = cos.mean;
    r.max_offdiag_cosine = cos.max;
    r.lambda = lambda;
    r.kappa = tcfg.kappa;
    r.fewshot_per_class = dcfg.enabled_realign ? dcfg.fewshot_per_class : 0;
    r.mu = mu;
    r.noise_var = noise_var;
    rows.push_back(std::move(r));
  }
  return rows;
}

void canonical_sort(std::vector<ResultRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.regime, a.defense_mode, a.n_tasks, a.combination_id, a.seed, a.fewshot_per_class) <
           std::tie(b.regime, b.defense_mode, b.n_tasks, b.combination_id, b.seed, b.fewshot_per_class);
  });
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(workers, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opts) {
  cfg.validate();
  auto log = [&](const std::string& m) {
    if (opts.log) opts.log(m);
  };

  // Worlds and channels first; every cell reads them.
  std::vector<World> worlds(cfg.seeds.size());
  std::vector<std::string> world_errors(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    try {
      worlds[i] = build_world(cfg, cfg.seeds[i], opts.cache_dir);
    } catch (const std::exception& e) {
      world_errors[i] = e.what();
    }
    log("world seed " + std::to_string(cfg.seeds[i]) + (world_errors[i].empty() ? " ready" : " failed"));
  });

  SweepResult out;
  std::map<std::pair<NoiseKind, std::size_t>, ChannelRecord> channels;
  for (NoiseKind regime : cfg.regimes) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      try {
        channels.emplace(std::make_pair(regime, s), simulate_channel(cfg, regime, cfg.seeds[s]));
      } catch (const std::exception& e) {
        out.failures.push_back({e.what(), std::string(to_string(regime)) + " seed " + std::to_string(cfg.seeds[s])});
      }
    }
  }

  std::vector<CellSpec> cells;
  const std::vector<int> sizes =
      opts.fewshot_sizes.empty() ? std::vector<int>{cfg.defense.fewshot_per_class} : opts.fewshot_sizes;
  for (NoiseKind regime : cfg.regimes) {
    for (int n : cfg.task_counts) {
      for (const auto& combo : enumerate_combinations(cfg.channel.num_users, n, cfg.sample_k, cfg.global_seed)) {
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
          for (std::size_t z = 0; z < sizes.size(); ++z) {
            CellSpec c;
            c.regime = regime;
            c.combination = combo;
            c.seed_index = s;
            if (!opts.fewshot_sizes.empty()) c.fewshot_override = sizes[z];
            for (DefenseMode m : cfg.defense_modes) {
              const bool realigns = m == DefenseMode::realign_only || m == DefenseMode::full;
              // Modes without realignment do not depend on the few-shot size.
              if (realigns || z == 0) c.modes.push_back(m);
            }
            if (!c.modes.empty()) cells.push_back(std::move(c));
          }
        }
      }
    }
  }
  log(std::to_string(cells.size()) + " cells");

  std::vector<std::vector<ResultRow>> results(cells.size());
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> done{0};
  parallel_for(cells.size(), opts.jobs, [&](std::size_t i) {
    const auto& c = cells[i];
    const World& w = worlds[c.seed_index];
    const std::string label = std::string(to_string(c.regime)) + " " +
                              combination_id(cfg.tasks, c.combination) + " seed " +
                              std::to_string(cfg.seeds[c.seed_index]);
    try {
      if (!world_errors[c.seed_index].empty()) throw Error("world: " + world_errors[c.seed_index]);
      const auto it = channels.find({c.regime, c.seed_index});
      if (it == channels.end()) throw Error("channel simulation failed");
      results[i] = run_cell(cfg, w, it->second, c);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
    const std::size_t k = ++done;
    if (k % 25 == 0 || k == cells.size()) log(std::to_string(k) + "/" + std::to_string(cells.size()) + " cells");
  });
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i].empty()) {
      const auto& c = cells[i];
      out.failures.push_back({errors[i], std::string(to_string(c.regime)) + " " +
                                             combination_id(cfg.tasks, c.combination) + " seed " +
                                             std::to_string(cfg.seeds[c.seed_index])});
    }
    for (auto& r : results[i]) out.rows.push_back(std::move(r));
  }
  canonical_sort(out.rows);

  // Cosine matrices over all Q transported vectors, averaged over seeds.
  for (NoiseKind regime : cfg.regimes) {
    Eigen::MatrixXd acc;
    int count = 0;
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      const auto it = channels.find({regime, s});
      if (it == channels.end() || !world_errors[s].empty()) continue;
      TransportConfig tcfg = cfg.transport;
      tcfg.seed = derive_seed(cfg.global_seed, to_string(regime), "all", static_cast<std::uint64_t>(s));
      const double rho = cfg.transport.correlated_noise ? it->second.concentration : 0.0;
      std::vector<TaskVector> sent;
      for (std::size_t k = 0; k < worlds[s].vectors.size(); ++k) {
        sent.push_back(transmit_task_vector(worlds[s].vectors[k], it->second.metrics.mse[k], tcfg, rho));
      }
      const Eigen::MatrixXd m = cosine_matrix(sent);
      acc = count == 0 ? m : Eigen::MatrixXd(acc + m);
      ++count;
    }
    if (count > 0) out.cosine.emplace_back(std::string(to_string(regime)), acc / count);
  }
  return out;
}

}  // namespace taskfuse
