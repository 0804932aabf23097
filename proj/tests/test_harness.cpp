// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "support.hpp"

#include "taskfuse/error.hpp"
#include "taskfuse/harness.hpp"
#include "taskfuse/outputs.hpp"
#include "taskfuse/stats.hpp"

using namespace taskfuse;

namespace {

// Three users, a tiny model and a few training steps: seconds per world.
ExperimentConfig tiny_config() {
  ExperimentConfig c = default_config();
  c.model = tftest::tiny_model();
  c.pretrain.iterations = 10;
  c.pretrain.images_per_task = 16;
  c.pretrain.batch_size = 16;
  c.finetune.iterations = 15;
  c.finetune.batch_size = 16;
  c.finetune.learning_rate = 1e-2;
  c.channel.num_users = 3;
  c.channel.num_rx = 4;
  c.tasks.clear();
  const GeneratorKind kinds[] = {GeneratorKind::blobs, GeneratorKind::stripes, GeneratorKind::ring};
  for (int i = 0; i < 3; ++i) {
    TaskSpec s = tftest::tiny_task("t" + std::to_string(i + 1), kinds[i], 0);
    s.samples_train = 64;
    s.samples_test = 32;
    s.samples_fewshot_per_class = 4;
    c.tasks.push_back(s);
  }
  c.defense.fewshot_per_class = 2;
  c.defense.realign_steps = 3;
  c.regimes = {NoiseKind::ideal, NoiseKind::worst_sum_rate};
  c.task_counts = {2, 3};
  c.seeds = {0, 1};
  c.analysis.ratio_images_per_task = 8;
  c.analysis.jacobian_probes = 2;
  return c;
}

ResultRow sample_row(const std::string& regime, const std::string& mode, int n, const std::string& combo,
                     std::uint64_t seed, double acc) {
  ResultRow r;
  r.regime = regime;
  r.defense_mode = mode;
  r.n_tasks = n;
  r.combination_id = combo;
  r.seed = seed;
  r.mean_normalized = acc;
  r.acc_raw = {acc, 0.1 / 3.0};
  r.acc_normalized = {acc, 1.0};
  r.mu = {0.25, 1e-300};
  r.noise_var = {};
  r.snr_db = -16.2;
  r.xi = 0.5 * acc;
  return r;
}

std::uint64_t choose(int n, int k) {
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

}  // namespace

TEST_CASE("combinations are all n-subsets in lexicographic order") {
  for (int n = 1; n <= 8; ++n) {
    const auto all = enumerate_combinations(8, n, std::nullopt, 0);
    CHECK(all.size() == choose(8, n));
    std::set<std::vector<int>> seen;
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK(std::is_sorted(all[i].members.begin(), all[i].members.end()));
      CHECK(static_cast<int>(all[i].members.size()) == n);
      if (i > 0) CHECK(all[i - 1].members < all[i].members);
      seen.insert(all[i].members);
    }
    CHECK(seen.size() == all.size());
  }
  CHECK_THROWS_AS(enumerate_combinations(3, 4, std::nullopt, 0), InvalidArgumentError);
}

TEST_CASE("sampled combinations are a seeded ordered subset") {
  const auto all = enumerate_combinations(8, 4, std::nullopt, 0);
  const auto a = enumerate_combinations(8, 4, 5, 11);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].members < a[i].members);
  for (const auto& c : a) CHECK(std::find_if(all.begin(), all.end(), [&](const Combination& x) { return x.members == c.members; }) != all.end());
  const auto b = enumerate_combinations(8, 4, 5, 11);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].members == b[i].members);
  CHECK(enumerate_combinations(8, 7, 100, 1).size() == 8);
}

TEST_CASE("combination ids sort task ids") {
  std::vector<TaskSpec> specs(3);
  specs[0].task_id = "t1";
  specs[1].task_id = "t2";
  specs[2].task_id = "t10";
  CHECK(combination_id(specs, Combination{{0, 2}}) == "t1+t10");
  CHECK(combination_id(specs, Combination{{1, 2}}) == "t10+t2");
}

TEST_CASE("canonical sort orders by the documented key") {
  std::vector<ResultRow> rows{sample_row("wsr", "none", 2, "t1+t2", 0, 0.5), sample_row("ideal", "none", 3, "t1+t2+t3", 1, 0.5),
                              sample_row("ideal", "full", 3, "t1+t2+t3", 0, 0.5), sample_row("ideal", "full", 2, "t2+t3", 0, 0.5),
                              sample_row("ideal", "full", 2, "t1+t3", 1, 0.5), sample_row("ideal", "full", 2, "t1+t3", 0, 0.5)};
  rows[5].fewshot_per_class = 5;
  rows.push_back(rows[5]);
  rows.back().fewshot_per_class = 1;
  canonical_sort(rows);
  auto key = [](const ResultRow& r) {
    return std::tuple(r.regime, r.defense_mode, r.n_tasks, r.combination_id, r.seed, r.fewshot_per_class);
  };
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(key(rows[i - 1]) <= key(rows[i]));
  CHECK(rows.front().defense_mode == "full");
  CHECK(rows.back().regime == "wsr");
}

TEST_CASE("parallel_for visits every index once") {
  for (int jobs : {1, 3, 16}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, jobs, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("called"); });
}

TEST_CASE("results CSV round-trips exactly") {
  const std::vector<ResultRow> rows{sample_row("ideal", "none", 2, "t1+t2", 3, 0.1 + 0.2),
                                    sample_row("worst_sum_rate", "full", 3, "t1+t2+t3", 4, 1.0 / 3.0)};
  const std::string text = format_results_csv(rows);
  CHECK(text.substr(0, text.find('\n')).find("regime,defense_mode,n_tasks") == 0);
  const auto back = parse_results_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].mean_normalized == rows[0].mean_normalized);
  CHECK(back[1].acc_raw == rows[1].acc_raw);
  CHECK(back[0].mu == rows[0].mu);
  CHECK(back[0].noise_var.empty());
  CHECK(format_results_csv(back) == text);
  CHECK(results_header().size() == 20);
  CHECK_THROWS_AS(parse_results_csv("bogus,header\n"), IoError);
}

TEST_CASE("summary matches hand aggregation") {
  std::vector<ResultRow> rows;
  // Two seeds by two combinations.
  rows.push_back(sample_row("ideal", "none", 2, "t1+t2", 0, 0.6));
  rows.push_back(sample_row("ideal", "none", 2, "t1+t3", 0, 0.8));
  rows.push_back(sample_row("ideal", "none", 2, "t1+t2", 1, 0.5));
  rows.push_back(sample_row("ideal", "none", 2, "t1+t3", 1, 0.9));
  rows.push_back(sample_row("ideal", "full", 2, "t1+t2", 0, 0.95));
  const auto s = summarize(rows);
  REQUIRE(s.size() == 2);
  const SummaryRow& none = s[0].defense_mode == "none" ? s[0] : s[1];
  CHECK(none.count == 4);
  const std::vector<double> all{0.6, 0.8, 0.5, 0.9};
  CHECK(none.mean == doctest::Approx(0.7));
  CHECK(none.var_pooled == doctest::Approx(sample_variance(all)));
  const double v0 = sample_variance(std::vector<double>{0.6, 0.8}), v1 = sample_variance(std::vector<double>{0.5, 0.9});
  CHECK(none.var_within_seed == doctest::Approx((v0 + v1) / 2));
  CHECK(none.var_seed_means == doctest::Approx(sample_variance(std::vector<double>{0.7, 0.7})).scale(1.0));
  CHECK(none.mean_xi == doctest::Approx(0.35));
  CHECK(none.mean_snr_db == doctest::Approx(-16.2));
}

TEST_CASE("tiny sweep is identical across job counts and independent per cell") {
  const ExperimentConfig cfg = tiny_config();
  const auto cache = std::filesystem::temp_directory_path() / "taskfuse_test_harness_cache";
  SweepOptions one;
  one.cache_dir = cache;
  SweepOptions two = one;
  two.jobs = 2;
  const SweepResult a = run_sweep(cfg, one);
  const SweepResult b = run_sweep(cfg, two);
  CHECK(a.failures.empty());
  // 2 regimes x (3 + 1 combinations) x 2 seeds x 4 modes.
  CHECK(a.rows.size() == 64);
  CHECK(format_results_csv(a.rows) == format_results_csv(b.rows));
  REQUIRE(a.cosine.size() == 2);
  CHECK(a.cosine[0].second.rows() == 3);

  // Cells depend only on their own inputs.
  const World w = build_world(cfg, 1, cache);
  const ChannelRecord ch = simulate_channel(cfg, NoiseKind::worst_sum_rate, 1);
  CellSpec c;
  c.regime = NoiseKind::worst_sum_rate;
  c.combination = Combination{{0, 2}};
  c.seed_index = 1;
  c.modes = {DefenseMode::full};
  const auto alone = run_cell(cfg, w, ch, c);
  REQUIRE(alone.size() == 1);
  const auto it = std::find_if(a.rows.begin(), a.rows.end(), [](const ResultRow& r) {
    return r.regime == "worst_sum_rate" && r.defense_mode == "full" && r.combination_id == "t1+t3" && r.seed == 1;
  });
  REQUIRE(it != a.rows.end());
  CHECK(format_results_csv({*it}) == format_results_csv(alone));
}

TEST_CASE("noiseless transport never rejects") {
  ExperimentConfig cfg = tiny_config();
  cfg.transport.kappa = 0.0;
  cfg.regimes = {NoiseKind::worst_sum_rate};
  cfg.defense_modes = {DefenseMode::none};
  cfg.seeds = {0};
  SweepOptions o;
  o.cache_dir = std::filesystem::temp_directory_path() / "taskfuse_test_harness_cache";
  const SweepResult r = run_sweep(cfg, o);
  REQUIRE_FALSE(r.rows.empty());
  for (const auto& row : r.rows) {
    CHECK(row.reject_rate == 0.0);
    CHECK(row.kappa == 0.0);
  }
}

TEST_CASE("world cache reproduces a fresh build") {
  const ExperimentConfig cfg = tiny_config();
  const auto cache = std::filesystem::temp_directory_path() / "taskfuse_test_harness_fresh";
  std::filesystem::remove_all(cache);
  const World fresh = build_world(cfg, 0);
  const World first = build_world(cfg, 0, cache);
  const World again = build_world(cfg, 0, cache);
  CHECK(first.base == fresh.base);
  CHECK(again.base == fresh.base);
  REQUIRE(again.finetuned.size() == 3);
  CHECK(again.finetuned[2] == fresh.finetuned[2]);
  CHECK(again.reference_acc == fresh.reference_acc);
  CHECK(again.vectors[1].source_user == 2);
}
