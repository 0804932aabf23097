// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

#include "taskfuse/config.hpp"
#include "taskfuse/error.hpp"

using namespace taskfuse;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const InvalidArgumentError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("a bare version gives the defaults") {
  const ExperimentConfig c = parse_config(R"({"config_version": 1})");
  const ExperimentConfig d = default_config();
  CHECK(dump_config(c) == dump_config(d));
  CHECK(c.tasks.size() == 8);
  CHECK(c.tasks[7].task_id == "t8");
  CHECK(c.task_counts == std::vector<int>{2, 3, 4, 5, 6, 7, 8});
  CHECK(c.regimes.size() == 3);
  CHECK(c.defense_modes.size() == 4);
  CHECK_FALSE(c.sample_k.has_value());
  CHECK(c.transport.kappa == 1.0);
  CHECK(c.lambda_mode == LambdaMode::table);
  CHECK(c.finetune_freeze_tags.empty());
  CHECK(c.channel.num_rx == 16);
  CHECK(c.analysis.beta == 0.05);
}

TEST_CASE("fields are read from every section") {
  const ExperimentConfig c = parse_config(R"({
  "config_version": 1,
  "model": {"embed_dim": 16, "num_heads": 2},
  "finetune": {"iterations": 12, "optimizer": "sgd", "freeze_tags": ["patch_embed"]},
  "tasks": {"kinds": ["ring", "blobs"], "label_noise": 0.1},
  "channel": {"num_users": 2, "num_rx": 4},
  "transport": {"kappa": 0.5, "lambda_table": {"1": 1.0, "2": 0.3}, "lambda_mode": "sweep"},
  "defense": {"fewshot_per_class": 5, "freeze_tags": ["head"]},
  "regimes": ["worst_sum_rate"],
  "defense_modes": ["full", "none"],
  "task_counts": [2],
  "combinations": "sample:3",
  "seeds": [4, 5],
  "global_seed": 9,
  "analysis": {"beta": 0.1},
  "output_dir": "elsewhere"
})");
  CHECK(c.model.embed_dim == 16);
  CHECK(c.finetune.iterations == 12);
  CHECK(c.finetune.optimizer == Optimizer::sgd);
  CHECK(c.finetune_freeze_tags == std::set<GroupTag>{GroupTag::patch_embed});
  REQUIRE(c.tasks.size() == 2);
  CHECK(c.tasks[0].generator_kind == GeneratorKind::ring);
  CHECK(c.tasks[1].label_noise == 0.1);
  CHECK(c.transport.kappa == 0.5);
  CHECK(c.transport.lambda_for(2) == 0.3);
  CHECK(c.lambda_mode == LambdaMode::sweep);
  CHECK(c.defense.freeze_tags == std::set<GroupTag>{GroupTag::head});
  CHECK(c.regimes == std::vector<NoiseKind>{NoiseKind::worst_sum_rate});
  CHECK(c.defense_modes == std::vector<DefenseMode>{DefenseMode::full, DefenseMode::none});
  CHECK(c.sample_k == 3);
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.global_seed == 9);
  CHECK(c.analysis.beta == 0.1);
  CHECK(c.output_dir == "elsewhere");
}

TEST_CASE("dump and parse round-trip") {
  ExperimentConfig c = parse_config(R"({"config_version": 1, "seeds": [1, 2, 3], "combinations": "sample:2",
                                       "transport": {"kappa": 3.5}})");
  const std::string text = dump_config(c);
  CHECK(dump_config(parse_config(text)) == text);
}

TEST_CASE("errors name the offending line") {
  const std::string unknown = error_of("{\n  \"config_version\": 1,\n  \"modle\": {}\n}");
  CHECK(contains(unknown, "line 3"));
  CHECK(contains(unknown, "modle"));
  const std::string nested = error_of("{\n  \"config_version\": 1,\n  \"model\": {\n    \"embed_dim\": \"wide\"\n  }\n}");
  CHECK(contains(nested, "line 4"));
  const std::string kind = error_of("{\"config_version\": 1,\n\"regimes\": [\"ideal\",\n \"loud\"]}");
  CHECK(contains(kind, "line 3"));
  CHECK(contains(error_of("{\"config_version\": 1,\n\"combinations\": \"some\"}"), "line 2"));
  CHECK(contains(error_of("{\"config_version\": 1,\n\n  \"seeds\": [1,"), "line 3"));
}

TEST_CASE("missing or wrong version is rejected") {
  CHECK(contains(error_of(R"({"seeds": [1]})"), "config_version"));
  CHECK(contains(error_of(R"({"config_version": 2})"), "unsupported"));
  CHECK_THROWS_AS(parse_config("[1, 2]"), InvalidArgumentError);
}

TEST_CASE("load_config reads files and reports missing ones") {
  const auto dir = std::filesystem::temp_directory_path() / "taskfuse_test_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "c.json") << R"({"config_version": 1, "global_seed": 5})";
  }
  CHECK(load_config(dir / "c.json").global_seed == 5);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), IoError);
}

TEST_CASE("invariants are checked after parsing") {
  CHECK(contains(error_of(R"({"config_version": 1, "tasks": {"kinds": ["ring"]}})"), "one task per user"));
  CHECK(contains(error_of(R"({"config_version": 1, "channel": {"delta_reg": 0.5}})"), "delta_reg"));
  CHECK_THROWS_AS(parse_config(R"({"config_version": 1, "task_counts": []})"), InvalidArgumentError);
  CHECK_THROWS_AS(parse_config(R"({"config_version": 1, "transport": {"kappa": -1}})"), InvalidArgumentError);
}
