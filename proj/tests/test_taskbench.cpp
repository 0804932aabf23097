// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <set>

#include "doctest.h"
#include "support.hpp"

#include "taskfuse/error.hpp"
#include "taskfuse/taskbench.hpp"

using namespace taskfuse;
using tftest::tiny_model;
using tftest::tiny_task;

TEST_CASE("generator kinds round-trip through their names") {
  for (GeneratorKind k : all_generator_kinds()) CHECK(parse_generator_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_generator_kind("plaid"), InvalidArgumentError);
}

TEST_CASE("splits have the documented sizes, labels and index ranges") {
  const ModelConfig m = tiny_model();
  for (GeneratorKind k : all_generator_kinds()) {
    const TaskSpec s = tiny_task("t1", k, 7);
    const TaskData d = generate_task(s, m);
    CHECK(d.train.size() == 128);
    CHECK(d.test.size() == 64);
    CHECK(d.fewshot.size() == 40);
    CHECK(d.train.sample_ids.front() == 0);
    CHECK(d.test.sample_ids.front() == 128);
    CHECK(d.fewshot.sample_ids.front() == 192);
    for (std::size_t i = 0; i < d.test.size(); ++i) CHECK(d.test.labels[i] == d.test.sample_ids[i] % 4);
    CHECK(d.train.image_size == m.image_size);
    CHECK(generate_task(s, m) == d);
  }
}

TEST_CASE("label noise leaves test labels clean") {
  const ModelConfig m = tiny_model();
  TaskSpec s = tiny_task("t1", GeneratorKind::blobs, 3);
  s.label_noise = 0.4;
  const TaskData d = generate_task(s, m);
  int flipped = 0;
  for (std::size_t i = 0; i < d.train.size(); ++i) flipped += d.train.labels[i] != d.train.sample_ids[i] % 4 ? 1 : 0;
  CHECK(flipped > 0);
  for (std::size_t i = 0; i < d.test.size(); ++i) CHECK(d.test.labels[i] == d.test.sample_ids[i] % 4);
}

TEST_CASE("different seeds give different images") {
  const ModelConfig m = tiny_model();
  CHECK_FALSE(generate_task(tiny_task("a", GeneratorKind::ring, 1), m).train.pixels ==
              generate_task(tiny_task("a", GeneratorKind::ring, 2), m).train.pixels);
}

TEST_CASE("fewshot_prefix takes the first items of every class") {
  const ModelConfig m = tiny_model();
  const TaskData d = generate_task(tiny_task("t", GeneratorKind::stripes, 5), m);
  const ImageSet p = fewshot_prefix(d.fewshot, 4, 3);
  REQUIRE(p.size() == 12);
  // Fewshot items cycle through the classes, so the prefix is the first 12.
  for (std::size_t i = 0; i < 12; ++i) CHECK(p.sample_ids[i] == d.fewshot.sample_ids[i]);
  CHECK_THROWS_AS(fewshot_prefix(d.fewshot, 4, 11), InvalidArgumentError);
  CHECK_THROWS_AS(fewshot_prefix(d.fewshot, 4, 0), InvalidArgumentError);
}

TEST_CASE("rotation pretext rotates counter-clockwise by the running index") {
  const ModelConfig m = tiny_model();
  std::vector<TaskData> tasks{generate_task(tiny_task("a", GeneratorKind::corner, 1), m),
                              generate_task(tiny_task("b", GeneratorKind::diag, 2), m)};
  const ImageSet r = rotation_pretext(tasks, 3);
  REQUIRE(r.size() == 6);
  const int n = m.image_size;
  for (std::size_t j = 0; j < r.size(); ++j) {
    const auto& src = tasks[j / 3].train.image(j % 3);
    const auto out = r.image(j);
    const int k = static_cast<int>(j % 4);
    CHECK(r.labels[j] == k);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        int sy = y, sx = x;
        if (k == 1) sy = x, sx = n - 1 - y;
        if (k == 2) sy = n - 1 - y, sx = n - 1 - x;
        if (k == 3) sy = n - 1 - x, sx = y;
        CHECK(out[static_cast<std::size_t>(y * n + x)] == src[static_cast<std::size_t>(sy * n + sx)]);
      }
    }
  }
  CHECK_THROWS_AS(rotation_pretext(tasks, 1000), InvalidArgumentError);
}

TEST_CASE("similarity knob at full overlap reproduces the first task's images") {
  const ModelConfig m = tiny_model();
  const TaskSpec a = tiny_task("a", GeneratorKind::checker, 11);
  const TaskSpec b = tiny_task("b", GeneratorKind::gradient, 12);
  const auto [a1, b1] = task_similarity_knob(a, b, 1.0);
  CHECK(generate_task(b1, m).train.pixels == generate_task(a1, m).train.pixels);
  const auto [a0, b0] = task_similarity_knob(a, b, 0.0);
  CHECK(generate_task(b0, m).train.pixels == generate_task(b, m).train.pixels);
  CHECK_THROWS_AS(task_similarity_knob(a, b, 1.5), InvalidArgumentError);
}

TEST_CASE("default specs cover every generator with ids t1..t8") {
  const auto specs = default_task_specs(4);
  REQUIRE(specs.size() == 8);
  std::set<GeneratorKind> kinds;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(specs[i].task_id == "t" + std::to_string(i + 1));
    kinds.insert(specs[i].generator_kind);
  }
  CHECK(kinds.size() == 8);
  CHECK_THROWS_AS(default_task_specs(4, 9), InvalidArgumentError);
}

TEST_CASE("dataset files round-trip") {
  const ModelConfig m = tiny_model();
  const auto dir = std::filesystem::temp_directory_path() / "taskfuse_test_taskbench";
  const TaskData d = generate_task(tiny_task("t3", GeneratorKind::noise_texture, 9), m);
  save_task_data(dir, d);
  CHECK(load_task_data(dir, "t3") == d);
  CHECK_THROWS_AS(load_task_data(dir, "t9"), IoError);
}
