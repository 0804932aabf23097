// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "taskfuse/checkpoint.hpp"
#include "taskfuse/error.hpp"
#include "taskfuse/params.hpp"

using namespace taskfuse;

namespace {

ParameterSet make_set(double offset, const std::string& hash = "h") {
  ParameterSet p(hash);
  p.add_group("emb", GroupTag::patch_embed, {1.0 + offset, 2.0 + offset});
  p.add_group("att", GroupTag::attention, {3.0 + offset, -4.0 + offset, 0.5 + offset});
  p.add_group("hd", GroupTag::head, {offset});
  return p;
}

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "taskfuse_test_params";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("group tags round-trip through their names") {
  for (GroupTag t : all_group_tags()) CHECK(parse_group_tag(to_string(t)) == t);
  CHECK_THROWS_AS(parse_group_tag("bogus"), InvalidArgumentError);
}

TEST_CASE("parameter sets reject duplicate names and missing lookups") {
  ParameterSet p = make_set(0.0);
  CHECK_THROWS_AS(p.add_group("emb", GroupTag::norm, {1.0}), InvalidArgumentError);
  CHECK_THROWS_AS(p.at("nope"), InvalidArgumentError);
  CHECK(p.find("nope") == nullptr);
  CHECK(p.total_dim() == 6);
}

TEST_CASE("task vector is the elementwise difference") {
  const ParameterSet base = make_set(0.0);
  ParameterSet fine = make_set(0.0);
  fine.groups()[1].values[2] = 7.25;
  const TaskVector tv = compute_task_vector(fine, base, "t1", 1);
  const auto f = flatten(fine), b = flatten(base), d = flatten(tv.delta);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == f[i] - b[i]);
  CHECK_FALSE(tv.is_perturbed);
}

TEST_CASE("incompatible sets are detected") {
  CHECK_FALSE(incompatibility(make_set(0.0), make_set(1.0)).has_value());
  CHECK(incompatibility(make_set(0.0, "a"), make_set(0.0, "b")).has_value());
  ParameterSet shorter("h");
  shorter.add_group("emb", GroupTag::patch_embed, {1.0});
  CHECK(incompatibility(make_set(0.0), shorter).has_value());
  CHECK_THROWS_AS(compute_task_vector(make_set(0.0), shorter), IncompatibleError);
}

TEST_CASE("add_scaled matches a manual loop in source-user order") {
  const ParameterSet base = make_set(0.0);
  std::vector<TaskVector> v;
  for (int u : {3, 1, 2}) v.push_back(compute_task_vector(make_set(0.1 * u + 1e-17 * u), base, "t", u));
  const ParameterSet got = add_scaled(base, v, 0.4);

  auto flat_base = flatten(base);
  for (std::size_t i = 0; i < flat_base.size(); ++i) {
    double s = 0.0;
    for (int u : {1, 2, 3}) {
      for (const auto& tv : v) {
        if (tv.source_user == u) s += flatten(tv.delta)[i];
      }
    }
    CHECK(flatten(got)[i] == flat_base[i] + 0.4 * s);
  }
  std::vector<TaskVector> rev(v.rbegin(), v.rend());
  CHECK(add_scaled(base, rev, 0.4) == got);
  CHECK_THROWS_AS(add_scaled(base, v, 1.5), InvalidArgumentError);
  CHECK_THROWS_AS(add_scaled(base, {}, 0.5), InvalidArgumentError);
}

TEST_CASE("flatten and unflatten are inverse") {
  const ParameterSet p = make_set(0.3);
  const auto flat = flatten(p);
  CHECK(unflatten(p, flat) == p);
  CHECK_THROWS_AS(unflatten(p, std::vector<double>(3, 0.0)), InvalidArgumentError);
}

TEST_CASE("group_select keeps tagged groups in order") {
  const ParameterSet p = make_set(0.0);
  const ParameterSet s = group_select(p, std::set<GroupTag>{GroupTag::head, GroupTag::patch_embed});
  REQUIRE(s.group_count() == 2);
  CHECK(s.groups()[0].name == "emb");
  CHECK(s.groups()[1].name == "hd");
  CHECK(group_select(p, std::set<std::string>{"attention"}).groups()[0].name == "att");
}

TEST_CASE("cosine similarity and norms agree with hand computation") {
  const ParameterSet base = zeros_like(make_set(0.0));
  const TaskVector a = compute_task_vector(make_set(0.0), base);
  const TaskVector b = compute_task_vector(make_set(1.0), base);
  const auto x = flatten(a.delta), y = flatten(b.delta);
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  CHECK(dot(a.delta, b.delta) == doctest::Approx(xy).epsilon(1e-14));
  CHECK(squared_norm(a.delta) == doctest::Approx(xx).epsilon(1e-14));
  CHECK(cosine_similarity(a, b) == doctest::Approx(xy / std::sqrt(xx * yy)).epsilon(1e-14));
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_similarity(a, compute_task_vector(base, base)), DegenerateInputError);
}

TEST_CASE("binary64 little-endian encoding") {
  std::vector<std::uint8_t> out;
  append_f64_le(out, std::vector<double>{1.0, -2.0});
  const std::vector<std::uint8_t> expect{0, 0, 0, 0, 0, 0, 0xF0, 0x3F, 0, 0, 0, 0, 0, 0, 0, 0xC0};
  CHECK(out == expect);
  CHECK(read_f64_le(out) == std::vector<double>{1.0, -2.0});
  out.pop_back();
  CHECK_THROWS_AS(read_f64_le(out), IoError);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const auto dir = temp_dir();
  ParameterSet p = make_set(0.1);
  p.groups()[0].values[0] = std::nextafter(1.0, 2.0);
  save_checkpoint(dir / "p.tfckpt", p);
  CHECK(load_checkpoint(dir / "p.tfckpt") == p);

  TaskVector tv = compute_task_vector(p, make_set(0.0), "t4", 4);
  tv.is_perturbed = true;
  tv.noise_variance_used = 0.125;
  save_task_vector(dir / "t.tfvec", tv);
  const TaskVector back = load_task_vector(dir / "t.tfvec");
  CHECK(back.delta == tv.delta);
  CHECK(back.task_id == "t4");
  CHECK(back.source_user == 4);
  CHECK(back.is_perturbed);
  CHECK(back.noise_variance_used == 0.125);
  CHECK_THROWS_AS(load_task_vector(dir / "p.tfckpt"), IoError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = temp_dir();
  save_checkpoint(dir / "c.tfckpt", make_set(0.0));
  {
    std::fstream f(dir / "c.tfckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "c.tfckpt"), IoError);

  save_checkpoint(dir / "d.tfckpt", make_set(0.0));
  const auto size = std::filesystem::file_size(dir / "d.tfckpt");
  std::filesystem::resize_file(dir / "d.tfckpt", size - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "d.tfckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.tfckpt"), IoError);
}
