// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"

#include "taskfuse/analysis.hpp"
#include "taskfuse/error.hpp"
#include "taskfuse/taskbench.hpp"

using namespace taskfuse;
using tftest::tiny_model;
using tftest::tiny_task;

namespace {

ParameterSet random_like(const ParameterSet& p, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  ParameterSet out = zeros_like(p);
  for (auto& g : out.groups()) {
    for (double& v : g.values) v = n(rng);
  }
  return out;
}

struct Fixture {
  ModelConfig m = tiny_model();
  ParameterSet base = init_model(m);
  std::vector<TaskVector> vectors;
  std::vector<ImageSet> data;

  Fixture() {
    for (int i = 0; i < 3; ++i) {
      const std::string id = "t" + std::to_string(i + 1);
      vectors.push_back(compute_task_vector(offset(base, random_like(base, 0.3, 10 + i), 1.0), base, id, i + 1));
      data.push_back(generate_task(tiny_task(id, all_generator_kinds()[static_cast<std::size_t>(i)], 20 + i), m).test);
    }
  }
};

}  // namespace

TEST_CASE("WDE counts disagreements between single and joint models") {
  const Fixture f;
  const std::vector<double> single{0.9, 0.5, 0.7};
  const WdeReport r = wde(f.base, f.vectors, single, 0.4, f.data, f.m);
  const ParameterSet joint = add_scaled(f.base, f.vectors, 0.4);
  double xi = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const ParameterSet alone = add_scaled(f.base, {f.vectors[i]}, single[i]);
    const Logits a = forward(alone, f.m, f.data[i]);
    const Logits b = forward(joint, f.m, f.data[i]);
    int differ = 0;
    for (Eigen::Index k = 0; k < a.rows(); ++k) {
      Eigen::Index ia = 0, ib = 0;
      a.row(k).maxCoeff(&ia);
      b.row(k).maxCoeff(&ib);
      differ += ia != ib ? 1 : 0;
    }
    const double rate = differ / static_cast<double>(a.rows());
    CHECK(r.per_task_disagreement[i] == doctest::Approx(rate));
    CHECK(r.sample_counts[i] == static_cast<std::size_t>(a.rows()));
    xi += rate;
  }
  CHECK(r.xi == doctest::Approx(xi));
  CHECK(r.xi <= 3.0);
  CHECK_THROWS_AS(wde(f.base, f.vectors, {0.5}, 0.4, f.data, f.m), InvalidArgumentError);
}

TEST_CASE("a single task at the joint lambda has zero WDE") {
  const Fixture f;
  const WdeReport r = wde(f.base, {f.vectors[0]}, {0.6}, 0.6, {f.data[0]}, f.m);
  CHECK(r.xi == 0.0);
}

TEST_CASE("identical models give unit logit ratios") {
  const Fixture f;
  const auto rs = logit_ratios(f.m, f.base, f.base, f.data[0]);
  REQUIRE(rs.size() == f.data[0].size());
  for (const auto& s : rs) {
    CHECK(s.ratio == 1.0);
    CHECK(s.per_class.size() == 4);
  }
  CHECK(logit_ratio(f.m, f.base, f.base, f.data[0].subset(std::vector<std::size_t>{3})) == 1.0);
  CHECK_THROWS_AS(logit_ratio(f.m, f.base, f.base, f.data[0]), InvalidArgumentError);
}

TEST_CASE("logit ratio is z_u over z_d at the undisturbed argmax") {
  const Fixture f;
  const ParameterSet d = offset(f.base, random_like(f.base, 0.05, 4), 1.0);
  const ImageSet x = f.data[1].subset(std::vector<std::size_t>{0, 1, 2, 3, 4});
  const Logits zu = forward(f.base, f.m, x), zd = forward(d, f.m, x);
  const auto rs = logit_ratios(f.m, f.base, d, x);
  for (Eigen::Index i = 0; i < zu.rows(); ++i) {
    Eigen::Index c = 0;
    zu.row(i).maxCoeff(&c);
    CHECK(rs[static_cast<std::size_t>(i)].cls == c);
    CHECK(rs[static_cast<std::size_t>(i)].ratio == doctest::Approx(zu(i, c) / zd(i, c)));
  }
}

TEST_CASE("linearization error shrinks quadratically with the offset") {
  const Fixture f;
  const ParameterSet delta = random_like(f.base, 0.02, 5);
  const ImageSet x = f.data[2].subset(std::vector<std::size_t>{0, 1, 2, 3});
  const double e1 = taylor_check(f.m, f.base, delta, x).error();
  const double e2 = taylor_check(f.m, f.base, offset(zeros_like(delta), delta, 0.5), x).error();
  CHECK(e1 > 0.0);
  CHECK(e1 / e2 >= 2.5);
  CHECK(e1 / e2 <= 6.0);
}

TEST_CASE("normal quantile and threshold") {
  CHECK(z_beta(0.05) == doctest::Approx(1.6448536269514722).epsilon(1e-14));
  CHECK(z_beta(0.5) == doctest::Approx(0.0).scale(1.0));
  CHECK(threshold(0.05, 4.0) == doctest::Approx(2.0 * 1.6448536269514722));
  CHECK(variance_of_ratio(0.5, 3.0) == 1.5);
  CHECK_THROWS_AS(z_beta(0.0), InvalidArgumentError);
  CHECK_THROWS_AS(threshold(0.05, -1.0), InvalidArgumentError);
  CHECK_THROWS_AS(variance_of_ratio(-0.1, 1.0), InvalidArgumentError);
}

TEST_CASE("hypothesis test rejects strictly outside the band") {
  const HypothesisResult r = run_hypothesis_test({1.0, 1.1, 0.8, 1.25, 0.7}, 0.2);
  // |R - 1| = 0, 0.1, 0.2, 0.25, 0.3: two lie strictly beyond 0.2.
  CHECK(r.reject_rate == doctest::Approx(0.4));
  CHECK(run_hypothesis_test({1.0, 1.0}, 0.0).reject_rate == 0.0);
  CHECK_THROWS_AS(run_hypothesis_test({}, 0.1), InvalidArgumentError);
  CHECK_THROWS_AS(run_hypothesis_test({1.0}, -0.1), InvalidArgumentError);
}

TEST_CASE("ratio sensitivity matches a coordinate-wise Jacobian") {
  const Fixture f;
  const ImageSet x = f.data[0].subset(std::vector<std::size_t>{5});
  const Logits z0 = forward(f.base, f.m, x);
  Eigen::Index c = 0;
  z0.row(0).maxCoeff(&c);
  // ||J_c||^2 from one central difference per coordinate.
  double j2 = 0.0;
  const double h = 1e-5;
  ParameterSet p = f.base;
  for (auto& g : p.groups()) {
    for (double& v : g.values) {
      const double keep = v;
      v = keep + h;
      const double up = forward(p, f.m, x)(0, c);
      v = keep - h;
      const double dn = forward(p, f.m, x)(0, c);
      v = keep;
      const double d = (up - dn) / (2 * h);
      j2 += d * d;
    }
  }
  const double oracle = 0.3 * j2 / (z0(0, c) * z0(0, c));
  const double est = ratio_sensitivity(f.m, f.base, x, 0.3, 600, 1);
  CHECK(est == doctest::Approx(oracle).epsilon(0.15));
  CHECK(ratio_sensitivity(f.m, f.base, x, 0.3, 20, 2) == ratio_sensitivity(f.m, f.base, x, 0.3, 20, 2));
  CHECK_THROWS_AS(ratio_sensitivity(f.m, f.base, x, 0.3, 0, 1), InvalidArgumentError);
}

TEST_CASE("cosine matrix and off-diagonal statistics") {
  ParameterSet z("h");
  z.add_group("w", GroupTag::mlp, {0.0, 0.0, 0.0});
  auto vec = [&](std::vector<double> v) {
    ParameterSet p("h");
    p.add_group("w", GroupTag::mlp, std::move(v));
    return compute_task_vector(p, z);
  };
  const std::vector<TaskVector> vs{vec({1, 0, 0}), vec({0, 2, 0}), vec({1, 1, 0})};
  const Eigen::MatrixXd m = cosine_matrix(vs);
  CHECK(m(0, 1) == doctest::Approx(0.0));
  CHECK(m(0, 2) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(m(2, 1) == m(1, 2));
  CHECK(m.diagonal().isOnes());
  const OffDiagonal s = off_diagonal_stats(m);
  CHECK(s.mean == doctest::Approx(2.0 / std::sqrt(2.0) / 3.0));
  CHECK(s.max == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK_THROWS_AS(cosine_matrix({vs[0]}), InvalidArgumentError);
}
