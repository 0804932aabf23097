// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "support.hpp"

#include "taskfuse/error.hpp"
#include "taskfuse/tinyvit.hpp"

using namespace taskfuse;
using tftest::tiny_model;

namespace {

ImageSet random_images(const ModelConfig& cfg, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageSet s;
  s.image_size = cfg.image_size;
  s.channels = cfg.channels;
  for (int i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < s.image_len(); ++k) s.pixels.push_back(u(rng));
    s.labels.push_back(static_cast<int>(rng() % static_cast<unsigned>(cfg.num_classes)));
    s.sample_ids.push_back(i);
  }
  return s;
}

// Plain scalar loops over the documented layout; shares no code with the
// library's matrix implementation.
std::vector<double> naive_forward(const ParameterSet& p, const ModelConfig& c, std::span<const double> img) {
  const int D = c.embed_dim, T = c.num_tokens(), P = c.patch_size, side = c.patches_per_side();
  const int pd = c.patch_dim(), H = c.num_heads, dh = D / H, M = c.mlp_dim;
  using Mat = std::vector<std::vector<double>>;
  Mat x(T, std::vector<double>(D));
  const auto& pe = p.at("patch_embed").values;
  const auto& pos = p.at("pos_embed").values;
  const auto& cls = p.at("class_embed").values;
  for (int j = 0; j < D; ++j) x[0][j] = cls[j] + pos[j];
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      const int tok = 1 + py * side + px;
      for (int j = 0; j < D; ++j) {
        double s = pe[pd * D + j];
        int k = 0;
        for (int dy = 0; dy < P; ++dy) {
          for (int dx = 0; dx < P; ++dx) {
            for (int ch = 0; ch < c.channels; ++ch, ++k) {
              s += img[((py * P + dy) * c.image_size + px * P + dx) * c.channels + ch] * pe[k * D + j];
            }
          }
        }
        x[tok][j] = s + pos[tok * D + j];
      }
    }
  }
  auto ln = [&](const std::vector<double>& v, const double* g, const double* b) {
    double mu = 0, var = 0;
    for (double e : v) mu += e;
    mu /= D;
    for (double e : v) var += (e - mu) * (e - mu);
    var /= D;
    std::vector<double> out(D);
    for (int j = 0; j < D; ++j) out[j] = (v[j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
    return out;
  };
  auto gelu = [](double v) {
    return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
  };
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    const double* n1 = p.at(pre + "norm1").values.data();
    const double* at = p.at(pre + "attn").values.data();
    const double* n2 = p.at(pre + "norm2").values.data();
    const double* mp = p.at(pre + "mlp").values.data();
    const double* wqkv = at;
    const double* bqkv = at + 3 * D * D;
    const double* wo = bqkv + 3 * D;
    const double* bo = wo + D * D;
    Mat qkv(T, std::vector<double>(3 * D));
    for (int t = 0; t < T; ++t) {
      const auto a = ln(x[t], n1, n1 + D);
      for (int o = 0; o < 3 * D; ++o) {
        double s = bqkv[o];
        for (int i = 0; i < D; ++i) s += a[i] * wqkv[i * 3 * D + o];
        qkv[t][o] = s;
      }
    }
    Mat att(T, std::vector<double>(D, 0.0));
    for (int h = 0; h < H; ++h) {
      for (int t = 0; t < T; ++t) {
        std::vector<double> w(T);
        double mx = -1e300;
        for (int u = 0; u < T; ++u) {
          double s = 0;
          for (int e = 0; e < dh; ++e) s += qkv[t][h * dh + e] * qkv[u][D + h * dh + e];
          w[u] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[u]);
        }
        double z = 0;
        for (double& e : w) z += (e = std::exp(e - mx));
        for (int u = 0; u < T; ++u) {
          for (int e = 0; e < dh; ++e) att[t][h * dh + e] += w[u] / z * qkv[u][2 * D + h * dh + e];
        }
      }
    }
    for (int t = 0; t < T; ++t) {
      for (int j = 0; j < D; ++j) {
        double s = bo[j];
        for (int i = 0; i < D; ++i) s += att[t][i] * wo[i * D + j];
        x[t][j] += s;
      }
      const auto b = ln(x[t], n2, n2 + D);
      std::vector<double> g(M);
      for (int m = 0; m < M; ++m) {
        double s = mp[D * M + m];
        for (int i = 0; i < D; ++i) s += b[i] * mp[i * M + m];
        g[m] = gelu(s);
      }
      for (int j = 0; j < D; ++j) {
        double s = mp[2 * D * M + M + j];
        for (int m = 0; m < M; ++m) s += g[m] * mp[D * M + M + m * D + j];
        x[t][j] += s;
      }
    }
  }
  const double* fn = p.at("final_norm").values.data();
  const auto f = ln(x[0], fn, fn + D);
  const auto& hd = p.at("head").values;
  std::vector<double> logits(c.num_classes);
  for (int k = 0; k < c.num_classes; ++k) {
    double s = hd[D * c.num_classes + k];
    for (int i = 0; i < D; ++i) s += f[i] * hd[i * c.num_classes + k];
    logits[k] = s;
  }
  return logits;
}

double loss_of(const ParameterSet& p, const ModelConfig& c, const ImageSet& b) {
  return loss_and_grad(p, c, b).loss;
}

}  // namespace

TEST_CASE("group layout follows the documented order") {
  const ModelConfig c = tiny_model();
  const ParameterSet p = init_model(c);
  CHECK(p.group_count() == static_cast<std::size_t>(3 + 4 * c.num_layers + 2));
  CHECK(p.groups()[0].name == "patch_embed");
  CHECK(p.groups()[0].tag == GroupTag::patch_embed);
  CHECK(p.groups()[1].tag == GroupTag::pos_embed);
  CHECK(p.groups()[2].tag == GroupTag::class_embed);
  CHECK(p.groups().back().tag == GroupTag::head);
  CHECK(p.config_hash() == c.hash());
  CHECK(init_model(c) == p);
}

TEST_CASE("forward matches the scalar-loop oracle") {
  ModelConfig c = tiny_model();
  c.num_layers = 2;
  ParameterSet p = init_model(c);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01(0.0, 0.3);
  for (auto& g : p.groups()) {
    for (double& v : g.values) v += n01(rng);
  }
  const ImageSet x = random_images(c, 3, 11);
  const Logits z = forward(p, c, x);
  REQUIRE(z.rows() == 3);
  REQUIRE(z.cols() == c.num_classes);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto ref = naive_forward(p, c, x.image(i));
    for (int k = 0; k < c.num_classes; ++k) CHECK(z(static_cast<Eigen::Index>(i), k) == doctest::Approx(ref[k]).epsilon(1e-10));
  }
}

TEST_CASE("gradients match central finite differences") {
  const ModelConfig c = tiny_model();
  ParameterSet p = init_model(c);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01(0.0, 0.2);
  for (auto& g : p.groups()) {
    for (double& v : g.values) v += n01(rng);
  }
  const ImageSet x = random_images(c, 1, 21);
  const LossAndGrad lg = loss_and_grad(p, c, x);
  const double h = 1e-5;
  for (std::size_t gi = 0; gi < p.groups().size(); ++gi) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < p.groups()[gi].values.size(); ++k) {
      ParameterSet plus = p, minus = p;
      plus.groups()[gi].values[k] += h;
      minus.groups()[gi].values[k] -= h;
      const double fd = (loss_of(plus, c, x) - loss_of(minus, c, x)) / (2 * h);
      const double an = lg.grad.groups()[gi].values[k];
      num += (fd - an) * (fd - an);
      den += fd * fd;
    }
    INFO("group " << p.groups()[gi].name);
    CHECK(std::sqrt(num) <= 1e-4 * std::max(std::sqrt(den), 1e-8));
  }
}

TEST_CASE("loss is nonnegative and mask_gradient zeroes frozen groups") {
  const ModelConfig c = tiny_model();
  const ParameterSet p = init_model(c);
  LossAndGrad lg = loss_and_grad(p, c, random_images(c, 4, 1));
  CHECK(lg.loss >= 0.0);
  mask_gradient(lg.grad, {GroupTag::attention, GroupTag::head});
  for (const auto& g : lg.grad.groups()) {
    if (g.tag == GroupTag::attention || g.tag == GroupTag::head) {
      for (double v : g.values) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("finetune respects frozen groups and zero iterations") {
  const ModelConfig c = tiny_model();
  const ParameterSet p = init_model(c);
  const ImageSet data = random_images(c, 16, 2);
  TrainSpec spec;
  spec.iterations = 0;
  CHECK(finetune(p, c, data, spec, {}) == p);

  spec.iterations = 10;
  spec.batch_size = 4;
  const std::set<GroupTag> frozen{GroupTag::pos_embed, GroupTag::norm};
  const ParameterSet q = finetune(p, c, data, spec, frozen);
  for (std::size_t i = 0; i < p.groups().size(); ++i) {
    if (frozen.contains(p.groups()[i].tag)) CHECK(q.groups()[i].values == p.groups()[i].values);
  }
  CHECK_FALSE(q == p);
  const std::set<GroupTag> all(all_group_tags().begin(), all_group_tags().end());
  CHECK(finetune(p, c, data, spec, all) == p);
  CHECK(finetune(p, c, data, spec, {}) == finetune(p, c, data, spec, {}));
  CHECK_THROWS_AS(finetune(p, c, ImageSet{}, spec, {}), InvalidArgumentError);
}

TEST_CASE("training reaches high accuracy on a separable two-class task") {
  ModelConfig c = tiny_model();
  c.num_classes = 2;
  // Class 0: bright left half, class 1: bright right half, plus noise.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.3);
  ImageSet data;
  data.image_size = c.image_size;
  for (int i = 0; i < 64; ++i) {
    const int y = i % 2;
    for (int r = 0; r < c.image_size; ++r) {
      for (int col = 0; col < c.image_size; ++col) {
        const bool left = col < c.image_size / 2;
        data.pixels.push_back((left == (y == 0) ? 1.0 : 0.0) + noise(rng));
      }
    }
    data.labels.push_back(y);
    data.sample_ids.push_back(i);
  }
  TrainSpec spec;
  spec.iterations = 300;
  spec.batch_size = 16;
  std::vector<double> trace;
  const ParameterSet p = finetune(init_model(c), c, data, spec, {}, &trace);
  CHECK(evaluate(p, c, data) >= 0.95);
  REQUIRE(trace.size() == 300);
  const double head = std::accumulate(trace.begin(), trace.begin() + 20, 0.0);
  const double tail = std::accumulate(trace.end() - 20, trace.end(), 0.0);
  CHECK(tail < head);
}

TEST_CASE("argmax ties go to the lowest class and evaluate counts correct rows") {
  Logits z(3, 3);
  z << 1, 1, 0,  //
      0, 2, 2,   //
      -1, -3, -2;
  CHECK(argmax_rows(z) == std::vector<int>{0, 1, 0});

  const ModelConfig c = tiny_model();
  const ParameterSet p = init_model(c);
  const ImageSet x = random_images(c, 20, 8);
  const auto pred = predict(p, c, x);
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == x.labels[i] ? 1 : 0;
  CHECK(evaluate(p, c, x) == doctest::Approx(hits / 20.0));
}

TEST_CASE("geometry and config mismatches are rejected") {
  const ModelConfig c = tiny_model();
  const ParameterSet p = init_model(c);
  ModelConfig other = c;
  other.image_size = 16;
  CHECK_THROWS_AS(forward(p, c, random_images(other, 1, 1)), InvalidArgumentError);
  other = c;
  other.mlp_dim = 12;
  CHECK_THROWS_AS(forward(p, other, random_images(c, 1, 1)), IncompatibleError);
  ModelConfig bad = c;
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), InvalidArgumentError);
  ParameterSet nan = p;
  nan.groups()[3].values[0] = std::nan("");
  CHECK_THROWS_AS(forward(nan, c, random_images(c, 1, 1)), NumericalError);
}

TEST_CASE("image sets subset and append") {
  const ModelConfig c = tiny_model();
  ImageSet a = random_images(c, 5, 1);
  const std::vector<std::size_t> rows{4, 0};
  const ImageSet s = a.subset(rows);
  REQUIRE(s.size() == 2);
  CHECK(s.labels[0] == a.labels[4]);
  CHECK(std::equal(s.image(1).begin(), s.image(1).end(), a.image(0).begin()));
  const std::size_t before = a.size();
  a.append(s);
  CHECK(a.size() == before + 2);
  CHECK(std::equal(a.image(5).begin(), a.image(5).end(), s.image(0).begin()));
}
