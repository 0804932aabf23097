// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/tinyvit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "taskfuse/error.hpp"
#include "taskfuse/rng.hpp"

namespace taskfuse {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using CVec = Eigen::Map<const Eigen::RowVectorXd>;
using MVec = Eigen::Map<Eigen::RowVectorXd>;

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

std::string layer_name(int l, const char* part) {
  return "layer" + std::to_string(l) + "." + part;
}

// Read-only views of one layer's weights inside a ParameterSet.
struct LayerView {
  CVec g1, b1;
  CMap wqkv;
  CVec bqkv;
  CMap wo;
  CVec bo;
  CVec g2, b2;
  CMap w1;
  CVec bm1;
  CMap w2;
  CVec bm2;
};

struct LayerGrad {
  MVec g1, b1;
  MMap wqkv;
  MVec bqkv;
  MMap wo;
  MVec bo;
  MVec g2, b2;
  MMap w1;
  MVec bm1;
  MMap w2;
  MVec bm2;
};

template <typename P, typename V, typename M>
auto layer_views(P& params, const ModelConfig& cfg, int l) {
  const int d = cfg.embed_dim;
  const int m = cfg.mlp_dim;
  auto* n1 = params.at(layer_name(l, "norm1")).values.data();
  auto* at = params.at(layer_name(l, "attn")).values.data();
  auto* n2 = params.at(layer_name(l, "norm2")).values.data();
  auto* mp = params.at(layer_name(l, "mlp")).values.data();
  return std::make_tuple(V(n1, d), V(n1 + d, d), M(at, d, 3 * d), V(at + 3 * d * d, 3 * d),
                         M(at + 3 * d * d + 3 * d, d, d), V(at + 4 * d * d + 3 * d, d), V(n2, d),
                         V(n2 + d, d), M(mp, d, m), V(mp + d * m, m), M(mp + d * m + m, m, d),
                         V(mp + 2 * d * m + m, d));
}

LayerView view_layer(const ParameterSet& p, const ModelConfig& cfg, int l) {
  auto t = layer_views<const ParameterSet, CVec, CMap>(p, cfg, l);
  return std::make_from_tuple<LayerView>(t);
}

LayerGrad view_layer_grad(ParameterSet& p, const ModelConfig& cfg, int l) {
  auto t = layer_views<ParameterSet, MVec, MMap>(p, cfg, l);
  return std::make_from_tuple<LayerGrad>(t);
}

struct LnCache {
  RowMat xhat;
  Eigen::VectorXd rstd;
};

RowMat layer_norm(const RowMat& x, const CVec& gamma, const CVec& beta, LnCache& cache) {
  const auto rows = x.rows();
  const auto d = static_cast<double>(x.cols());
  cache.xhat.resize(rows, x.cols());
  cache.rstd.resize(rows);
  RowMat y(rows, x.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd(r) = rstd;
    cache.xhat.row(r) = (x.row(r).array() - mean) * rstd;
    y.row(r) = cache.xhat.row(r).cwiseProduct(gamma) + beta;
  }
  return y;
}

RowMat layer_norm_backward(const RowMat& dy, const LnCache& cache, const CVec& gamma,
                           MVec& dgamma, MVec& dbeta) {
  const auto rows = dy.rows();
  const auto d = static_cast<double>(dy.cols());
  RowMat dx(rows, dy.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    dgamma += dy.row(r).cwiseProduct(cache.xhat.row(r));
    dbeta += dy.row(r);
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gamma);
    const double mean_dxhat = dxhat.sum() / d;
    const double mean_dxhat_xhat = dxhat.cwiseProduct(cache.xhat.row(r)).sum() / d;
    dx.row(r) = cache.rstd(r) *
                (dxhat.array() - mean_dxhat - cache.xhat.row(r).array() * mean_dxhat_xhat).matrix();
  }
  return dx;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

struct LayerCache {
  RowMat x_in;  // (n*T) x D
  LnCache ln1;
  RowMat a;    // ln1 output
  RowMat qkv;  // (n*T) x 3D
  std::vector<RowMat> probs;  // per (image, head): T x T
  RowMat o;    // concatenated head outputs
  RowMat x_mid;
  LnCache ln2;
  RowMat b;    // ln2 output
  RowMat h1;   // pre-activation
  RowMat g;    // gelu(h1)
};

struct ForwardCache {
  RowMat patches;  // (n*P) x patch_dim
  std::vector<LayerCache> layers;
  RowMat x_out;    // (n*T) x D
  LnCache final_ln;
  RowMat cls;      // n x D, final-norm output of class tokens
};

void check_geometry(const ModelConfig& cfg, const ImageSet& batch) {
  if (batch.image_size != cfg.image_size || batch.channels != cfg.channels) {
    throw InvalidArgumentError("batch geometry " + std::to_string(batch.image_size) + "x" +
                               std::to_string(batch.image_size) + "x" +
                               std::to_string(batch.channels) + " does not match model " +
                               std::to_string(cfg.image_size) + "x" +
                               std::to_string(cfg.image_size) + "x" +
                               std::to_string(cfg.channels));
  }
  if (batch.pixels.size() != batch.size() * batch.image_len()) {
    throw InvalidArgumentError("batch pixel buffer does not match its label count");
  }
}

void check_params(const ParameterSet& params, const ModelConfig& cfg) {
  if (params.config_hash() != cfg.hash()) {
    throw IncompatibleError("parameters belong to '" + params.config_hash() +
                            "', model is '" + cfg.hash() + "'");
  }
  for (const auto& g : params.groups()) {
    for (double v : g.values) {
      if (!std::isfinite(v)) throw NumericalError("non-finite parameter in group '" + g.name + "'");
    }
  }
}

RowMat extract_patches(const ModelConfig& cfg, const ImageSet& batch) {
  const int s = cfg.image_size, ps = cfg.patch_size, c = cfg.channels;
  const int side = cfg.patches_per_side();
  const int np = cfg.num_patches();
  RowMat out(static_cast<Eigen::Index>(batch.size()) * np, cfg.patch_dim());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double* img = batch.pixels.data() + i * batch.image_len();
    for (int py = 0; py < side; ++py) {
      for (int px = 0; px < side; ++px) {
        const auto row = static_cast<Eigen::Index>(i) * np + py * side + px;
        int k = 0;
        for (int dy = 0; dy < ps; ++dy) {
          for (int dx = 0; dx < ps; ++dx) {
            for (int ch = 0; ch < c; ++ch) {
              out(row, k++) = img[((py * ps + dy) * s + (px * ps + dx)) * c + ch];
            }
          }
        }
      }
    }
  }
  return out;
}

Logits run_forward(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& batch,
                   ForwardCache& cache) {
  const int d = cfg.embed_dim, t = cfg.num_tokens(), np = cfg.num_patches();
  const int nh = cfg.num_heads, dh = cfg.head_dim();
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const auto& pe = params.at("patch_embed").values;
  CMap wpe(pe.data(), cfg.patch_dim(), d);
  CVec bpe(pe.data() + cfg.patch_dim() * d, d);
  CMap pos(params.at("pos_embed").values.data(), t, d);
  CVec cls(params.at("class_embed").values.data(), d);

  cache.patches = extract_patches(cfg, batch);
  RowMat emb = cache.patches * wpe;
  emb.rowwise() += bpe;

  RowMat x(n * t, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i * t) = cls + pos.row(0);
    x.block(i * t + 1, 0, np, d) = emb.block(i * np, 0, np, d) + pos.bottomRows(np);
  }

  cache.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    auto& lc = cache.layers[static_cast<std::size_t>(l)];
    const LayerView w = view_layer(params, cfg, l);
    lc.x_in = x;
    lc.a = layer_norm(x, w.g1, w.b1, lc.ln1);
    lc.qkv = lc.a * w.wqkv;
    lc.qkv.rowwise() += w.bqkv;
    lc.o.resize(n * t, d);
    lc.probs.resize(static_cast<std::size_t>(n * nh));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int h = 0; h < nh; ++h) {
        const auto q = lc.qkv.block(i * t, h * dh, t, dh);
        const auto k = lc.qkv.block(i * t, d + h * dh, t, dh);
        const auto v = lc.qkv.block(i * t, 2 * d + h * dh, t, dh);
        RowMat s = q.lazyProduct(k.transpose()) * scale;
        for (Eigen::Index r = 0; r < t; ++r) {
          const double mx = s.row(r).maxCoeff();
          s.row(r) = (s.row(r).array() - mx).exp();
          s.row(r) /= s.row(r).sum();
        }
        lc.o.block(i * t, h * dh, t, dh) = s.lazyProduct(v);
        lc.probs[static_cast<std::size_t>(i * nh + h)] = std::move(s);
      }
    }
    RowMat y = lc.o * w.wo;
    y.rowwise() += w.bo;
    lc.x_mid = x + y;
    lc.b = layer_norm(lc.x_mid, w.g2, w.b2, lc.ln2);
    lc.h1 = lc.b * w.w1;
    lc.h1.rowwise() += w.bm1;
    lc.g = lc.h1.unaryExpr([](double v) { return gelu(v); });
    RowMat z = lc.g * w.w2;
    z.rowwise() += w.bm2;
    x = lc.x_mid + z;
  }
  cache.x_out = x;

  const auto& fn = params.at("final_norm").values;
  CVec gf(fn.data(), d), bf(fn.data() + d, d);
  RowMat cls_rows(n, d);
  for (Eigen::Index i = 0; i < n; ++i) cls_rows.row(i) = x.row(i * t);
  cache.cls = layer_norm(cls_rows, gf, bf, cache.final_ln);

  const auto& hd = params.at("head").values;
  CMap wh(hd.data(), d, cfg.num_classes);
  CVec bh(hd.data() + d * cfg.num_classes, cfg.num_classes);
  RowMat logits = cache.cls * wh;
  logits.rowwise() += bh;
  return Logits(logits);
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgumentError("invalid model config: " + what);
  };
  require(image_size > 0, "image_size must be positive");
  require(patch_size > 0, "patch_size must be positive");
  require(channels > 0, "channels must be positive");
  require(embed_dim > 0, "embed_dim must be positive");
  require(num_layers > 0, "num_layers must be positive");
  require(num_heads > 0, "num_heads must be positive");
  require(mlp_dim > 0, "mlp_dim must be positive");
  require(num_classes > 0, "num_classes must be positive");
  require(image_size % patch_size == 0, "image_size must be divisible by patch_size");
  require(embed_dim % num_heads == 0, "embed_dim must be divisible by num_heads");
}

std::string ModelConfig::hash() const {
  return "tinyvit-v1-s" + std::to_string(image_size) + "-p" + std::to_string(patch_size) + "-c" +
         std::to_string(channels) + "-d" + std::to_string(embed_dim) + "-l" +
         std::to_string(num_layers) + "-h" + std::to_string(num_heads) + "-m" +
         std::to_string(mlp_dim) + "-k" + std::to_string(num_classes);
}

ParameterSet init_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "tinyvit.init"));
  auto normal = [&](std::size_t count, double std) {
    std::normal_distribution<double> dist(0.0, std);
    std::vector<double> v(count);
    for (auto& x : v) x = dist(rng);
    return v;
  };
  auto concat = [](std::initializer_list<std::vector<double>> parts) {
    std::vector<double> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto m = static_cast<std::size_t>(cfg.mlp_dim);
  const auto pd = static_cast<std::size_t>(cfg.patch_dim());
  const auto k = static_cast<std::size_t>(cfg.num_classes);
  const auto t = static_cast<std::size_t>(cfg.num_tokens());
  const auto ones = std::vector<double>(d, 1.0);
  const auto zeros_d = std::vector<double>(d, 0.0);

  ParameterSet p(cfg.hash());
  p.add_group("patch_embed", GroupTag::patch_embed,
              concat({normal(pd * d, 1.0 / std::sqrt(double(pd))), zeros_d}));
  p.add_group("pos_embed", GroupTag::pos_embed, normal(t * d, 0.1));
  p.add_group("class_embed", GroupTag::class_embed, normal(d, 0.1));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const double sd = 1.0 / std::sqrt(double(d));
    p.add_group(layer_name(l, "norm1"), GroupTag::norm, concat({ones, zeros_d}));
    p.add_group(layer_name(l, "attn"), GroupTag::attention,
                concat({normal(3 * d * d, sd), std::vector<double>(3 * d, 0.0), normal(d * d, sd),
                        zeros_d}));
    p.add_group(layer_name(l, "norm2"), GroupTag::norm, concat({ones, zeros_d}));
    p.add_group(layer_name(l, "mlp"), GroupTag::mlp,
                concat({normal(d * m, sd), std::vector<double>(m, 0.0),
                        normal(m * d, 1.0 / std::sqrt(double(m))), zeros_d}));
  }
  p.add_group("final_norm", GroupTag::norm, concat({ones, zeros_d}));
  p.add_group("head", GroupTag::head,
              concat({normal(d * k, 1.0 / std::sqrt(double(d))), std::vector<double>(k, 0.0)}));
  return p;
}

Logits forward(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& batch) {
  check_params(params, cfg);
  check_geometry(cfg, batch);
  ForwardCache cache;
  return run_forward(params, cfg, batch, cache);
}

LossAndGrad loss_and_grad(const ParameterSet& params, const ModelConfig& cfg,
                          const ImageSet& batch) {
  check_params(params, cfg);
  check_geometry(cfg, batch);
  if (batch.empty()) throw InvalidArgumentError("loss_and_grad: empty batch");
  for (int y : batch.labels) {
    if (y < 0 || y >= cfg.num_classes) {
      throw InvalidArgumentError("label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(cfg.num_classes) + ")");
    }
  }

  const int d = cfg.embed_dim, t = cfg.num_tokens(), np = cfg.num_patches();
  const int nh = cfg.num_heads, dh = cfg.head_dim(), k = cfg.num_classes;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache cache;
  const Logits logits = run_forward(params, cfg, batch, cache);

  LossAndGrad out{0.0, zeros_like(params)};
  ParameterSet& grad = out.grad;

  // Softmax cross-entropy, averaged over the batch.
  RowMat dlogits(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    const int y = batch.labels[static_cast<std::size_t>(i)];
    out.loss += -(logits(i, y) - mx - std::log(z));
    dlogits.row(i) = e / z;
    dlogits(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  dlogits /= static_cast<double>(n);

  auto& hd = grad.at("head").values;
  MMap dwh(hd.data(), d, k);
  MVec dbh(hd.data() + d * k, k);
  const auto& hp = params.at("head").values;
  CMap wh(hp.data(), d, k);
  dwh += cache.cls.transpose() * dlogits;
  dbh += dlogits.colwise().sum();
  const RowMat dcls = dlogits * wh.transpose();

  const auto& fnp = params.at("final_norm").values;
  auto& fng = grad.at("final_norm").values;
  CVec gf(fnp.data(), d);
  MVec dgf(fng.data(), d), dbf(fng.data() + d, d);
  const RowMat dcls_in = layer_norm_backward(dcls, cache.final_ln, gf, dgf, dbf);

  RowMat dx = RowMat::Zero(n * t, d);
  for (Eigen::Index i = 0; i < n; ++i) dx.row(i * t) = dcls_in.row(i);

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];
    const LayerView w = view_layer(params, cfg, l);
    LayerGrad g = view_layer_grad(grad, cfg, l);

    // MLP branch: x_out = x_mid + W2 gelu(W1 ln2(x_mid)).
    const RowMat& dz = dx;
    g.w2 += lc.g.transpose() * dz;
    g.bm2 += dz.colwise().sum();
    RowMat dh1 = dz * w.w2.transpose();
    for (Eigen::Index r = 0; r < dh1.rows(); ++r) {
      for (Eigen::Index c = 0; c < dh1.cols(); ++c) dh1(r, c) *= gelu_grad(lc.h1(r, c));
    }
    g.w1 += lc.b.transpose() * dh1;
    g.bm1 += dh1.colwise().sum();
    const RowMat db = dh1 * w.w1.transpose();
    RowMat dx_mid = dx + layer_norm_backward(db, lc.ln2, w.g2, g.g2, g.b2);

    // Attention branch: x_mid = x_in + Wo attn(ln1(x_in)).
    g.wo += lc.o.transpose() * dx_mid;
    g.bo += dx_mid.colwise().sum();
    const RowMat d_o = dx_mid * w.wo.transpose();
    RowMat dqkv(n * t, 3 * d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int h = 0; h < nh; ++h) {
        const RowMat& p = lc.probs[static_cast<std::size_t>(i * nh + h)];
        const auto q = lc.qkv.block(i * t, h * dh, t, dh);
        const auto kk = lc.qkv.block(i * t, d + h * dh, t, dh);
        const auto v = lc.qkv.block(i * t, 2 * d + h * dh, t, dh);
        const auto doh = d_o.block(i * t, h * dh, t, dh);
        const RowMat dp = doh.lazyProduct(v.transpose());
        dqkv.block(i * t, 2 * d + h * dh, t, dh) = p.transpose().lazyProduct(doh);
        RowMat ds(t, t);
        for (Eigen::Index r = 0; r < t; ++r) {
          const double inner = dp.row(r).dot(p.row(r));
          ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - inner).matrix());
        }
        ds *= scale;
        dqkv.block(i * t, h * dh, t, dh) = ds.lazyProduct(kk);
        dqkv.block(i * t, d + h * dh, t, dh) = ds.transpose().lazyProduct(q);
      }
    }
    g.wqkv += lc.a.transpose() * dqkv;
    g.bqkv += dqkv.colwise().sum();
    const RowMat da = dqkv * w.wqkv.transpose();
    dx = dx_mid + layer_norm_backward(da, lc.ln1, w.g1, g.g1, g.b1);
  }

  auto& pos_g = grad.at("pos_embed").values;
  auto& cls_g = grad.at("class_embed").values;
  auto& pe_g = grad.at("patch_embed").values;
  MMap dpos(pos_g.data(), t, d);
  MVec dcls_emb(cls_g.data(), d);
  MMap dwpe(pe_g.data(), cfg.patch_dim(), d);
  MVec dbpe(pe_g.data() + cfg.patch_dim() * d, d);
  RowMat demb(n * np, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    dcls_emb += dx.row(i * t);
    dpos += dx.block(i * t, 0, t, d);
    demb.block(i * np, 0, np, d) = dx.block(i * t + 1, 0, np, d);
  }
  dwpe += cache.patches.transpose() * demb;
  dbpe += demb.colwise().sum();
  return out;
}

void mask_gradient(ParameterSet& grad, const std::set<GroupTag>& frozen) {
  for (auto& g : grad.groups()) {
    if (frozen.contains(g.tag)) std::fill(g.values.begin(), g.values.end(), 0.0);
  }
}

ParameterSet finetune(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& dataset,
                      const TrainSpec& spec, const std::set<GroupTag>& freeze_tags,
                      std::vector<double>* loss_trace) {
  if (dataset.empty()) throw InvalidArgumentError("finetune: empty dataset");
  if (spec.iterations < 0) throw InvalidArgumentError("finetune: negative iteration count");
  if (spec.batch_size < 1) throw InvalidArgumentError("finetune: batch_size must be >= 1");
  if (!(spec.learning_rate > 0.0)) throw InvalidArgumentError("finetune: learning_rate must be > 0");
  check_params(params, cfg);
  check_geometry(cfg, dataset);

  ParameterSet theta = params;
  if (spec.iterations == 0) return theta;

  ParameterSet m1 = zeros_like(params);
  ParameterSet m2 = zeros_like(params);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Rng rng(derive_seed(spec.seed, "finetune.batches"));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto bs = std::min<std::size_t>(static_cast<std::size_t>(spec.batch_size), dataset.size());
  std::vector<std::size_t> rows(bs);

  for (int it = 0; it < spec.iterations; ++it) {
    for (auto& r : rows) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      r = order[cursor++];
    }
    const ImageSet batch = dataset.subset(rows);
    LossAndGrad lg = loss_and_grad(theta, cfg, batch);
    if (!std::isfinite(lg.loss)) {
      throw NumericalError("finetune diverged: non-finite loss at iteration " + std::to_string(it));
    }
    if (loss_trace != nullptr) loss_trace->push_back(lg.loss);

    const double c1 = 1.0 - std::pow(beta1, it + 1);
    const double c2 = 1.0 - std::pow(beta2, it + 1);
    for (std::size_t gi = 0; gi < theta.groups().size(); ++gi) {
      auto& tg = theta.groups()[gi];
      if (freeze_tags.contains(tg.tag)) continue;
      const auto& gv = lg.grad.groups()[gi].values;
      if (spec.optimizer == Optimizer::sgd) {
        for (std::size_t k = 0; k < gv.size(); ++k) tg.values[k] -= spec.learning_rate * gv[k];
        continue;
      }
      auto& a = m1.groups()[gi].values;
      auto& b = m2.groups()[gi].values;
      for (std::size_t k = 0; k < gv.size(); ++k) {
        a[k] = beta1 * a[k] + (1.0 - beta1) * gv[k];
        b[k] = beta2 * b[k] + (1.0 - beta2) * gv[k] * gv[k];
        tg.values[k] -= spec.learning_rate * (a[k] / c1) / (std::sqrt(b[k] / c2) + eps);
      }
    }
  }
  return theta;
}

std::vector<int> argmax_rows(const Logits& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

std::vector<int> predict(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& data) {
  return argmax_rows(forward(params, cfg, data));
}

double evaluate(const ParameterSet& params, const ModelConfig& cfg, const ImageSet& dataset) {
  if (dataset.empty()) throw InvalidArgumentError("evaluate: empty dataset");
  const auto pred = predict(params, cfg, dataset);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == dataset.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

ImageSet ImageSet::subset(std::span<const std::size_t> rows) const {
  ImageSet out;
  out.image_size = image_size;
  out.channels = channels;
  const auto len = image_len();
  out.pixels.reserve(rows.size() * len);
  for (auto r : rows) {
    if (r >= size()) throw InvalidArgumentError("ImageSet::subset: row out of range");
    out.pixels.insert(out.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(r * len),
                      pixels.begin() + static_cast<std::ptrdiff_t>((r + 1) * len));
    out.labels.push_back(labels[r]);
    out.sample_ids.push_back(sample_ids.empty() ? static_cast<std::int64_t>(r) : sample_ids[r]);
  }
  return out;
}

void ImageSet::append(const ImageSet& other) {
  if (empty() && pixels.empty()) {
    image_size = other.image_size;
    channels = other.channels;
  }
  if (other.image_size != image_size || other.channels != channels) {
    throw InvalidArgumentError("ImageSet::append: geometry mismatch");
  }
  pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  sample_ids.insert(sample_ids.end(), other.sample_ids.begin(), other.sample_ids.end());
}

}  // namespace taskfuse
