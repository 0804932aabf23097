// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/taskbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include <json.hpp>

#include "taskfuse/checkpoint.hpp"
#include "taskfuse/error.hpp"
#include "taskfuse/rng.hpp"

namespace taskfuse {

namespace {

constexpr std::string_view kKindNames[] = {"stripes",  "blobs",  "checker", "ring",
                                           "gradient", "corner", "diag",    "noise-texture"};
constexpr double kPi = std::numbers::pi;
constexpr double kPixelNoise = 0.08;

struct Canvas {
  int size;
  std::vector<double> px;
  double& at(int y, int x) { return px[static_cast<std::size_t>(y * size + x)]; }
};

// Class position as a fraction of the class range, in [0, 1).
double frac(int cls, int k) { return static_cast<double>(cls) / static_cast<double>(k); }

void draw_stripes(Canvas& c, int cls, int k, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double theta = kPi * frac(cls, k) + (u(rng) - 0.5) * 0.2;
  const double period = 3.5 + 1.5 * u(rng);
  const double phase = 2.0 * kPi * u(rng);
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double s = x * std::cos(theta) + y * std::sin(theta);
      c.at(y, x) = 0.5 + 0.5 * std::sin(2.0 * kPi * s / period + phase);
    }
  }
}

void draw_blob(Canvas& c, double cy, double cx, double sigma) {
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      c.at(y, x) += std::exp(-r2 / (2.0 * sigma * sigma));
    }
  }
}

void draw_blobs(Canvas& c, int cls, int k, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double mid = (c.size - 1) / 2.0;
  const double radius = c.size * 0.28;
  const double ang = 2.0 * kPi * frac(cls, k);
  draw_blob(c, mid + radius * std::sin(ang) + u(rng), mid + radius * std::cos(ang) + u(rng),
            1.6 + 0.3 * u(rng));
}

void draw_checker(Canvas& c, int cls, int k, Rng& rng) {
  static constexpr int kCells[] = {1, 2, 4, 8};
  const int cell = k <= 4 ? kCells[cls * 4 / k] : 1 + cls;
  std::uniform_int_distribution<int> off(0, 2 * cell - 1);
  const int oy = off(rng), ox = off(rng);
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      c.at(y, x) = ((((y + oy) / cell) + ((x + ox) / cell)) % 2 == 0) ? 1.0 : 0.0;
    }
  }
}

void draw_ring(Canvas& c, int cls, int k, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double mid = (c.size - 1) / 2.0;
  const double cy = mid + 0.8 * u(rng), cx = mid + 0.8 * u(rng);
  const double r0 = 1.5 + (c.size * 0.4 - 1.5) * (cls + 0.5) / k;
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double r = std::hypot(y - cy, x - cx);
      c.at(y, x) = std::exp(-(r - r0) * (r - r0) / (2.0 * 0.6 * 0.6));
    }
  }
}

void draw_gradient(Canvas& c, int cls, int k, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double ang = 2.0 * kPi * frac(cls, k) + 0.25 * u(rng);
  const double mid = (c.size - 1) / 2.0;
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double s = ((x - mid) * std::cos(ang) + (y - mid) * std::sin(ang)) / c.size;
      c.at(y, x) = 0.5 + s;
    }
  }
}

void draw_corner(Canvas& c, int cls, int k, Rng& rng) {
  std::uniform_int_distribution<int> jit(0, 1);
  const int side = 5;
  // Walk the border clockwise from the top-left corner.
  const double t = frac(cls, k);
  const int span = c.size - side;
  int y0 = 0, x0 = 0;
  const double perim = 4.0 * span;
  const double pos = t * perim;
  if (pos < span) { y0 = 0; x0 = static_cast<int>(pos); }
  else if (pos < 2 * span) { y0 = static_cast<int>(pos - span); x0 = span; }
  else if (pos < 3 * span) { y0 = span; x0 = span - static_cast<int>(pos - 2 * span); }
  else { y0 = span - static_cast<int>(pos - 3 * span); x0 = 0; }
  y0 = std::clamp(y0 + (y0 == 0 ? jit(rng) : -jit(rng)), 0, span);
  x0 = std::clamp(x0 + (x0 == 0 ? jit(rng) : -jit(rng)), 0, span);
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) c.at(y, x) = 1.0;
  }
}

void draw_diag(Canvas& c, int cls, int k, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  const double span = c.size * 0.75;
  const double offset = -span / 2.0 + span * (cls + 0.5) / k + u(rng);
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double dist = ((x - y) - offset) / std::numbers::sqrt2;
      c.at(y, x) = std::exp(-dist * dist / (2.0 * 0.8 * 0.8));
    }
  }
}

void draw_noise_texture(Canvas& c, int cls, int k, Rng& rng) {
  // White noise smeared along a class-specific direction.
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double ang = kPi * frac(cls, k) + 0.1 * u(rng);
  const double dy = std::sin(ang), dx = std::cos(ang);
  std::vector<double> raw(c.px.size());
  for (auto& v : raw) v = n(rng);
  constexpr int kHalf = 4;
  double mean = 0.0;
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      double s = 0.0;
      for (int t = -kHalf; t <= kHalf; ++t) {
        const int yy = ((y + static_cast<int>(std::lround(t * dy))) % c.size + c.size) % c.size;
        const int xx = ((x + static_cast<int>(std::lround(t * dx))) % c.size + c.size) % c.size;
        s += raw[static_cast<std::size_t>(yy * c.size + xx)];
      }
      c.at(y, x) = s;
      mean += s;
    }
  }
  mean /= static_cast<double>(c.px.size());
  double sq = 0.0;
  for (double v : c.px) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(c.px.size())) + 1e-12;
  for (auto& v : c.px) v = 0.5 + 0.25 * (v - mean) / sd;
}

void draw(GeneratorKind kind, Canvas& c, int cls, int k, Rng& rng) {
  switch (kind) {
    case GeneratorKind::stripes: return draw_stripes(c, cls, k, rng);
    case GeneratorKind::blobs: return draw_blobs(c, cls, k, rng);
    case GeneratorKind::checker: return draw_checker(c, cls, k, rng);
    case GeneratorKind::ring: return draw_ring(c, cls, k, rng);
    case GeneratorKind::gradient: return draw_gradient(c, cls, k, rng);
    case GeneratorKind::corner: return draw_corner(c, cls, k, rng);
    case GeneratorKind::diag: return draw_diag(c, cls, k, rng);
    case GeneratorKind::noise_texture: return draw_noise_texture(c, cls, k, rng);
  }
}

// Draws sample `index` of the task into `out`, returns its (possibly noisy) label.
int draw_sample(const TaskSpec& spec, const ModelConfig& cfg, std::int64_t index, bool noisy_label,
                std::vector<double>& out) {
  Rng rng(derive_seed(spec.seed, "sample", static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int k = spec.num_classes;
  const int cls = static_cast<int>(index % k);

  GeneratorKind kind = spec.generator_kind;
  const double pick = u(rng);
  if (spec.mix_kind && pick < spec.mix_fraction) kind = *spec.mix_kind;

  Canvas canvas{cfg.image_size, std::vector<double>(static_cast<std::size_t>(cfg.image_size) *
                                                        cfg.image_size, 0.0)};
  draw(kind, canvas, cls, k, rng);
  std::normal_distribution<double> noise(0.0, kPixelNoise);
  for (auto v : canvas.px) {
    for (int ch = 0; ch < cfg.channels; ++ch) out.push_back(v + noise(rng));
  }

  const double flip = u(rng);
  if (noisy_label && flip < spec.label_noise && k > 1) {
    std::uniform_int_distribution<int> other(1, k - 1);
    return (cls + other(rng)) % k;
  }
  return cls;
}

ImageSet draw_range(const TaskSpec& spec, const ModelConfig& cfg, std::int64_t first,
                    std::int64_t count, bool noisy_labels) {
  ImageSet set;
  set.image_size = cfg.image_size;
  set.channels = cfg.channels;
  set.pixels.reserve(static_cast<std::size_t>(count) * set.image_len());
  for (std::int64_t i = first; i < first + count; ++i) {
    set.labels.push_back(draw_sample(spec, cfg, i, noisy_labels, set.pixels));
    set.sample_ids.push_back(i);
  }
  return set;
}

constexpr char kDataMagic[8] = {'T', 'F', 'D', 'A', 'T', 'A', '0', '1'};

}  // namespace

std::string_view to_string(GeneratorKind kind) { return kKindNames[static_cast<int>(kind)]; }

GeneratorKind parse_generator_kind(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kKindNames); ++i) {
    if (kKindNames[i] == name) return static_cast<GeneratorKind>(i);
  }
  throw InvalidArgumentError("unknown generator kind '" + std::string(name) + "'");
}

const std::vector<GeneratorKind>& all_generator_kinds() {
  static const std::vector<GeneratorKind> kinds = {
      GeneratorKind::stripes,  GeneratorKind::blobs,  GeneratorKind::checker,
      GeneratorKind::ring,     GeneratorKind::gradient, GeneratorKind::corner,
      GeneratorKind::diag,     GeneratorKind::noise_texture};
  return kinds;
}

void TaskSpec::validate() const {
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgumentError("task '" + task_id + "': " + what);
  };
  require(num_classes >= 2, "num_classes must be >= 2");
  require(samples_train > 0 && samples_test > 0 && samples_fewshot_per_class > 0,
          "sample counts must be positive");
  require(samples_train % num_classes == 0,
          "samples_train (" + std::to_string(samples_train) + ") not divisible by num_classes (" +
              std::to_string(num_classes) + ")");
  require(samples_test % num_classes == 0,
          "samples_test (" + std::to_string(samples_test) + ") not divisible by num_classes (" +
              std::to_string(num_classes) + ")");
  require(label_noise >= 0.0 && label_noise < 0.5, "label_noise must lie in [0, 0.5)");
  require(mix_fraction >= 0.0 && mix_fraction <= 1.0, "mix_fraction must lie in [0, 1]");
}

TaskData generate_task(const TaskSpec& spec, const ModelConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (spec.num_classes != cfg.num_classes) {
    throw InvalidArgumentError("task '" + spec.task_id + "' has " +
                               std::to_string(spec.num_classes) + " classes, model head has " +
                               std::to_string(cfg.num_classes));
  }
  const std::int64_t ntr = spec.samples_train, nte = spec.samples_test;
  const std::int64_t nfs = static_cast<std::int64_t>(spec.num_classes) *
                           spec.samples_fewshot_per_class;
  TaskData data;
  data.task_id = spec.task_id;
  data.train = draw_range(spec, cfg, 0, ntr, true);
  data.test = draw_range(spec, cfg, ntr, nte, false);
  // ntr + nte is a multiple of num_classes, so few-shot classes stay aligned.
  data.fewshot = draw_range(spec, cfg, ntr + nte, nfs, true);
  return data;
}

ImageSet fewshot_prefix(const ImageSet& fewshot, int num_classes, int per_class) {
  if (per_class < 1) throw InvalidArgumentError("fewshot_prefix: per_class must be >= 1");
  std::vector<int> taken(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fewshot.size(); ++i) {
    auto& t = taken[static_cast<std::size_t>(fewshot.sample_ids[i] % num_classes)];
    if (t < per_class) {
      rows.push_back(i);
      ++t;
    }
  }
  for (int t : taken) {
    if (t < per_class) {
      throw InvalidArgumentError("fewshot_prefix: split holds fewer than " +
                                 std::to_string(per_class) + " items per class");
    }
  }
  return fewshot.subset(rows);
}

ImageSet rotation_pretext(const std::vector<TaskData>& tasks, int per_task) {
  if (tasks.empty() || per_task < 1) {
    throw InvalidArgumentError("rotation_pretext: need tasks and per_task >= 1");
  }
  ImageSet out;
  out.image_size = tasks.front().train.image_size;
  out.channels = tasks.front().train.channels;
  const int n = out.image_size;
  const int ch = out.channels;
  std::int64_t idx = 0;
  for (const auto& t : tasks) {
    if (t.train.size() < static_cast<std::size_t>(per_task)) {
      throw InvalidArgumentError("rotation_pretext: task " + t.task_id + " has too few train items");
    }
    for (int i = 0; i < per_task; ++i, ++idx) {
      const auto img = t.train.image(static_cast<std::size_t>(i));
      const int r = static_cast<int>(idx % 4);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          // Output pixel (y, x) of a counter-clockwise quarter turn applied r times.
          int sy = y;
          int sx = x;
          for (int k = 0; k < r; ++k) {
            const int ny = sx;
            sx = n - 1 - sy;
            sy = ny;
          }
          for (int c = 0; c < ch; ++c) {
            out.pixels.push_back(img[static_cast<std::size_t>((sy * n + sx) * ch + c)]);
          }
        }
      }
      out.labels.push_back(r);
      out.sample_ids.push_back(idx);
    }
  }
  return out;
}

std::pair<TaskSpec, TaskSpec> task_similarity_knob(const TaskSpec& a, const TaskSpec& b,
                                                   double overlap) {
  if (!(overlap >= 0.0 && overlap <= 1.0)) {
    throw InvalidArgumentError("task_similarity_knob: overlap must lie in [0, 1]");
  }
  TaskSpec b2 = b;
  if (overlap == 1.0) {
    b2 = a;
    b2.task_id = b.task_id;
  } else if (overlap > 0.0) {
    b2.mix_kind = a.generator_kind;
    b2.mix_fraction = overlap;
  } else {
    b2.mix_kind.reset();
    b2.mix_fraction = 0.0;
  }
  return {a, b2};
}

std::vector<TaskSpec> default_task_specs(std::uint64_t seed, int count) {
  const auto& kinds = all_generator_kinds();
  if (count < 1 || count > static_cast<int>(kinds.size())) {
    throw InvalidArgumentError("default_task_specs: count must lie in [1, 8]");
  }
  std::vector<TaskSpec> specs;
  for (int i = 0; i < count; ++i) {
    TaskSpec s;
    s.task_id = "t" + std::to_string(i + 1);
    s.generator_kind = kinds[static_cast<std::size_t>(i)];
    s.seed = derive_seed(seed, "task", to_string(s.generator_kind));
    specs.push_back(s);
  }
  return specs;
}

void save_task_data(const std::filesystem::path& dir, const TaskData& data) {
  nlohmann::json manifest = {{"format_version", 1}, {"task_id", data.task_id}};
  std::vector<std::uint8_t> payload;
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, set] : {std::pair<const char*, const ImageSet*>{"train", &data.train},
                                  {"test", &data.test},
                                  {"fewshot", &data.fewshot}}) {
    splits[name] = {{"count", set->size()},
                    {"image_size", set->image_size},
                    {"channels", set->channels},
                    {"offset", payload.size()}};
    append_f64_le(payload, set->pixels);
    std::vector<double> meta;
    for (std::size_t i = 0; i < set->size(); ++i) meta.push_back(set->labels[i]);
    for (std::size_t i = 0; i < set->size(); ++i) {
      meta.push_back(static_cast<double>(set->sample_ids[i]));
    }
    append_f64_le(payload, meta);
  }
  manifest["splits"] = splits;
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> bytes(std::begin(kDataMagic), std::end(kDataMagic));
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(text.size() >> (8 * i)));
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());

  std::filesystem::create_directories(dir);
  const auto path = dir / (data.task_id + ".tfdata");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TaskData load_task_data(const std::filesystem::path& dir, const std::string& task_id) {
  const auto path = dir / (task_id + ".tfdata");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || !std::equal(std::begin(kDataMagic), std::end(kDataMagic),
                                       bytes.begin(), [](char a, std::uint8_t b) {
                                         return static_cast<std::uint8_t>(a) == b;
                                       })) {
    throw IoError("'" + path.string() + "' is not a dataset file");
  }
  std::uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i) mlen |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  const auto manifest = nlohmann::json::parse(bytes.begin() + 16,
                                              bytes.begin() + 16 + static_cast<std::ptrdiff_t>(mlen));
  const std::size_t base = 16 + mlen;
  TaskData data;
  data.task_id = manifest.at("task_id").get<std::string>();
  for (auto [name, set] : {std::pair<const char*, ImageSet*>{"train", &data.train},
                           {"test", &data.test},
                           {"fewshot", &data.fewshot}}) {
    const auto& s = manifest.at("splits").at(name);
    set->image_size = s.at("image_size").get<int>();
    set->channels = s.at("channels").get<int>();
    const auto count = s.at("count").get<std::size_t>();
    const std::size_t off = base + s.at("offset").get<std::size_t>();
    const std::size_t npx = count * set->image_len();
    if (off + 8 * (npx + 2 * count) > bytes.size()) {
      throw IoError("'" + path.string() + "': truncated split '" + name + "'");
    }
    set->pixels = read_f64_le(std::span(bytes.data() + off, 8 * npx));
    const auto meta = read_f64_le(std::span(bytes.data() + off + 8 * npx, 16 * count));
    for (std::size_t i = 0; i < count; ++i) set->labels.push_back(static_cast<int>(meta[i]));
    for (std::size_t i = 0; i < count; ++i) {
      set->sample_ids.push_back(static_cast<std::int64_t>(meta[count + i]));
    }
  }
  return data;
}

}  // namespace taskfuse
