// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "taskfuse/error.hpp"

namespace taskfuse {

namespace {

constexpr char kMagic[8] = {'T', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

nlohmann::json layout_manifest(const ParameterSet& p) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : p.groups()) {
    groups.push_back({{"name", g.name}, {"tag", to_string(g.tag)}, {"length", g.values.size()}});
  }
  return {{"format_version", kCheckpointFormatVersion},
          {"model_config_hash", p.config_hash()},
          {"groups", groups}};
}

void write_file(const std::filesystem::path& path, const nlohmann::json& manifest,
                const ParameterSet& p) {
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> bytes(std::begin(kMagic), std::end(kMagic));
  append_u64_le(bytes, text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  for (const auto& g : p.groups()) append_f64_le(bytes, g.values);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("short write to '" + path.string() + "'");
}

std::pair<nlohmann::json, ParameterSet> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const std::uint64_t mlen = read_u64_le(bytes.data() + 8);
  if (16 + mlen > bytes.size()) throw IoError("'" + path.string() + "': truncated manifest");
  const auto manifest = nlohmann::json::parse(bytes.begin() + 16,
                                              bytes.begin() + 16 + static_cast<std::ptrdiff_t>(mlen));
  if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw IoError("'" + path.string() + "': unsupported format_version");
  }
  ParameterSet p(manifest.at("model_config_hash").get<std::string>());
  std::size_t offset = 16 + mlen;
  for (const auto& g : manifest.at("groups")) {
    const auto len = g.at("length").get<std::size_t>();
    if (offset + 8 * len > bytes.size()) {
      throw IoError("'" + path.string() + "': truncated payload for group '" +
                    g.at("name").get<std::string>() + "'");
    }
    p.add_group(g.at("name").get<std::string>(), parse_group_tag(g.at("tag").get<std::string>()),
                read_f64_le(std::span(bytes.data() + offset, 8 * len)));
    offset += 8 * len;
  }
  if (offset != bytes.size()) throw IoError("'" + path.string() + "': trailing bytes");
  return {manifest, std::move(p)};
}

}  // namespace

void append_f64_le(std::vector<std::uint8_t>& out, std::span<const double> values) {
  out.reserve(out.size() + 8 * values.size());
  for (double v : values) append_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

std::vector<double> read_f64_le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 8 != 0) throw IoError("binary64 payload length not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<double>(read_u64_le(bytes.data() + 8 * i));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& p) {
  write_file(path, layout_manifest(p), p);
}

ParameterSet load_checkpoint(const std::filesystem::path& path) { return read_file(path).second; }

void save_task_vector(const std::filesystem::path& path, const TaskVector& tv) {
  auto manifest = layout_manifest(tv.delta);
  manifest["task_vector"] = {{"task_id", tv.task_id},
                             {"source_user", tv.source_user},
                             {"is_perturbed", tv.is_perturbed},
                             {"noise_variance_used", tv.noise_variance_used}};
  write_file(path, manifest, tv.delta);
}

TaskVector load_task_vector(const std::filesystem::path& path) {
  auto [manifest, delta] = read_file(path);
  if (!manifest.contains("task_vector")) {
    throw IoError("'" + path.string() + "' is a checkpoint, not a task vector");
  }
  const auto& meta = manifest.at("task_vector");
  TaskVector tv;
  tv.delta = std::move(delta);
  tv.task_id = meta.at("task_id").get<std::string>();
  tv.source_user = meta.at("source_user").get<int>();
  tv.is_perturbed = meta.at("is_perturbed").get<bool>();
  tv.noise_variance_used = meta.at("noise_variance_used").get<double>();
  return tv;
}

}  // namespace taskfuse
