#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/guidance.hpp"
#include "gtl/nn.hpp"

namespace gtl {

using json = nlohmann::json;

inline constexpr std::string_view checkpoint_magic = "GTLCKPT1";
inline constexpr std::string_view guidance_magic = "GTLGUID1";
inline constexpr int container_version = 1;

inline json to_json(const NetworkSpec& s) {
  return json{{"layer_sizes", s.layer_sizes},
              {"hidden_activation", to_string(s.hidden_activation)},
              {"output_head", to_string(s.output_head)},
              {"init_seed", s.init_seed}};
}

inline NetworkSpec network_from_json(const json& j) {
  NetworkSpec s;
  try {
    s.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    auto act = parse_activation(j.at("hidden_activation").get<std::string>());
    auto head = parse_head(j.at("output_head").get<std::string>());
    if (!act || !head) throw data_error("unknown activation or head in metadata");
    s.hidden_activation = *act;
    s.output_head = *head;
    s.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw data_error(std::string("bad network metadata: ") + e.what());
  }
  return s;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

template <class Tag>
void put_values(std::string& out, const LayerStack<Tag>& s) {
  for_each_value(s, [&](double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); });
}

template <class Tag>
std::string encode(std::string_view magic, const json& meta, const LayerStack<Tag>& values) {
  std::string out(magic);
  const std::string doc = meta.dump();
  put_u64(out, doc.size());
  out += doc;
  put_values(out, values);
  return out;
}

struct decoded {
  json meta;
  std::string_view payload;
  std::size_t payload_offset = 0;
};

inline decoded decode_header(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic)
    throw format_error("bad magic, expected " + std::string(magic), 0);
  std::size_t at = magic.size();
  if (bytes.size() < at + 8) throw format_error("truncated metadata length", at);
  const auto len = get_u64(bytes, at);
  at += 8;
  if (len > bytes.size() - at) throw format_error("truncated metadata", at);
  decoded d;
  try {
    d.meta = json::parse(bytes.substr(at, len));
  } catch (const json::exception& e) {
    throw format_error(std::string("metadata is not valid JSON: ") + e.what(), at);
  }
  at += len;
  d.payload = bytes.substr(at);
  d.payload_offset = at;
  return d;
}

template <class Tag>
LayerStack<Tag> decode_values(const decoded& d, const NetworkSpec& spec) {
  spec.validate();
  LayerStack<Tag> s;
  std::size_t at = 0;
  auto next = [&]() {
    if (at + 8 > d.payload.size()) throw format_error("truncated parameter payload", d.payload_offset + at);
    const double v = std::bit_cast<double>(get_u64(d.payload, at));
    at += 8;
    return v;
  };
  for (std::size_t k = 0; k < spec.layer_count(); ++k) {
    const auto in = static_cast<Eigen::Index>(spec.layer_sizes[k]);
    const auto outw = static_cast<Eigen::Index>(spec.layer_sizes[k + 1]);
    Layer<Tag> l{Matrix(in, outw), RowVector(outw)};
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = next();
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) l.biases[i] = next();
    s.layers.push_back(std::move(l));
  }
  if (at != d.payload.size()) throw format_error("trailing bytes after parameters", d.payload_offset + at);
  return s;
}

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw error("write failed for " + path.string());
}

struct Checkpoint {
  NetworkSpec spec;
  ParamSet params;
};

inline std::string encode_checkpoint(const NetworkSpec& spec, const ParamSet& params) {
  detail::check_params(spec, params);
  json meta = to_json(spec);
  meta["format_version"] = container_version;
  return detail::encode(checkpoint_magic, meta, params);
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  auto d = detail::decode_header(bytes, checkpoint_magic);
  Checkpoint c;
  c.spec = network_from_json(d.meta);
  c.params = detail::decode_values<param_tag>(d, c.spec);
  return c;
}

inline void write_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const ParamSet& params) {
  write_file(path, encode_checkpoint(spec, params));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

struct GuidanceFile {
  NetworkSpec spec;
  GuidanceMatrix guidance;
  std::string manifest;  // path of the scout family manifest, if any
};

inline std::string encode_guidance(const NetworkSpec& spec, const GuidanceMatrix& g, std::string_view manifest = {}) {
  if (g.values.size() != spec.layer_count()) throw shape_error("guidance does not match network spec");
  json meta = to_json(spec);
  meta["format_version"] = container_version;
  meta["stat_kind"] = to_string(g.stat_kind);
  meta["norm_kind"] = to_string(g.norm_kind);
  meta["norm_scope"] = to_string(g.scope);
  meta["n_scouts"] = g.n_scouts;
  meta["derived_layers"] = g.derived_layers;
  meta["head_value"] = g.head_value;
  meta["scout_tasks"] = g.scout_tasks;
  meta["manifest"] = manifest;
  return detail::encode(guidance_magic, meta, g.values);
}

inline GuidanceFile decode_guidance(std::string_view bytes) {
  auto d = detail::decode_header(bytes, guidance_magic);
  GuidanceFile f;
  f.spec = network_from_json(d.meta);
  try {
    auto stat = parse_stat_kind(d.meta.at("stat_kind").get<std::string>());
    auto norm = parse_norm_kind(d.meta.at("norm_kind").get<std::string>());
    auto scope = parse_norm_scope(d.meta.at("norm_scope").get<std::string>());
    if (!stat || !norm || !scope) throw data_error("unknown stat/norm kind in guidance metadata");
    f.guidance.stat_kind = *stat;
    f.guidance.norm_kind = *norm;
    f.guidance.scope = *scope;
    f.guidance.n_scouts = d.meta.at("n_scouts").get<std::size_t>();
    f.guidance.derived_layers = d.meta.at("derived_layers").get<std::size_t>();
    f.guidance.head_value = d.meta.at("head_value").get<double>();
    f.guidance.scout_tasks = d.meta.at("scout_tasks").get<std::vector<std::string>>();
    f.manifest = d.meta.value("manifest", "");
  } catch (const json::exception& e) {
    throw data_error(std::string("bad guidance metadata: ") + e.what());
  }
  f.guidance.values = detail::decode_values<guidance_tag>(d, f.spec);
  return f;
}

inline void write_guidance(const std::filesystem::path& path, const NetworkSpec& spec, const GuidanceMatrix& g,
                           std::string_view manifest = {}) {
  write_file(path, encode_guidance(spec, g, manifest));
}

inline GuidanceFile read_guidance(const std::filesystem::path& path) { return decode_guidance(read_file(path)); }

// FNV-1a 64 over the little-endian value bytes, rendered as "fnv1a64:<hex>".
template <class Tag>
std::string content_digest(const LayerStack<Tag>& s) {
  std::string bytes;
  detail::put_values(bytes, s);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string("fnv1a64:") + buf;
}

}  // namespace gtl
