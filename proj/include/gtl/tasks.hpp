#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/io.hpp"
#include "gtl/nn.hpp"
#include "gtl/rng.hpp"

namespace gtl {

enum class DataSource { mnist, omniglot, synthetic_bits };

inline std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::mnist: return "mnist";
    case DataSource::omniglot: return "omniglot";
    case DataSource::synthetic_bits: return "synthetic_bits";
  }
  return "?";
}

// Labeled examples stored row-wise: features.row(i) has label labels[i].
struct TaskDataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::vector<std::string> category_names;
  DataSource source = DataSource::mnist;
  std::vector<std::string> warnings;  // loader diagnostics (skipped files)

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t category_count() const { return category_names.size(); }

  std::vector<std::size_t> indices_of(std::size_t category) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == category) out.push_back(i);
    return out;
  }

  // Rows at the given indices, in the given order, with the same categories.
  TaskDataset select(const std::vector<std::size_t>& rows) const {
    TaskDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
      out.labels.push_back(labels[rows[i]]);
    }
    out.category_names = category_names;
    out.source = source;
    return out;
  }
};

// Inputs are the feature rows; targets are one-hot over the category count.
inline Batch to_batch(const TaskDataset& d) {
  Batch b;
  b.inputs = d.features;
  b.targets = Matrix::Zero(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.category_count()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] >= d.category_count()) throw data_error("label out of range");
    b.targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d.labels[i])) = 1.0;
  }
  return b;
}

// ---------------------------------------------------------------- MNIST (IDX)

namespace detail {

inline std::uint32_t read_be32(std::string_view bytes, std::size_t at, std::string_view what) {
  if (at + 4 > bytes.size()) throw format_error(std::string(what) + ": truncated header", at);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

inline TaskDataset parse_mnist(std::string_view images, std::string_view labels) {
  if (auto m = detail::read_be32(images, 0, "images"); m != idx_images_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "images: bad IDX magic 0x%08x", m);
    throw format_error(buf, 0);
  }
  const auto count = detail::read_be32(images, 4, "images");
  const auto rows = detail::read_be32(images, 8, "images");
  const auto cols = detail::read_be32(images, 12, "images");
  const std::size_t pixels = std::size_t(rows) * cols;
  const std::size_t need = 16 + std::size_t(count) * pixels;
  if (images.size() < need)
    throw format_error("images: file holds " + std::to_string(images.size()) + " bytes, header promises " +
                           std::to_string(need),
                       images.size());

  if (auto m = detail::read_be32(labels, 0, "labels"); m != idx_labels_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "labels: bad IDX magic 0x%08x", m);
    throw format_error(buf, 0);
  }
  const auto label_count = detail::read_be32(labels, 4, "labels");
  if (labels.size() < 8 + std::size_t(label_count))
    throw format_error("labels: truncated label data", labels.size());
  if (label_count != count)
    throw consistency_error("images file has " + std::to_string(count) + " examples but labels file has " +
                            std::to_string(label_count));

  TaskDataset d;
  d.source = DataSource::mnist;
  d.features.resize(count, static_cast<Eigen::Index>(pixels));
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto* src = reinterpret_cast<const unsigned char*>(images.data() + 16 + i * pixels);
    for (std::size_t p = 0; p < pixels; ++p)
      d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = src[p] / 255.0;
    const auto label = static_cast<unsigned char>(labels[8 + i]);
    if (label > 9) throw format_error("labels: label " + std::to_string(label) + " outside 0-9", 8 + i);
    d.labels[i] = label;
  }
  for (int c = 0; c < 10; ++c) d.category_names.push_back(std::to_string(c));
  return d;
}

inline TaskDataset load_mnist(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  return parse_mnist(read_file(images_path), read_file(labels_path));
}

// ------------------------------------------------------------- Omniglot (PNG)

// 8-bit grayscale image, row-major, values in [0, 1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;
};

// Decodes any PNG to gray as the mean of its color channels (alpha dropped).
inline GrayImage read_png_gray(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw data_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw data_error("libpng initialization failed");
  }
  GrayImage img;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw data_error("unreadable PNG " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_packing(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  const std::size_t channels = png_get_channels(png, info);
  buffer.resize(stride * img.height);
  rows.resize(img.height);
  for (std::size_t r = 0; r < img.height; ++r) rows[r] = buffer.data() + r * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  img.pixels.resize(img.width * img.height);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      double sum = 0.0;
      for (std::size_t ch = 0; ch < channels; ++ch) sum += rows[r][c * channels + ch];
      img.pixels[r * img.width + c] = sum / (255.0 * static_cast<double>(channels));
    }
  return img;
}

// Flips polarity when the border is mostly bright so strokes end up high.
inline void normalize_polarity(GrayImage& img) {
  if (img.width == 0 || img.height == 0) return;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      if (r == 0 || c == 0 || r + 1 == img.height || c + 1 == img.width) {
        sum += img.pixels[r * img.width + c];
        ++n;
      }
  if (sum / static_cast<double>(n) > 0.5)
    for (auto& p : img.pixels) p = 1.0 - p;
}

// Area-weighted average pooling to side x side.
inline std::vector<double> downsample(const GrayImage& img, std::size_t side) {
  std::vector<double> out(side * side, 0.0);
  const double sy = static_cast<double>(img.height) / static_cast<double>(side);
  const double sx = static_cast<double>(img.width) / static_cast<double>(side);
  for (std::size_t oy = 0; oy < side; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (std::size_t ox = 0; ox < side; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0.0, area = 0.0;
      for (auto y = static_cast<std::size_t>(y0); y < img.height && static_cast<double>(y) < y1; ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (auto x = static_cast<std::size_t>(x0); x < img.width && static_cast<double>(x) < x1; ++x) {
          const double w = wy * (std::min<double>(x + 1, x1) - std::max<double>(x, x0));
          acc += w * img.pixels[y * img.width + x];
          area += w;
        }
      }
      out[oy * side + ox] = std::clamp(acc / area, 0.0, 1.0);
    }
  }
  return out;
}

// root/<alphabet>/<character>/<image>.png; one category per character
// directory, named "<alphabet>/<character>". Directories are visited in
// sorted order. Unreadable images are skipped and reported in warnings.
inline TaskDataset load_omniglot(const std::filesystem::path& root, std::size_t side = 28, bool quiet = false) {
  namespace fs = std::filesystem;
  if (side == 0) throw argument_error("load_omniglot: side must be >= 1");
  if (!fs::is_directory(root)) throw data_error("omniglot root is not a directory: " + root.string());
  auto sorted_entries = [](const fs::path& dir, bool dirs) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
      if (dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  };
  TaskDataset d;
  d.source = DataSource::omniglot;
  std::vector<std::vector<double>> rows;
  for (const auto& alphabet : sorted_entries(root, true)) {
    for (const auto& character : sorted_entries(alphabet, true)) {
      const std::size_t label = d.category_names.size();
      std::size_t loaded = 0;
      for (const auto& file : sorted_entries(character, false)) {
        try {
          auto img = read_png_gray(file);
          normalize_polarity(img);
          rows.push_back(downsample(img, side));
          d.labels.push_back(label);
          ++loaded;
        } catch (const data_error& e) {
          d.warnings.push_back(std::string("skipped: ") + e.what());
          if (!quiet) std::cerr << "warning: " << d.warnings.back() << '\n';
        }
      }
      if (loaded > 0) d.category_names.push_back(alphabet.filename().string() + "/" + character.filename().string());
    }
  }
  if (rows.empty()) throw data_error("no readable images under " + root.string());
  d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(side * side));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return d;
}

// Categories whose name starts with "<alphabet>/".
inline std::vector<std::size_t> alphabet_categories(const TaskDataset& d, std::string_view alphabet) {
  std::vector<std::size_t> out;
  const std::string prefix = std::string(alphabet) + "/";
  for (std::size_t i = 0; i < d.category_names.size(); ++i)
    if (d.category_names[i].starts_with(prefix)) out.push_back(i);
  return out;
}

// ------------------------------------------------------------ bit mappings

struct BitMappingTask {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::uint8_t>> inputs;
  std::vector<std::vector<std::uint8_t>> targets;

  std::size_t rows() const { return inputs.size(); }
  friend bool operator==(const BitMappingTask&, const BitMappingTask&) = default;
};

// n_rows distinct random inputs, each target bit an independent fair coin.
inline BitMappingTask make_bit_mapping(std::size_t n_in, std::size_t n_out, std::size_t n_rows, std::uint64_t seed) {
  if (n_in == 0 || n_out == 0) throw argument_error("make_bit_mapping: bit counts must be >= 1");
  if (n_in > 62) throw argument_error("make_bit_mapping: n_in above 62 is not supported");
  const std::uint64_t space = std::uint64_t(1) << n_in;
  if (n_rows > space)
    throw argument_error("make_bit_mapping: " + std::to_string(n_rows) + " rows exceed 2^" + std::to_string(n_in));
  rng gen(seed);
  std::vector<std::uint64_t> codes;
  codes.reserve(n_rows);
  if (space <= (std::uint64_t(1) << 20)) {
    std::vector<std::uint64_t> all(space);
    for (std::uint64_t i = 0; i < space; ++i) all[i] = i;
    for (std::size_t i = 0; i < n_rows; ++i) {
      const auto j = i + gen.below(space - i);
      std::swap(all[i], all[j]);
      codes.push_back(all[i]);
    }
  } else {
    std::unordered_set<std::uint64_t> seen;
    while (codes.size() < n_rows) {
      const auto c = gen.below(space);
      if (seen.insert(c).second) codes.push_back(c);
    }
  }
  BitMappingTask t{n_in, n_out, seed, {}, {}};
  for (auto c : codes) {
    std::vector<std::uint8_t> in(n_in), out(n_out);
    for (std::size_t b = 0; b < n_in; ++b) in[b] = static_cast<std::uint8_t>((c >> (n_in - 1 - b)) & 1u);
    for (auto& bit : out) bit = gen.coin() ? 1 : 0;
    t.inputs.push_back(std::move(in));
    t.targets.push_back(std::move(out));
  }
  return t;
}

inline Batch to_batch(const BitMappingTask& t) {
  Batch b{Matrix(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.n_in)),
          Matrix(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.n_out))};
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.n_in; ++c) b.inputs(r, c) = t.inputs[r][c];
    for (std::size_t c = 0; c < t.n_out; ++c) b.targets(r, c) = t.targets[r][c];
  }
  return b;
}

// Plain-text form: header lines then one "<input bits> <target bits>" row per line.
inline std::string write_bit_mapping(const BitMappingTask& t) {
  std::ostringstream out;
  out << "gtl-bit-mapping 1\n"
      << "n_in " << t.n_in << "\nn_out " << t.n_out << "\nseed " << t.seed << "\nrows " << t.rows() << '\n';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (auto b : t.inputs[r]) out << char('0' + b);
    out << ' ';
    for (auto b : t.targets[r]) out << char('0' + b);
    out << '\n';
  }
  return out.str();
}

inline BitMappingTask read_bit_mapping(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string tag, key;
  int version = 0;
  BitMappingTask t;
  std::size_t rows = 0;
  if (!(in >> tag >> version) || tag != "gtl-bit-mapping" || version != 1)
    throw data_error("not a gtl-bit-mapping document");
  auto field = [&](std::string_view name, auto& v) {
    if (!(in >> key >> v) || key != name) throw data_error("bit mapping: expected field " + std::string(name));
  };
  field("n_in", t.n_in);
  field("n_out", t.n_out);
  field("seed", t.seed);
  field("rows", rows);
  auto bits = [](const std::string& s, std::size_t n) {
    if (s.size() != n) throw data_error("bit mapping: row has wrong bit count");
    std::vector<std::uint8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (s[i] != '0' && s[i] != '1') throw data_error("bit mapping: bits must be 0 or 1");
      out[i] = static_cast<std::uint8_t>(s[i] - '0');
    }
    return out;
  };
  for (std::size_t r = 0; r < rows; ++r) {
    std::string a, b;
    if (!(in >> a >> b)) throw data_error("bit mapping: truncated rows");
    t.inputs.push_back(bits(a, t.n_in));
    t.targets.push_back(bits(b, t.n_out));
  }
  return t;
}

// ------------------------------------------------------- subsets & episodes

// Keeps the listed categories, relabelled 0..k-1 in the listed order. With a
// cap, only the first max_per_category examples (stored order) of each are kept.
inline TaskDataset subset_categories(const TaskDataset& data, const std::vector<std::size_t>& categories,
                                     std::optional<std::size_t> max_per_category = std::nullopt) {
  std::map<std::size_t, std::size_t> relabel;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (categories[i] >= data.category_count())
      throw argument_error("subset_categories: unknown category " + std::to_string(categories[i]));
    if (!relabel.emplace(categories[i], i).second)
      throw argument_error("subset_categories: category " + std::to_string(categories[i]) + " listed twice");
  }
  std::vector<std::size_t> taken(categories.size(), 0);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto it = relabel.find(data.labels[i]);
    if (it == relabel.end()) continue;
    if (max_per_category && taken[it->second] >= *max_per_category) continue;
    ++taken[it->second];
    rows.push_back(i);
  }
  TaskDataset out = data.select(rows);
  for (auto& l : out.labels) l = relabel.at(l);
  out.category_names.clear();
  for (auto c : categories) out.category_names.push_back(data.category_names[c]);
  return out;
}

// One-shot split: exactly one training example per category.
struct Episode {
  TaskDataset train;
  TaskDataset test;
  std::vector<std::size_t> train_rows;  // row indices into the source dataset
  std::vector<std::size_t> test_rows;
  std::optional<std::string> alphabet_id;
};

// A sequence of one-shot training sets over the same categories sharing one
// fixed test pool. blocks[b] holds one example per category.
struct BlockEpisodes {
  std::vector<TaskDataset> blocks;
  std::vector<std::vector<std::size_t>> block_rows;
  TaskDataset test;
  std::vector<std::size_t> test_rows;
};

// Draws `blocks` distinct training examples per category (uniformly, without
// replacement); every other example of those categories is the test pool.
inline BlockEpisodes make_block_episodes(const TaskDataset& data, const std::vector<std::size_t>& categories,
                                         std::size_t blocks, std::uint64_t seed) {
  if (blocks == 0) throw argument_error("make_block_episodes: need at least one block");
  if (categories.empty()) throw argument_error("make_block_episodes: no categories");
  const TaskDataset sub = subset_categories(data, categories);
  std::vector<std::size_t> source_rows;  // row in `data` for each row of `sub`
  {
    std::vector<bool> keep(data.category_count(), false);
    for (auto c : categories) keep[c] = true;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (keep[data.labels[i]]) source_rows.push_back(i);
  }
  rng gen(seed);
  BlockEpisodes out;
  out.block_rows.assign(blocks, {});
  std::vector<bool> used(sub.size(), false);
  for (std::size_t k = 0; k < categories.size(); ++k) {
    auto rows = sub.indices_of(k);
    if (rows.size() < blocks + 1)
      throw data_error("category " + data.category_names[categories[k]] + " has " + std::to_string(rows.size()) +
                       " examples; need at least " + std::to_string(blocks + 1));
    for (std::size_t b = 0; b < blocks; ++b) {
      const auto j = b + gen.below(rows.size() - b);
      std::swap(rows[b], rows[j]);
      out.block_rows[b].push_back(rows[b]);
      used[rows[b]] = true;
    }
  }
  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < sub.size(); ++i)
    if (!used[i]) test_rows.push_back(i);
  for (std::size_t b = 0; b < blocks; ++b) {
    out.blocks.push_back(sub.select(out.block_rows[b]));
    for (auto& r : out.block_rows[b]) r = source_rows[r];
  }
  out.test = sub.select(test_rows);
  for (auto r : test_rows) out.test_rows.push_back(source_rows[r]);
  return out;
}

inline Episode make_episode(const TaskDataset& data, const std::vector<std::size_t>& categories, std::uint64_t seed) {
  auto be = make_block_episodes(data, categories, 1, seed);
  Episode e;
  e.train = std::move(be.blocks.front());
  e.train_rows = std::move(be.block_rows.front());
  e.test = std::move(be.test);
  e.test_rows = std::move(be.test_rows);
  return e;
}

}  // namespace gtl
