#include "amcl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include "amcl/errors.hpp"
#include "amcl/rng.hpp"

namespace amcl {
namespace {

constexpr std::uint64_t kTestSplitStream = 0x54455354ULL;

std::uint64_t split_seed(std::uint64_t seed, Split split) {
  return split == Split::train ? derive_seed(seed, 0) : derive_seed(seed, kTestSplitStream);
}

std::vector<std::string> split_list(std::string_view value, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t end = value.find(sep, start);
    const std::string_view part = value.substr(start, end == std::string_view::npos ? end : end - start);
    if (!part.empty()) out.emplace_back(part);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      out = std::stod(std::string(value), &used);
      if (used != value.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("dataset option '" + std::string(key) + "' expects a number, got '" + std::string(value) + "'");
    }
  } else {
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last)
      throw ConfigError("dataset option '" + std::string(key) + "' expects an integer, got '" + std::string(value) +
                        "'");
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) throw FormatError("truncated header in '" + path + "'", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

std::span<const double> LabeledDataset::example(std::size_t i) const {
  const std::size_t n = example_size();
  return {features.data() + i * n, n};
}

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InputError("empty batch");
  const std::size_t n = example_size();
  Shape shape{indices.size()};
  shape.insert(shape.end(), example_shape.begin(), example_shape.end());
  std::vector<double> data(indices.size() * n);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw InputError("example index out of range");
    auto src = example(indices[b]);
    std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(b * n));
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<int> LabeledDataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

std::uint64_t LabeledDataset::checksum() const noexcept {
  std::uint64_t h = splitmix64(num_classes);
  for (std::size_t e : example_shape) h = splitmix64(h ^ e);
  for (double v : features) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix64(h ^ bits);
  }
  for (int y : labels) h = splitmix64(h ^ static_cast<std::uint64_t>(y));
  return h;
}

void LabeledDataset::validate() const {
  if (num_classes < 2) throw InputError("dataset needs at least 2 classes");
  if (features.size() != size() * example_size()) throw InputError("dataset feature buffer has the wrong size");
  for (int y : labels)
    if (y < 0 || y >= static_cast<int>(num_classes)) throw InputError("dataset label out of range");
}

const char* dataset_kind_name(DatasetKind kind) noexcept {
  switch (kind) {
    case DatasetKind::gaussian_blobs: return "blobs";
    case DatasetKind::synthetic_images: return "images";
    case DatasetKind::idx_files: return "idx";
    case DatasetKind::cifar_binary: return "cifar";
  }
  return "unknown";
}

DatasetSpec DatasetSpec::parse(std::string_view text) {
  DatasetSpec spec;
  const std::size_t colon = text.find(':');
  const std::string_view kind = text.substr(0, colon);
  if (kind == "blobs") {
    spec.kind = DatasetKind::gaussian_blobs;
  } else if (kind == "images") {
    spec.kind = DatasetKind::synthetic_images;
    spec.noise = 0.15;
  } else if (kind == "idx") {
    spec.kind = DatasetKind::idx_files;
  } else if (kind == "cifar") {
    spec.kind = DatasetKind::cifar_binary;
  } else {
    throw ConfigError("unknown dataset kind '" + std::string(kind) + "' (expected blobs, images, idx or cifar)");
  }
  if (colon == std::string_view::npos) return spec;

  std::string images, labels;
  for (const std::string& item : split_list(text.substr(colon + 1), ',')) {
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("dataset option '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "classes") spec.num_classes = parse_number<std::size_t>(key, value);
    else if (key == "train") spec.train_per_class = parse_number<std::size_t>(key, value);
    else if (key == "test") spec.test_per_class = parse_number<std::size_t>(key, value);
    else if (key == "dim") spec.dim = parse_number<std::size_t>(key, value);
    else if (key == "size") spec.image_size = parse_number<std::size_t>(key, value);
    else if (key == "sep") spec.separation = parse_number<double>(key, value);
    else if (key == "noise") spec.noise = parse_number<double>(key, value);
    else if (key == "seed") spec.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "images") images = value;
    else if (key == "labels") labels = value;
    else if (key == "files") spec.files = split_list(value, '+');
    else if (key == "test_files") spec.test_files = split_list(value, '+');
    else if (key == "keep") {
      spec.keep.clear();
      for (const auto& v : split_list(value, '+')) spec.keep.push_back(parse_number<int>(key, v));
    } else {
      throw ConfigError("unknown dataset option '" + key + "'");
    }
  }
  if (spec.kind == DatasetKind::idx_files && (!images.empty() || !labels.empty())) spec.files = {images, labels};
  spec.validate();
  return spec;
}

std::string DatasetSpec::to_string() const {
  std::ostringstream os;
  os << dataset_kind_name(kind) << ':';
  if (synthetic()) {
    os << "classes=" << num_classes << ",train=" << train_per_class << ",test=" << test_per_class;
    if (kind == DatasetKind::gaussian_blobs) os << ",dim=" << dim << ",sep=" << format_double(separation);
    else os << ",size=" << image_size;
    os << ",noise=" << format_double(noise) << ",seed=" << seed;
  } else if (kind == DatasetKind::idx_files) {
    os << "images=" << (files.size() > 0 ? files[0] : "") << ",labels=" << (files.size() > 1 ? files[1] : "");
  } else {
    os << "files=" << join(files, '+');
    if (!test_files.empty()) os << ",test_files=" << join(test_files, '+');
  }
  if (!keep.empty()) {
    std::vector<std::string> parts;
    for (int k : keep) parts.push_back(std::to_string(k));
    os << ",keep=" << join(parts, '+');
  }
  return os.str();
}

void DatasetSpec::validate() const {
  if (synthetic()) {
    if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (train_per_class < 1 || test_per_class < 1) throw ConfigError("per-class counts must be at least 1");
    if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
    if (kind == DatasetKind::gaussian_blobs && dim < 1) throw ConfigError("blob dimension must be positive");
    if (kind == DatasetKind::synthetic_images && image_size < 4) throw ConfigError("image size must be at least 4");
  } else if (kind == DatasetKind::idx_files) {
    if (files.size() != 2 || files[0].empty() || files[1].empty())
      throw ConfigError("idx dataset needs images=PATH and labels=PATH");
  } else if (files.empty()) {
    throw ConfigError("cifar dataset needs files=PATH[+PATH...]");
  }
  if (!keep.empty() && std::set<int>(keep.begin(), keep.end()).size() < 2)
    throw ConfigError("keep= must list at least 2 distinct classes");
}

LabeledDataset generate_blobs(const DatasetSpec& spec, Split split) {
  spec.validate();
  const std::size_t classes = spec.num_classes, dim = spec.dim;
  const std::size_t per_class = split == Split::train ? spec.train_per_class : spec.test_per_class;

  // Centres are drawn from their own stream so train and test share them.
  std::vector<double> centres(classes * dim, 0.0);
  const double radius = spec.separation * spec.noise / std::numbers::sqrt2;
  if (dim >= classes) {
    for (std::size_t c = 0; c < classes; ++c) centres[c * dim + c] = radius;
  } else {
    Rng centre_rng(derive_seed(spec.seed, 0xCE47));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t c = 0; c < classes; ++c) {
      double norm = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        centres[c * dim + d] = normal(centre_rng);
        norm += centres[c * dim + d] * centres[c * dim + d];
      }
      norm = std::sqrt(norm);
      for (std::size_t d = 0; d < dim; ++d) centres[c * dim + d] *= radius / norm;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (std::size_t c = 0; c < classes; ++c) mean += centres[c * dim + d];
    mean /= static_cast<double>(classes);
    for (std::size_t c = 0; c < classes; ++c) centres[c * dim + d] -= mean;
  }

  LabeledDataset out;
  out.example_shape = {dim};
  out.num_classes = classes;
  out.features.reserve(classes * per_class * dim);
  Rng rng(split_seed(spec.seed, split));
  std::normal_distribution<double> normal(0.0, spec.noise);
  // Interleave classes so contiguous slices are balanced.
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t d = 0; d < dim; ++d) out.features.push_back(centres[c * dim + d] + normal(rng));
      out.labels.push_back(static_cast<int>(c));
    }
  return out;
}

LabeledDataset generate_synthetic_images(const DatasetSpec& spec, Split split) {
  spec.validate();
  const std::size_t classes = spec.num_classes, size = spec.image_size;
  const std::size_t per_class = split == Split::train ? spec.train_per_class : spec.test_per_class;
  LabeledDataset out;
  out.example_shape = {1, size, size};
  out.num_classes = classes;
  out.features.reserve(classes * per_class * size * size);

  Rng rng(split_seed(spec.seed, split));
  std::uniform_real_distribution<double> offset_dist(-0.15 * static_cast<double>(size), 0.15 * static_cast<double>(size));
  std::uniform_real_distribution<double> bright_dist(0.7, 1.0);
  std::uniform_real_distribution<double> jitter_dist(-0.08, 0.08);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const double centre = (static_cast<double>(size) - 1.0) / 2.0;
  const double half_width = std::max(1.0, static_cast<double>(size) / 12.0);

  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      const double angle = std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes) + jitter_dist(rng);
      // Unit normal of the bar; distance along it decides intensity.
      const double nx = -std::sin(angle), ny = std::cos(angle);
      const double offset = offset_dist(rng);
      const double brightness = bright_dist(rng);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double dist = std::abs((static_cast<double>(x) - centre) * nx + (static_cast<double>(y) - centre) * ny - offset);
          const double bar = std::clamp(half_width + 0.5 - dist, 0.0, 1.0) * brightness;
          out.features.push_back(std::clamp(bar + noise(rng), 0.0, 1.0));
        }
      out.labels.push_back(static_cast<int>(c));
    }
  return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  if (read_be32(images, 0, images_path) != 0x00000803u)
    throw FormatError("'" + images_path + "' is not an IDX image file (bad magic)", 0);
  if (read_be32(labels, 0, labels_path) != 0x00000801u)
    throw FormatError("'" + labels_path + "' is not an IDX label file (bad magic)", 0);
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n != n_labels)
    throw FormatError("image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels), 4);
  if (rows == 0 || cols == 0) throw FormatError("IDX image dimensions must be positive", 8);
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + n * pixels)
    throw FormatError("'" + images_path + "' truncated: expected " + std::to_string(16 + n * pixels) + " bytes",
                      images.size());
  if (labels.size() < 8 + n) throw FormatError("'" + labels_path + "' truncated", labels.size());

  LabeledDataset out;
  out.example_shape = {1, rows, cols};
  out.features.resize(n * pixels);
  for (std::size_t i = 0; i < n * pixels; ++i) out.features[i] = images[16 + i] / 255.0;
  int max_label = 0;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = labels[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  return out;
}

LabeledDataset load_cifar_binary(std::span<const std::string> paths) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  if (paths.empty()) throw InputError("no CIFAR files given");
  LabeledDataset out;
  out.example_shape = {3, 32, 32};
  out.num_classes = 10;
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kRecord != 0)
      throw FormatError("'" + path + "' is not a whole number of 3073-byte CIFAR records",
                        bytes.size() - bytes.size() % kRecord);
    const std::size_t n = bytes.size() / kRecord;
    out.features.reserve(out.features.size() + n * kPixels);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t base = r * kRecord;
      if (bytes[base] > 9) throw FormatError("CIFAR label " + std::to_string(bytes[base]) + " out of range", base);
      out.labels.push_back(bytes[base]);
      for (std::size_t p = 0; p < kPixels; ++p) out.features.push_back(bytes[base + 1 + p] / 255.0);
    }
  }
  return out;
}

LabeledDataset filter_classes(const LabeledDataset& data, std::span<const int> keep) {
  std::vector<int> sorted(keep.begin(), keep.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.size() < 2) throw ConfigError("class filter must keep at least 2 classes");
  for (int c : sorted)
    if (c < 0 || c >= static_cast<int>(data.num_classes))
      throw ConfigError("class filter entry " + std::to_string(c) + " outside [0, " + std::to_string(data.num_classes) +
                        ")");
  LabeledDataset out;
  out.example_shape = data.example_shape;
  out.num_classes = sorted.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), data.labels[i]);
    if (it == sorted.end() || *it != data.labels[i]) continue;
    auto ex = data.example(i);
    out.features.insert(out.features.end(), ex.begin(), ex.end());
    out.labels.push_back(static_cast<int>(it - sorted.begin()));
  }
  return out;
}

LabeledDataset make_dataset(const DatasetSpec& spec, Split split) {
  spec.validate();
  LabeledDataset data;
  switch (spec.kind) {
    case DatasetKind::gaussian_blobs: data = generate_blobs(spec, split); break;
    case DatasetKind::synthetic_images: data = generate_synthetic_images(spec, split); break;
    case DatasetKind::idx_files:
      if (split == Split::test && spec.test_files.size() == 2) data = load_idx(spec.test_files[0], spec.test_files[1]);
      else data = load_idx(spec.files[0], spec.files[1]);
      break;
    case DatasetKind::cifar_binary:
      data = load_cifar_binary(split == Split::test && !spec.test_files.empty() ? spec.test_files : spec.files);
      break;
  }
  if (!spec.keep.empty()) data = filter_classes(data, spec.keep);
  data.validate();
  return data;
}

}  // namespace amcl
