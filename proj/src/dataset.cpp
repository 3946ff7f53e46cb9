#include "vmoe/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "vmoe/errors.hpp"

namespace vmoe {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.image_size = image_size;
  out.num_classes = num_classes;
  out.num_coarse_classes = num_coarse_classes;
  out.split = split;
  out.pixels.reserve(indices.size() * image_bytes());
  for (std::size_t i : indices) {
    if (i >= size()) throw ContractError("subset index " + std::to_string(i) + " out of range");
    auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.fine_labels.push_back(fine_labels[i]);
    if (has_coarse_labels()) out.coarse_labels.push_back(coarse_labels[i]);
  }
  return out;
}

void validate(const Dataset& d) {
  if (d.image_size <= 0) throw DataError("dataset image_size must be positive");
  if (d.pixels.size() != d.size() * d.image_bytes()) {
    throw DataError("dataset holds " + std::to_string(d.pixels.size()) + " pixel bytes for " +
                    std::to_string(d.size()) + " images of " + std::to_string(d.image_bytes()) + " bytes");
  }
  if (d.has_coarse_labels() && d.coarse_labels.size() != d.size()) {
    throw DataError("coarse label count differs from fine label count");
  }
  for (int y : d.fine_labels) {
    if (y < 0 || y >= d.num_classes) throw DataError("fine label " + std::to_string(y) + " outside [0, num_classes)");
  }
  for (int y : d.coarse_labels) {
    if (y < 0 || y >= d.num_coarse_classes) {
      throw DataError("coarse label " + std::to_string(y) + " outside [0, num_coarse_classes)");
    }
  }
}

namespace {

constexpr int kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

std::size_t label_bytes(CifarVariant v) { return v == CifarVariant::kCifar10 ? 1 : 2; }

}  // namespace

Dataset load_cifar(const std::filesystem::path& file, CifarVariant variant) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR file " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t record = label_bytes(variant) + kCifarPixels;
  if (bytes.empty()) throw FormatError(file.string() + ": empty file, expected records of " + std::to_string(record) + " bytes");
  if (bytes.size() % record != 0) {
    const std::size_t whole = bytes.size() / record;
    throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) + " bytes is not a multiple of the " +
                      std::to_string(record) + "-byte record (expected " + std::to_string(whole * record) + " or " +
                      std::to_string((whole + 1) * record) + "); truncated record at byte offset " +
                      std::to_string(whole * record));
  }
  Dataset d;
  d.image_size = kCifarSide;
  d.num_classes = variant == CifarVariant::kCifar10 ? 10 : 100;
  d.num_coarse_classes = variant == CifarVariant::kCifar10 ? 0 : 20;
  const std::size_t n = bytes.size() / record;
  d.pixels.resize(n * kCifarPixels);
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t offset = r * record;
    const std::uint8_t* rec = bytes.data() + offset;
    int fine = rec[0];
    if (variant == CifarVariant::kCifar100) {
      d.coarse_labels.push_back(rec[0]);
      fine = rec[1];
      if (rec[0] >= d.num_coarse_classes) {
        throw FormatError(file.string() + ": coarse label " + std::to_string(rec[0]) + " at byte offset " +
                          std::to_string(offset));
      }
    }
    if (fine >= d.num_classes) {
      throw FormatError(file.string() + ": label " + std::to_string(fine) + " at byte offset " +
                        std::to_string(offset + label_bytes(variant) - 1));
    }
    d.fine_labels.push_back(fine);
    const std::uint8_t* px = rec + label_bytes(variant);
    std::uint8_t* out = d.pixels.data() + r * kCifarPixels;
    for (std::size_t i = 0; i < plane; ++i) {
      for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = px[c * plane + i];
    }
  }
  return d;
}

Dataset load_cifar_split(const std::filesystem::path& dir, CifarVariant variant, const std::string& split) {
  if (split != "train" && split != "test") throw ConfigError("CIFAR split must be train or test, got " + split);
  std::vector<std::string> files;
  if (variant == CifarVariant::kCifar100) {
    files = {split + ".bin"};
  } else if (split == "test") {
    files = {"test_batch.bin"};
  } else {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  }
  Dataset all;
  for (const auto& name : files) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw DataError("missing CIFAR file " + path.string());
    Dataset part = load_cifar(path, variant);
    if (all.size() == 0) {
      all = std::move(part);
      continue;
    }
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    all.fine_labels.insert(all.fine_labels.end(), part.fine_labels.begin(), part.fine_labels.end());
    all.coarse_labels.insert(all.coarse_labels.end(), part.coarse_labels.begin(), part.coarse_labels.end());
  }
  all.split = split;
  return all;
}

void write_cifar(const Dataset& d, const std::filesystem::path& file, CifarVariant variant) {
  validate(d);
  if (d.image_size != kCifarSide) throw DataError("CIFAR records hold 32x32 images");
  if (variant == CifarVariant::kCifar100 && !d.has_coarse_labels()) throw DataError("CIFAR-100 records need coarse labels");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot write " + file.string());
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  std::vector<char> rec(label_bytes(variant) + kCifarPixels);
  for (std::size_t r = 0; r < d.size(); ++r) {
    std::size_t pos = 0;
    if (variant == CifarVariant::kCifar100) rec[pos++] = static_cast<char>(d.coarse_labels[r]);
    rec[pos++] = static_cast<char>(d.fine_labels[r]);
    auto img = d.image(r);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) rec[pos++] = static_cast<char>(img[i * 3 + c]);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw FormatError("failed writing " + file.string());
}

namespace {

// h in degrees, s and v in [0, 1].
std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1));
  const double m = v - c;
  const int sector = static_cast<int>(h / 60.0) % 6;
  constexpr int kOrder[6][3] = {{0, 1, 2}, {1, 0, 2}, {2, 0, 1}, {2, 1, 0}, {1, 2, 0}, {0, 2, 1}};
  const double parts[3] = {c, x, 0.0};
  std::array<double, 3> rgb{};
  for (int i = 0; i < 3; ++i) rgb[static_cast<std::size_t>(i)] = parts[kOrder[sector][i]] + m;
  return rgb;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

}  // namespace

Dataset synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.num_superclasses < 1 || spec.num_classes % spec.num_superclasses != 0) {
    throw ConfigError("synthetic data: num_classes must be a positive multiple of num_superclasses");
  }
  if (spec.images_per_class < 1 || spec.image_size < 1) throw ConfigError("synthetic data: sizes must be positive");
  const int per_family = spec.num_classes / spec.num_superclasses;
  const double family_width = 360.0 / spec.num_superclasses;
  const double period = std::max(3.0, spec.image_size / 6.0);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.04);

  Dataset d;
  d.image_size = spec.image_size;
  d.num_classes = spec.num_classes;
  d.num_coarse_classes = spec.num_superclasses;
  d.split = "synthetic";
  const std::size_t bytes = static_cast<std::size_t>(spec.image_size) * spec.image_size * 3;
  d.pixels.reserve(bytes * static_cast<std::size_t>(spec.num_classes) * spec.images_per_class);
  for (int i = 0; i < spec.images_per_class; ++i) {
    for (int c = 0; c < spec.num_classes; ++c) {
      const int family = c / per_family;
      const int member = c % per_family;
      const double offset = per_family > 1 ? (member - (per_family - 1) / 2.0) * 0.3 * family_width / per_family : 0.0;
      const double hue = family_width * (family + 0.5) + offset + (unit(rng) - 0.5) * 0.15 * family_width;
      const double angle = std::numbers::pi * (member + 0.5) / per_family;
      const double phase = 2 * std::numbers::pi * unit(rng);
      const double brightness = 0.6 + (unit(rng) - 0.5) * 0.2;
      const double cs = std::cos(angle), sn = std::sin(angle);
      for (int y = 0; y < spec.image_size; ++y) {
        for (int x = 0; x < spec.image_size; ++x) {
          const double stripe = std::sin(2 * std::numbers::pi * (x * cs + y * sn) / period + phase);
          const double v = std::clamp(brightness + 0.25 * stripe, 0.0, 1.0);
          auto rgb = hsv_to_rgb(hue, 0.75, v);
          for (double ch : rgb) d.pixels.push_back(to_byte(ch + noise(rng)));
        }
      }
      d.fine_labels.push_back(c);
      d.coarse_labels.push_back(family);
    }
  }
  return d;
}

Dataset upsample_nearest(const Dataset& d, int image_size) {
  if (image_size <= 0) throw ConfigError("upsample target size must be positive");
  if (image_size == d.image_size) return d;
  Dataset out = d;
  out.image_size = image_size;
  out.pixels.assign(d.size() * out.image_bytes(), 0);
  const int src = d.image_size;
  for (std::size_t n = 0; n < d.size(); ++n) {
    auto in = d.image(n);
    std::uint8_t* dst = out.pixels.data() + n * out.image_bytes();
    for (int y = 0; y < image_size; ++y) {
      const int sy = y * src / image_size;
      for (int x = 0; x < image_size; ++x) {
        const int sx = x * src / image_size;
        for (int c = 0; c < 3; ++c) dst[(y * image_size + x) * 3 + c] = in[static_cast<std::size_t>((sy * src + sx) * 3 + c)];
      }
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("holdout fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(d.num_classes));
  for (std::size_t i = 0; i < d.size(); ++i) by_class.at(static_cast<std::size_t>(d.fine_labels[i])).push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep, held;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size())));
    held.insert(held.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_held));
    keep.insert(keep.end(), members.begin() + static_cast<std::ptrdiff_t>(n_held), members.end());
  }
  std::sort(keep.begin(), keep.end());
  std::sort(held.begin(), held.end());
  auto a = d.subset(keep), b = d.subset(held);
  a.split = d.split + "/train";
  b.split = d.split + "/val";
  return {std::move(a), std::move(b)};
}

Dataset take_per_class(const Dataset& d, int per_class) {
  std::vector<int> seen(static_cast<std::size_t>(d.num_classes), 0);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (seen[static_cast<std::size_t>(d.fine_labels[i])]++ < per_class) idx.push_back(i);
  }
  return d.subset(idx);
}

std::vector<std::uint8_t> augment_image(std::span<const std::uint8_t> image, int image_size, int pad,
                                        std::mt19937_64& rng) {
  std::uniform_int_distribution<int> shift(-pad, pad);
  const int dy = shift(rng), dx = shift(rng);
  const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  std::vector<std::uint8_t> out(image.size(), 0);
  for (int y = 0; y < image_size; ++y) {
    const int sy = y + dy;
    if (sy < 0 || sy >= image_size) continue;
    for (int x = 0; x < image_size; ++x) {
      const int sx = (flip ? image_size - 1 - x : x) + dx;
      if (sx < 0 || sx >= image_size) continue;
      for (int c = 0; c < 3; ++c) {
        out[static_cast<std::size_t>((y * image_size + x) * 3 + c)] = image[static_cast<std::size_t>((sy * image_size + sx) * 3 + c)];
      }
    }
  }
  return out;
}

}  // namespace vmoe
