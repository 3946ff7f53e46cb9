#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "vmoe/checkpoint.hpp"
#include "vmoe/dataset.hpp"
#include "vmoe/errors.hpp"
#include "vmoe/trainer.hpp"

namespace vmoe {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "vmoe_dataio_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Hand-assembled CIFAR record bytes: label byte(s), then R, G, B planes.
std::vector<char> cifar_record(std::initializer_list<int> labels, std::uint8_t seed) {
  std::vector<char> rec;
  for (int l : labels) rec.push_back(static_cast<char>(l));
  for (int i = 0; i < 3072; ++i) rec.push_back(static_cast<char>((i * 7 + seed) & 0xff));
  return rec;
}

TEST(Cifar, DecodesPlanarRecordsToHwc) {
  auto path = scratch("two_records.bin");
  {
    std::ofstream out(path, std::ios::binary);
    for (auto [label, seed] : {std::pair{3, 1}, std::pair{9, 2}}) {
      auto r = cifar_record({label}, static_cast<std::uint8_t>(seed));
      out.write(r.data(), static_cast<std::streamsize>(r.size()));
    }
  }
  Dataset d = load_cifar(path, CifarVariant::kCifar10);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.fine_labels, (std::vector<int>{3, 9}));
  EXPECT_FALSE(d.has_coarse_labels());
  // Pixel (y, x) channel c comes from plane c at y * 32 + x.
  for (int y : {0, 5, 31})
    for (int x : {0, 17, 31})
      for (int c = 0; c < 3; ++c) {
        const int plane_index = c * 1024 + y * 32 + x;
        EXPECT_EQ(d.image(1)[static_cast<std::size_t>((y * 32 + x) * 3 + c)], (plane_index * 7 + 2) & 0xff);
      }
}

TEST(Cifar, TenThousandRecordBatch) {
  std::mt19937_64 rng(1);
  Dataset d;
  d.image_size = 32;
  d.num_classes = 10;
  d.pixels.resize(10000 * 3072);
  for (auto& p : d.pixels) p = static_cast<std::uint8_t>(rng());
  for (int i = 0; i < 10000; ++i) d.fine_labels.push_back(static_cast<int>(rng() % 10));
  auto path = scratch("data_batch_1.bin");
  write_cifar(d, path, CifarVariant::kCifar10);
  EXPECT_EQ(fs::file_size(path), 10000u * 3073u);
  Dataset back = load_cifar(path, CifarVariant::kCifar10);
  EXPECT_EQ(back.size(), 10000u);
  EXPECT_EQ(back.fine_labels, d.fine_labels);
  EXPECT_EQ(back.pixels, d.pixels);
  for (int y : back.fine_labels) {
    EXPECT_GE(y, 0);
    EXPECT_LT(y, 10);
  }
}

TEST(Cifar, HundredVariantCarriesCoarseLabels) {
  // Five fine classes per coarse class, as in the published layout.
  Dataset d;
  d.image_size = 32;
  d.num_classes = 100;
  d.num_coarse_classes = 20;
  for (int f = 0; f < 100; ++f) {
    d.fine_labels.push_back(f);
    d.coarse_labels.push_back((f * 7) % 20);
  }
  d.pixels.assign(100 * 3072, 9);
  auto path = scratch("train.bin");
  write_cifar(d, path, CifarVariant::kCifar100);
  EXPECT_EQ(fs::file_size(path), 100u * 3074u);
  auto raw = read_bytes(path);
  EXPECT_EQ(raw[3074], static_cast<char>(7));  // second record: coarse first
  EXPECT_EQ(raw[3075], static_cast<char>(1));
  Dataset back = load_cifar(path, CifarVariant::kCifar100);
  EXPECT_EQ(back.coarse_labels, d.coarse_labels);
  auto map = provided_superclasses(back.fine_labels, back.coarse_labels);
  EXPECT_EQ(map.sizes(), std::vector<int>(20, 5));
}

TEST(Cifar, TruncatedFileNamesSizesAndOffset) {
  auto path = scratch("truncated.bin");
  {
    std::ofstream out(path, std::ios::binary);
    for (int i = 0; i < 3; ++i) {
      auto r = cifar_record({1}, 0);
      out.write(r.data(), static_cast<std::streamsize>(r.size()) - (i == 2 ? 1 : 0));
    }
  }
  try {
    load_cifar(path, CifarVariant::kCifar10);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("9218"), std::string::npos) << msg;  // actual size
    EXPECT_NE(msg.find("9219"), std::string::npos) << msg;  // expected size
    EXPECT_NE(msg.find("offset 6146"), std::string::npos) << msg;
  }
}

TEST(Cifar, BadLabelByteIsRejected) {
  auto path = scratch("bad_label.bin");
  {
    std::ofstream out(path, std::ios::binary);
    auto r = cifar_record({12}, 0);
    out.write(r.data(), static_cast<std::streamsize>(r.size()));
  }
  EXPECT_THROW(load_cifar(path, CifarVariant::kCifar10), FormatError);
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  SyntheticSpec spec{.num_classes = 6, .num_superclasses = 3, .images_per_class = 4, .image_size = 16, .seed = 5};
  auto a = synthetic_dataset(spec), b = synthetic_dataset(spec);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.fine_labels, b.fine_labels);
  spec.seed = 6;
  EXPECT_NE(synthetic_dataset(spec).pixels, a.pixels);
}

// Mean hue in degrees of all images of a class.
double mean_hue(const Dataset& d, int cls) {
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.fine_labels[i] != cls) continue;
    auto img = d.image(i);
    for (std::size_t p = 0; p < img.size(); p += 3) {
      const double r = img[p], g = img[p + 1], b = img[p + 2];
      // Hue angle from the opponent-colour plane.
      const double a = std::atan2(std::sqrt(3.0) * (g - b), 2 * r - g - b);
      sx += std::cos(a);
      sy += std::sin(a);
    }
  }
  return std::atan2(sy, sx) * 180 / std::numbers::pi;
}

double hue_gap(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360 - d);
}

TEST(Synthetic, ClassesShareTheirSuperClassHueFamily) {
  auto d = synthetic_dataset({.num_classes = 4, .num_superclasses = 2, .images_per_class = 10, .image_size = 16});
  EXPECT_EQ(d.coarse_labels[0], 0);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.coarse_labels[i], d.fine_labels[i] / 2);
  const double h0 = mean_hue(d, 0), h1 = mean_hue(d, 1), h2 = mean_hue(d, 2), h3 = mean_hue(d, 3);
  EXPECT_LT(hue_gap(h0, h1), 40);
  EXPECT_LT(hue_gap(h2, h3), 40);
  EXPECT_GT(hue_gap(h0, h2), 120);
  EXPECT_GT(hue_gap(h1, h3), 120);
}

TEST(Synthetic, RejectsUnevenFamilies) {
  EXPECT_THROW(synthetic_dataset({.num_classes = 5, .num_superclasses = 2}), ConfigError);
}

TEST(Upsample, NearestNeighbourRepeatsPixels) {
  Dataset d;
  d.image_size = 2;
  d.num_classes = 1;
  d.fine_labels = {0};
  d.pixels = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  auto up = upsample_nearest(d, 4);
  ASSERT_EQ(up.pixels.size(), 48u);
  auto px = [&](int y, int x, int c) { return up.pixels[static_cast<std::size_t>((y * 4 + x) * 3 + c)]; };
  EXPECT_EQ(px(0, 0, 0), 1);
  EXPECT_EQ(px(1, 1, 2), 3);
  EXPECT_EQ(px(0, 3, 0), 4);
  EXPECT_EQ(px(3, 0, 1), 8);
  EXPECT_EQ(px(3, 3, 2), 12);
}

TEST(Split, StratifiedAndDisjoint) {
  auto d = synthetic_dataset({.num_classes = 4, .num_superclasses = 2, .images_per_class = 10, .image_size = 8});
  auto [train, val] = split_holdout(d, 0.2, 3);
  EXPECT_EQ(train.size(), 32u);
  EXPECT_EQ(val.size(), 8u);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(std::count(val.fine_labels.begin(), val.fine_labels.end(), c), 2);
  auto again = split_holdout(d, 0.2, 3);
  EXPECT_EQ(again.second.pixels, val.pixels);
  EXPECT_EQ(take_per_class(d, 3).size(), 12u);
}

TEST(Augment, KeepsShapeAndFlipsOrShifts) {
  std::vector<std::uint8_t> img(8 * 8 * 3);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<std::uint8_t>(i);
  std::mt19937_64 rng(0);
  bool changed = false;
  for (int t = 0; t < 10; ++t) {
    auto out = augment_image(img, 8, 2, rng);
    ASSERT_EQ(out.size(), img.size());
    changed = changed || out != img;
  }
  EXPECT_TRUE(changed);
  auto same = augment_image(img, 8, 0, rng);
  const bool identity = same == img;
  std::vector<std::uint8_t> flipped(img.size());
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) flipped[(y * 8 + x) * 3 + c] = img[(y * 8 + 7 - x) * 3 + c];
  EXPECT_TRUE(identity || same == flipped);
}

ModelConfig tiny_moe() {
  ModelConfig cfg;
  cfg.vit = {.image_size = 8, .patch_size = 4, .num_layers = 2, .hidden_dim = 8, .num_heads = 2, .num_classes = 4};
  cfg.moe = MoEConfig{.num_experts = 3, .top_k = 2, .num_moe_layers = 1};
  return cfg;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto cfg = tiny_moe();
  auto params = init_model<float>(cfg, 3);
  TrainConfig tc;
  Optimizer opt(tc, params);
  auto ck = make_checkpoint(params, cfg, 7, 99, &opt);
  auto a = scratch("a.ckpt"), b = scratch("b.ckpt");
  save_checkpoint(ck, a);
  auto loaded = load_checkpoint(a);
  EXPECT_EQ(loaded.epoch, 7);
  EXPECT_EQ(loaded.seed, 99u);
  EXPECT_EQ(loaded.optimizer, "adamw");
  EXPECT_EQ(config_entries(loaded.model), config_entries(cfg));
  save_checkpoint(loaded, b);
  EXPECT_EQ(read_bytes(a), read_bytes(b));
}

TEST(Checkpoint, ParametersRoundTripBitExactly) {
  auto cfg = tiny_moe();
  auto params = init_model<float>(cfg, 4);
  auto path = scratch("bits.ckpt");
  save_checkpoint(make_checkpoint(params, cfg, 1, 0), path);
  auto restored = restore_params(load_checkpoint(path));
  auto a = named_parameters(params), b = named_parameters(restored);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(std::memcmp(a[i].second.value().data(), b[i].second.value().data(), a[i].second.size() * sizeof(float)), 0);
  }
  auto data = synthetic_dataset({.num_classes = 4, .num_superclasses = 2, .images_per_class = 3, .image_size = 8});
  EXPECT_EQ(predict(params, cfg, data), predict(restored, cfg, data));
  auto ma = evaluate(params, cfg, data), mb = evaluate(restored, cfg, data);
  EXPECT_EQ(ma.top1, mb.top1);
  EXPECT_EQ(ma.class_loss, mb.class_loss);
}

// Rewrites one manifest line of a saved checkpoint.
void patch_manifest(const fs::path& path, const std::string& from, const std::string& to) {
  auto bytes = read_bytes(path);
  std::string s(bytes.begin(), bytes.end());
  auto pos = s.find(from);
  ASSERT_NE(pos, std::string::npos);
  s.replace(pos, from.size(), to);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << s;
}

TEST(Checkpoint, RejectsOffsetPastBlob) {
  auto cfg = tiny_moe();
  auto params = init_model<float>(cfg, 1);
  auto path = scratch("corrupt.ckpt");
  auto ck = make_checkpoint(params, cfg, 1, 0);
  save_checkpoint(ck, path);
  // head.bias is the last array; move it beyond the end.
  std::size_t total = 0;
  for (const auto& a : ck.parameters) total += a.values.size();
  const auto& last = ck.parameters.back();
  const std::string line = "array param head.bias 4 " + std::to_string(total - 4) + " 4";
  ASSERT_EQ(last.name, "head.bias");
  patch_manifest(path, line, "array param head.bias 4 " + std::to_string(total + 40) + " 4");
  try {
    load_checkpoint(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("past the end"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RejectsOverlapAndVersion) {
  auto cfg = tiny_moe();
  auto params = init_model<float>(cfg, 1);
  auto path = scratch("overlap.ckpt");
  auto ck = make_checkpoint(params, cfg, 1, 0);
  save_checkpoint(ck, path);
  std::size_t total = 0;
  for (const auto& a : ck.parameters) total += a.values.size();
  patch_manifest(path, "head.bias 4 " + std::to_string(total - 4), "head.bias 4 " + std::to_string(total - 6));
  EXPECT_THROW(load_checkpoint(path), FormatError);
  save_checkpoint(ck, path);
  patch_manifest(path, "vmoe-checkpoint 1", "vmoe-checkpoint 2");
  try {
    load_checkpoint(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedBlobIsRejected) {
  auto cfg = tiny_moe();
  auto params = init_model<float>(cfg, 1);
  auto path = scratch("short.ckpt");
  save_checkpoint(make_checkpoint(params, cfg, 1, 0), path);
  fs::resize_file(path, fs::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

}  // namespace
}  // namespace vmoe
