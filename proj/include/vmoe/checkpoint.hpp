#pragma once

// Versioned checkpoints: a text manifest followed by one little-endian
// float32 blob. The manifest lists the run state, the model config and
// every array as (kind, name, shape, offset, count) with offsets in floats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmoe/config.hpp"
#include "vmoe/model.hpp"

namespace vmoe {

inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig model;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string optimizer;  // empty when no optimizer state is stored
  long long optimizer_step = 0;
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> optimizer_state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Validates version, manifest syntax and that every array lies inside the
// blob without overlap before reading any values.
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
std::vector<NamedArray> export_parameters(ModelParams<Scalar>& p) {
  std::vector<NamedArray> out;
  for_each_parameter(p, [&](const std::string& name, Tensor<Scalar>& t) {
    const auto& v = t.value();
    out.push_back({name, t.shape(), std::vector<float>(v.data(), v.data() + v.size())});
  });
  return out;
}

// Names and shapes must match the model exactly.
template <typename Scalar>
void import_parameters(ModelParams<Scalar>& p, const std::vector<NamedArray>& arrays) {
  std::size_t i = 0;
  for_each_parameter(p, [&](const std::string& name, Tensor<Scalar>& t) {
    if (i >= arrays.size()) throw FormatError("checkpoint is missing parameter " + name);
    const NamedArray& a = arrays[i++];
    if (a.name != name || a.shape != t.shape()) {
      throw FormatError("checkpoint parameter " + a.name + " " + shape_string(a.shape) + " does not match model " +
                        name + " " + shape_string(t.shape()));
    }
    auto& v = t.mutable_value();
    for (std::size_t j = 0; j < a.values.size(); ++j) v[static_cast<Eigen::Index>(j)] = static_cast<Scalar>(a.values[j]);
  });
  if (i != arrays.size()) throw FormatError("checkpoint holds parameters the model does not have");
}

}  // namespace vmoe
