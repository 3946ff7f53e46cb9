#pragma once

// Run files: INI sections [model] [moe] [loss] [train] [data] [superclass]
// [output], one `key = value` per line. Command-line `--set section.key=v`
// overrides are applied after the file, in order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vmoe/config.hpp"
#include "vmoe/dataset.hpp"
#include "vmoe/trainer.hpp"

namespace vmoe::cli {

enum class DataSource { kSynthetic, kCifar10, kCifar100 };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  std::filesystem::path dir;  // extracted CIFAR binaries
  SyntheticSpec synthetic;    // image_size follows the model
  int max_per_class = 0;      // 0 keeps everything
  // Share of the training split held out for validation. With 0, CIFAR runs
  // validate on the test split.
  double val_fraction = 0.1;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DataConfig data;
  SuperclassPlan superclass;
  std::filesystem::path output_dir = "runs/default";
};

// Relative data and map paths in a run file resolve against the file's
// directory; output.dir stays relative to the working directory.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

// Parses text; `base` anchors relative paths.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base,
                           const std::vector<std::string>& overrides = {});

// Applies one "section.key=value" assignment; unknown keys throw ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value,
                   const std::filesystem::path& base);

// Structural checks plus existence of every referenced file.
void validate(const RunConfig& cfg);

// The fully resolved config as a run file; loading it reproduces the run.
std::string format_run_config(const RunConfig& cfg);

// output_dir, placed under $VMOE_OUTPUT_ROOT when that is set and the
// directory is relative.
std::filesystem::path output_root(const RunConfig& cfg);

// (train, validation) at the model's input size.
std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg);

// The test split for CIFAR; the validation split for synthetic data.
Dataset load_eval_split(const RunConfig& cfg, const std::string& split);

}  // namespace vmoe::cli
