#include "run_config.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "vmoe/errors.hpp"

namespace vmoe::cli {
namespace {

namespace fs = std::filesystem;

std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::kSynthetic:
      return "synthetic";
    case DataSource::kCifar10:
      return "cifar10";
    case DataSource::kCifar100:
      return "cifar100";
  }
  return "?";
}

DataSource parse_data_source(std::string_view text) {
  for (auto s : {DataSource::kSynthetic, DataSource::kCifar10, DataSource::kCifar100}) {
    if (text == to_string(s)) return s;
  }
  throw ConfigError("data.source: unknown source '" + std::string(text) + "' (expected synthetic, cifar10 or cifar100)");
}

fs::path anchored(const fs::path& base, std::string_view value) {
  fs::path p{std::string(value)};
  return p.is_relative() && !base.empty() ? base / p : p;
}

bool set_data_entry(DataConfig& d, std::string_view key, std::string_view value, const fs::path& base) {
  if (key == "data.source") {
    d.source = parse_data_source(value);
  } else if (key == "data.dir") {
    d.dir = anchored(base, value);
  } else if (key == "data.classes") {
    d.synthetic.num_classes = parse_int(key, value);
  } else if (key == "data.superclasses") {
    d.synthetic.num_superclasses = parse_int(key, value);
  } else if (key == "data.images_per_class") {
    d.synthetic.images_per_class = parse_int(key, value);
  } else if (key == "data.seed") {
    d.synthetic.seed = parse_u64(key, value);
  } else if (key == "data.max_per_class") {
    d.max_per_class = parse_int(key, value);
  } else if (key == "data.val_fraction") {
    d.val_fraction = parse_double(key, value);
  } else {
    return false;
  }
  return true;
}

bool set_superclass_entry(SuperclassPlan& p, std::string_view key, std::string_view value, const fs::path& base) {
  if (key == "superclass.source") {
    p.source = parse_superclass_source(value);
  } else if (key == "superclass.file") {
    p.file = anchored(base, value);
  } else if (key == "superclass.seed") {
    p.seed = parse_u64(key, value);
  } else {
    return false;
  }
  return true;
}

CifarVariant variant_of(DataSource s) {
  return s == DataSource::kCifar10 ? CifarVariant::kCifar10 : CifarVariant::kCifar100;
}

int classes_of(const DataConfig& d) {
  switch (d.source) {
    case DataSource::kCifar10:
      return 10;
    case DataSource::kCifar100:
      return 100;
    case DataSource::kSynthetic:
      break;
  }
  return d.synthetic.num_classes;
}

Dataset at_model_size(Dataset d, const RunConfig& cfg) {
  if (d.image_size != cfg.model.vit.image_size) d = upsample_nearest(d, cfg.model.vit.image_size);
  return d;
}

Dataset synthetic_full(const RunConfig& cfg, std::uint64_t seed) {
  SyntheticSpec spec = cfg.data.synthetic;
  spec.image_size = cfg.model.vit.image_size;
  spec.seed = seed;
  return synthetic_dataset(spec);
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value, const fs::path& base) {
  bool known = false;
  if (key.starts_with("model.") || key.starts_with("moe.")) {
    known = set_config_entry(cfg.model, key, value);
  } else if (key.starts_with("loss.")) {
    known = set_config_entry(cfg.loss, key, value);
  } else if (key.starts_with("train.")) {
    known = set_config_entry(cfg.train, key, value);
  } else if (key.starts_with("data.")) {
    known = set_data_entry(cfg.data, key, value, base);
  } else if (key.starts_with("superclass.")) {
    known = set_superclass_entry(cfg.superclass, key, value, base);
  } else if (key == "output.dir") {
    cfg.output_dir = std::string(value);  // relative to the cwd or $VMOE_OUTPUT_ROOT
    known = true;
  }
  if (!known) throw ConfigError("unknown key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base, const std::vector<std::string>& overrides) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("run file: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = item.fullname();
    if (item.parents.size() != 1) throw ConfigError("'" + key + "' must sit inside one [section]");
    if (item.inputs.size() != 1) throw ConfigError(key + ": expected a single value");
    apply_setting(cfg, key, item.inputs.front(), base);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not section.key=value");
    // Overrides come from the shell, so their paths resolve from the cwd.
    apply_setting(cfg, o.substr(0, eq), o.substr(eq + 1), {});
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read run file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), file.parent_path(), overrides);
}

void validate(const RunConfig& cfg) {
  validate(cfg.model);
  validate(cfg.loss);
  validate(cfg.train);
  const DataConfig& d = cfg.data;
  if (d.val_fraction < 0 || d.val_fraction >= 1) throw ConfigError("data.val_fraction must lie in [0, 1)");
  if (d.max_per_class < 0) throw ConfigError("data.max_per_class must be non-negative");
  if (d.source == DataSource::kSynthetic) {
    if (d.val_fraction == 0) throw ConfigError("data.val_fraction must be positive for synthetic data");
    if (d.synthetic.num_superclasses < 1 || d.synthetic.num_classes % d.synthetic.num_superclasses != 0) {
      throw ConfigError("data.classes must be a positive multiple of data.superclasses");
    }
  } else {
    if (d.dir.empty()) throw ConfigError("data.dir is required for " + std::string(to_string(d.source)));
    if (!fs::is_directory(d.dir)) throw ConfigError("data.dir: " + d.dir.string() + " is not a directory");
    if (cfg.model.vit.image_size % 32 != 0) {
      throw ConfigError("model.image_size must be a multiple of 32 for CIFAR inputs");
    }
  }
  if (cfg.model.vit.num_classes != classes_of(d)) {
    throw ConfigError("model.num_classes is " + std::to_string(cfg.model.vit.num_classes) + " but the data has " +
                      std::to_string(classes_of(d)) + " classes");
  }
  const bool needs_map = cfg.model.moe && cfg.model.moe->routing == RoutingMode::kPerImageSuperclass;
  if (!needs_map) return;
  const int e = cfg.model.moe->num_experts;
  switch (cfg.superclass.source) {
    case SuperclassSource::kFile:
      if (cfg.superclass.file.empty()) throw ConfigError("superclass.file is required when superclass.source = file");
      if (!fs::is_regular_file(cfg.superclass.file)) {
        throw ConfigError("superclass.file: " + cfg.superclass.file.string() + " does not exist");
      }
      break;
    case SuperclassSource::kProvided: {
      const int coarse = d.source == DataSource::kCifar100   ? 20
                         : d.source == DataSource::kCifar10 ? 0
                                                             : d.synthetic.num_superclasses;
      if (coarse == 0) throw ConfigError("superclass.source = provided needs coarse labels; cifar10 has none");
      if (coarse != e) {
        throw ConfigError("superclass.source = provided gives " + std::to_string(coarse) +
                          " super-classes but moe.num_experts is " + std::to_string(e));
      }
      break;
    }
    case SuperclassSource::kRandom:
    case SuperclassSource::kCluster:
      if (e > classes_of(d)) throw ConfigError("moe.num_experts exceeds the number of classes");
      break;
  }
}

std::string format_run_config(const RunConfig& cfg) {
  // Section order is fixed; keys inside a section keep struct order.
  std::vector<std::pair<std::string, ConfigEntries>> sections = {
      {"model", {}}, {"moe", {}}, {"loss", {}}, {"train", {}}, {"data", {}}, {"superclass", {}}, {"output", {}}};
  auto put = [&](const std::string& key, const std::string& value) {
    const auto dot = key.find('.');
    for (auto& [name, entries] : sections) {
      if (name == key.substr(0, dot)) entries.emplace_back(key.substr(dot + 1), value);
    }
  };
  for (const auto& [k, v] : config_entries(cfg.model)) put(k, v);
  for (const auto& [k, v] : config_entries(cfg.loss)) put(k, v);
  for (const auto& [k, v] : config_entries(cfg.train)) put(k, v);
  const DataConfig& d = cfg.data;
  put("data.source", std::string(to_string(d.source)));
  if (!d.dir.empty()) put("data.dir", fs::absolute(d.dir).string());
  put("data.classes", std::to_string(d.synthetic.num_classes));
  put("data.superclasses", std::to_string(d.synthetic.num_superclasses));
  put("data.images_per_class", std::to_string(d.synthetic.images_per_class));
  put("data.seed", std::to_string(d.synthetic.seed));
  put("data.max_per_class", std::to_string(d.max_per_class));
  put("data.val_fraction", format_double(d.val_fraction));
  put("superclass.source", std::string(to_string(cfg.superclass.source)));
  if (!cfg.superclass.file.empty()) put("superclass.file", fs::absolute(cfg.superclass.file).string());
  put("superclass.seed", std::to_string(cfg.superclass.seed));
  put("output.dir", cfg.output_dir.string());

  std::ostringstream out;
  for (const auto& [name, entries] : sections) {
    if (entries.empty()) continue;
    if (out.tellp() > 0) out << '\n';
    out << '[' << name << "]\n";
    for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
  }
  return out.str();
}

fs::path output_root(const RunConfig& cfg) {
  const char* root = std::getenv("VMOE_OUTPUT_ROOT");
  if (root && *root && cfg.output_dir.is_relative()) return fs::path(root) / cfg.output_dir;
  return cfg.output_dir;
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg) {
  const DataConfig& d = cfg.data;
  Dataset train_set;
  std::optional<Dataset> val_set;
  if (d.source == DataSource::kSynthetic) {
    train_set = synthetic_full(cfg, d.synthetic.seed);
  } else {
    train_set = load_cifar_split(d.dir, variant_of(d.source), "train");
    if (d.val_fraction == 0) val_set = load_cifar_split(d.dir, variant_of(d.source), "test");
  }
  if (d.max_per_class > 0) train_set = take_per_class(train_set, d.max_per_class);
  if (!val_set) {
    auto [fit, held] = split_holdout(train_set, d.val_fraction, d.synthetic.seed);
    train_set = std::move(fit);
    val_set = std::move(held);
  }
  return {at_model_size(std::move(train_set), cfg), at_model_size(std::move(*val_set), cfg)};
}

Dataset load_eval_split(const RunConfig& cfg, const std::string& split) {
  if (split == "val") return load_datasets(cfg).second;
  if (split == "train") return load_datasets(cfg).first;
  if (split != "test") throw ConfigError("split must be train, val or test, got '" + split + "'");
  if (cfg.data.source == DataSource::kSynthetic) {
    // A fresh draw from the same generator stands in for a test split.
    return synthetic_full(cfg, cfg.data.synthetic.seed + 1);
  }
  return at_model_size(load_cifar_split(cfg.data.dir, variant_of(cfg.data.source), "test"), cfg);
}

}  // namespace vmoe::cli
