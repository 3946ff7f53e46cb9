#include "vmoe/config.hpp"

#include <charconv>
#include <cstdio>
#include <string>

#include "vmoe/errors.hpp"

namespace vmoe {

std::string_view to_string(RoutingMode mode) {
  switch (mode) {
    case RoutingMode::kPerImageSuperclass:
      return "per_image_superclass";
    case RoutingMode::kPerImageLearned:
      return "per_image_learned";
    case RoutingMode::kPerTokenLearned:
      return "per_token_learned";
  }
  return "unknown";
}

RoutingMode parse_routing_mode(std::string_view text) {
  if (text == "per_image_superclass") return RoutingMode::kPerImageSuperclass;
  if (text == "per_image_learned") return RoutingMode::kPerImageLearned;
  if (text == "per_token_learned") return RoutingMode::kPerTokenLearned;
  throw ConfigError("unknown routing mode '" + std::string(text) +
                    "' (expected per_image_superclass, per_image_learned or per_token_learned)");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdamW ? "adamw" : "sgd_momentum";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adamw") return OptimizerKind::kAdamW;
  if (text == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected adamw or sgd_momentum)");
}

int default_num_heads(int hidden_dim) {
  switch (hidden_dim) {
    case 384:
      return 6;
    case 192:
    case 96:
      return 3;
    case 64:
      return 2;
    default:
      throw ConfigError("no grid head count for hidden_dim " + std::to_string(hidden_dim));
  }
}

ViTConfig grid_config(int num_layers, int hidden_dim) {
  ViTConfig cfg;
  cfg.image_size = 224;
  cfg.patch_size = 32;
  cfg.num_layers = num_layers;
  cfg.hidden_dim = hidden_dim;
  cfg.num_heads = default_num_heads(hidden_dim);
  cfg.num_classes = 1000;
  return cfg;
}

void validate(const ViTConfig& cfg) {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive, got " + std::to_string(v));
  };
  positive(cfg.image_size, "image_size");
  positive(cfg.patch_size, "patch_size");
  positive(cfg.num_layers, "num_layers");
  positive(cfg.hidden_dim, "hidden_dim");
  positive(cfg.num_heads, "num_heads");
  positive(cfg.num_classes, "num_classes");
  if (cfg.image_size % cfg.patch_size != 0) {
    throw ConfigError("model.image_size " + std::to_string(cfg.image_size) + " is not divisible by model.patch_size " +
                      std::to_string(cfg.patch_size));
  }
  if (cfg.hidden_dim % cfg.num_heads != 0) {
    throw ConfigError("model.hidden_dim " + std::to_string(cfg.hidden_dim) + " is not divisible by model.num_heads " +
                      std::to_string(cfg.num_heads));
  }
  if (cfg.mlp_ratio <= 0 || cfg.mlp_ratio % 4 != 0) {
    throw ConfigError("model.mlp_ratio must be a positive multiple of 4, got " + std::to_string(cfg.mlp_ratio));
  }
}

void validate(const MoEConfig& moe, const ViTConfig& vit) {
  if (moe.num_experts < 1) throw ConfigError("moe.num_experts must be at least 1");
  if (moe.top_k < 1 || moe.top_k > moe.num_experts) {
    throw ConfigError("moe.k must satisfy 1 <= k <= E, got k=" + std::to_string(moe.top_k) +
                      ", E=" + std::to_string(moe.num_experts));
  }
  if (moe.num_moe_layers < 1 || moe.num_moe_layers > vit.num_layers) {
    throw ConfigError("moe.num_layers must satisfy 1 <= L <= model.num_layers, got L=" +
                      std::to_string(moe.num_moe_layers));
  }
}

void validate(const ModelConfig& cfg) {
  validate(cfg.vit);
  if (cfg.moe) validate(*cfg.moe, cfg.vit);
}

void validate(const LossConfig& cfg) {
  if (!(cfg.lambda >= 0)) throw ConfigError("loss.lambda must be non-negative");
  if (!(cfg.load_balance_weight >= 0)) throw ConfigError("loss.load_balance_weight must be non-negative");
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (cfg.batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (!(cfg.learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
  if (!(cfg.min_learning_rate >= 0) || cfg.min_learning_rate > cfg.learning_rate) {
    throw ConfigError("train.min_learning_rate must lie in [0, learning_rate]");
  }
  if (!(cfg.weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs >= cfg.epochs + 1) {
    throw ConfigError("train.warmup_epochs must lie in [0, epochs]");
  }
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) throw ConfigError("train.momentum must lie in [0, 1)");
}

int parse_int(std::string_view key, std::string_view value) {
  int out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(value) + "'");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(value) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(value) + "'");
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

ConfigEntries config_entries(const ModelConfig& cfg) {
  const ViTConfig& v = cfg.vit;
  ConfigEntries e{
      {"model.image_size", std::to_string(v.image_size)},
      {"model.patch_size", std::to_string(v.patch_size)},
      {"model.num_layers", std::to_string(v.num_layers)},
      {"model.hidden_dim", std::to_string(v.hidden_dim)},
      {"model.num_heads", std::to_string(v.num_heads)},
      {"model.mlp_ratio", std::to_string(v.mlp_ratio)},
      {"model.num_classes", std::to_string(v.num_classes)},
      {"model.class_token", bool_text(v.use_class_token)},
      {"moe.enabled", bool_text(cfg.moe.has_value())},
  };
  if (cfg.moe) {
    e.emplace_back("moe.num_experts", std::to_string(cfg.moe->num_experts));
    e.emplace_back("moe.k", std::to_string(cfg.moe->top_k));
    e.emplace_back("moe.num_layers", std::to_string(cfg.moe->num_moe_layers));
    e.emplace_back("moe.routing", std::string(to_string(cfg.moe->routing)));
  }
  return e;
}

ConfigEntries config_entries(const LossConfig& cfg) {
  return {{"loss.lambda", format_double(cfg.lambda)},
          {"loss.load_balance_weight", format_double(cfg.load_balance_weight)}};
}

ConfigEntries config_entries(const TrainConfig& cfg) {
  return {{"train.epochs", std::to_string(cfg.epochs)},
          {"train.batch_size", std::to_string(cfg.batch_size)},
          {"train.learning_rate", format_double(cfg.learning_rate)},
          {"train.min_learning_rate", format_double(cfg.min_learning_rate)},
          {"train.weight_decay", format_double(cfg.weight_decay)},
          {"train.warmup_epochs", std::to_string(cfg.warmup_epochs)},
          {"train.seed", std::to_string(cfg.seed)},
          {"train.optimizer", std::string(to_string(cfg.optimizer))},
          {"train.momentum", format_double(cfg.momentum)},
          {"train.augment", bool_text(cfg.augment)}};
}

bool set_config_entry(ModelConfig& cfg, std::string_view key, std::string_view value) {
  ViTConfig& v = cfg.vit;
  if (key == "model.image_size") {
    v.image_size = parse_int(key, value);
  } else if (key == "model.patch_size") {
    v.patch_size = parse_int(key, value);
  } else if (key == "model.num_layers") {
    v.num_layers = parse_int(key, value);
  } else if (key == "model.hidden_dim") {
    v.hidden_dim = parse_int(key, value);
  } else if (key == "model.num_heads") {
    v.num_heads = parse_int(key, value);
  } else if (key == "model.mlp_ratio") {
    v.mlp_ratio = parse_int(key, value);
  } else if (key == "model.num_classes") {
    v.num_classes = parse_int(key, value);
  } else if (key == "model.class_token") {
    v.use_class_token = parse_bool(key, value);
  } else if (key == "moe.enabled") {
    if (!parse_bool(key, value)) {
      cfg.moe.reset();
    } else if (!cfg.moe) {
      cfg.moe.emplace();
    }
  } else if (key.starts_with("moe.")) {
    // Setting any MoE field implies an MoE model.
    if (!cfg.moe) cfg.moe.emplace();
    MoEConfig& m = *cfg.moe;
    if (key == "moe.num_experts") {
      m.num_experts = parse_int(key, value);
    } else if (key == "moe.k") {
      m.top_k = parse_int(key, value);
    } else if (key == "moe.num_layers") {
      m.num_moe_layers = parse_int(key, value);
    } else if (key == "moe.routing") {
      m.routing = parse_routing_mode(value);
    } else {
      return false;
    }
  } else {
    return false;
  }
  return true;
}

bool set_config_entry(LossConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "loss.lambda") {
    cfg.lambda = parse_double(key, value);
  } else if (key == "loss.load_balance_weight") {
    cfg.load_balance_weight = parse_double(key, value);
  } else {
    return false;
  }
  return true;
}

bool set_config_entry(TrainConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "train.epochs") {
    cfg.epochs = parse_int(key, value);
  } else if (key == "train.batch_size") {
    cfg.batch_size = parse_int(key, value);
  } else if (key == "train.learning_rate") {
    cfg.learning_rate = parse_double(key, value);
  } else if (key == "train.min_learning_rate") {
    cfg.min_learning_rate = parse_double(key, value);
  } else if (key == "train.weight_decay") {
    cfg.weight_decay = parse_double(key, value);
  } else if (key == "train.warmup_epochs") {
    cfg.warmup_epochs = parse_int(key, value);
  } else if (key == "train.seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "train.optimizer") {
    cfg.optimizer = parse_optimizer(value);
  } else if (key == "train.momentum") {
    cfg.momentum = parse_double(key, value);
  } else if (key == "train.augment") {
    cfg.augment = parse_bool(key, value);
  } else {
    return false;
  }
  return true;
}

}  // namespace vmoe
