#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vmoe {

struct ViTConfig {
  int image_size = 224;
  int patch_size = 32;
  int num_layers = 12;
  int hidden_dim = 192;
  int num_heads = 3;
  // MLP hidden width is mlp_ratio * hidden_dim. Always 4 for the models
  // themselves; multiples of 4 only appear in FLOP-matched dense baselines.
  int mlp_ratio = 4;
  int num_classes = 1000;
  bool use_class_token = true;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int seq_len() const { return num_patches() + (use_class_token ? 1 : 0); }
  int patch_dim() const { return 3 * patch_size * patch_size; }
  int mlp_dim() const { return mlp_ratio * hidden_dim; }
  int head_dim() const { return hidden_dim / num_heads; }
};

enum class RoutingMode { kPerImageSuperclass, kPerImageLearned, kPerTokenLearned };

std::string_view to_string(RoutingMode mode);
RoutingMode parse_routing_mode(std::string_view text);
inline bool is_per_image(RoutingMode m) { return m != RoutingMode::kPerTokenLearned; }

struct MoEConfig {
  int num_experts = 10;
  int top_k = 1;
  int num_moe_layers = 2;
  RoutingMode routing = RoutingMode::kPerImageSuperclass;
};

struct ModelConfig {
  ViTConfig vit;
  std::optional<MoEConfig> moe;  // empty: dense ViT

  bool is_moe() const { return moe.has_value(); }
  int num_dense_layers() const { return vit.num_layers - (moe ? moe->num_moe_layers : 0); }
};

// Head count used by the scaling grid for each hidden width.
int default_num_heads(int hidden_dim);

// The dense layer/width grid: {12, 9, 6} layers x {384, 192, 96, 64} widths,
// 224px images, 32px patches, 1000 classes.
ViTConfig grid_config(int num_layers, int hidden_dim);

void validate(const ViTConfig& cfg);
void validate(const MoEConfig& moe, const ViTConfig& vit);
void validate(const ModelConfig& cfg);

struct LossConfig {
  double lambda = 0.3;
  double load_balance_weight = 0.01;  // learned routing modes only
};

void validate(const LossConfig& cfg);

enum class OptimizerKind { kSgdMomentum, kAdamW };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double min_learning_rate = 1e-5;
  double weight_decay = 0.05;
  int warmup_epochs = 0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double momentum = 0.9;
  bool augment = false;
};

void validate(const TrainConfig& cfg);

// Flat "section.key" -> value text views of the config structs, used by run
// files and checkpoint manifests. Dense models write moe.enabled = false.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ConfigEntries config_entries(const ModelConfig& cfg);
ConfigEntries config_entries(const LossConfig& cfg);
ConfigEntries config_entries(const TrainConfig& cfg);

// Each returns false when the key belongs to another struct; a malformed
// value throws ConfigError naming the key.
bool set_config_entry(ModelConfig& cfg, std::string_view key, std::string_view value);
bool set_config_entry(LossConfig& cfg, std::string_view key, std::string_view value);
bool set_config_entry(TrainConfig& cfg, std::string_view key, std::string_view value);

int parse_int(std::string_view key, std::string_view value);
double parse_double(std::string_view key, std::string_view value);
bool parse_bool(std::string_view key, std::string_view value);
std::uint64_t parse_u64(std::string_view key, std::string_view value);
std::string format_double(double v);

}  // namespace vmoe
