#pragma once

// Training and evaluation of dense ViTs and Mobile V-MoEs on image datasets.
// Each image gets its own autodiff graph; per-image losses are scaled by 1/B
// and their gradients accumulate over the mini-batch.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vmoe/checkpoint.hpp"
#include "vmoe/config.hpp"
#include "vmoe/dataset.hpp"
#include "vmoe/model.hpp"
#include "vmoe/superclass.hpp"

namespace vmoe {

template <typename Scalar>
struct LossParts {
  Tensor<Scalar> total;
  Tensor<Scalar> class_loss;
  Tensor<Scalar> router_loss;  // undefined without a super-class target
};

// L = CE(logits, label) + lambda * CE(router logits, super-class). The router
// term uses the full softmax distribution, before TOP-k masking. With
// lambda == 0 or no target the total is the class loss itself.
template <typename Scalar>
LossParts<Scalar> combined_loss(const Tensor<Scalar>& logits, int label, const GatingResult<Scalar>* gating,
                                std::optional<int> superclass, const LossConfig& cfg) {
  LossParts<Scalar> parts;
  const int y[] = {label};
  parts.class_loss = cross_entropy(logits, y);
  parts.total = parts.class_loss;
  if (!gating || !superclass) return parts;
  const int e = gating->logits.size();
  if (*superclass < 0 || *superclass >= e) {
    throw ContractError("super-class label " + std::to_string(*superclass) + " outside [0, " + std::to_string(e) + ")");
  }
  const int s[] = {*superclass};
  parts.router_loss = cross_entropy(gating->logits, s);
  if (cfg.lambda != 0) parts.total = add(parts.total, scale(parts.router_loss, static_cast<Scalar>(cfg.lambda)));
  return parts;
}

// Linear warmup over warmup_epochs, then cosine decay to min_learning_rate
// at the end of the last epoch. `progress` counts epochs, fractional.
double learning_rate_at(const TrainConfig& cfg, double progress);

// Decoupled weight decay applies to matrices named "*.weight" only.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, ModelParams<float>& params);

  void step(ModelParams<float>& params, double learning_rate);
  long long steps() const { return steps_; }
  OptimizerKind kind() const { return cfg_.optimizer; }

  std::vector<NamedArray> state(ModelParams<float>& params) const;
  void load_state(ModelParams<float>& params, long long steps, const std::vector<NamedArray>& state);

 private:
  TrainConfig cfg_;
  long long steps_ = 0;
  std::vector<Eigen::VectorXf> first_;   // momentum / Adam first moment
  std::vector<Eigen::VectorXf> second_;  // Adam second moment
};

struct Metrics {
  double top1 = 0;
  std::optional<double> router_acc;  // per-image MoE with a super-class map only
  double experts_per_image = 0;     // 0 for dense models
  double class_loss = 0;
  long long examples = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0, class_loss = 0, router_loss = 0;  // training means
  Metrics val;
};

inline constexpr const char* kMetricsHeader = "epoch,loss,class_loss,router_loss,top1,router_acc,experts_per_image";

// One CSV line without newline; an absent router accuracy prints as NA.
std::string format_metrics_row(const EpochRecord& r);

Metrics evaluate(ModelParams<float>& params, const ModelConfig& cfg, const Dataset& data,
                 const SuperClassMap* superclasses = nullptr);

std::vector<int> predict(ModelParams<float>& params, const ModelConfig& cfg, const Dataset& data);

ConfusionMatrix compute_confusion(ModelParams<float>& params, const ModelConfig& cfg, const Dataset& data);

struct TrainOptions {
  // When set: metrics.csv and checkpoints/epoch_NNN.ckpt (plus last.ckpt)
  // are written there after every epoch.
  std::optional<std::filesystem::path> output_dir = std::nullopt;
  std::optional<std::filesystem::path> resume_from = std::nullopt;
  std::function<void(const EpochRecord&)> on_epoch = nullptr;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochRecord> history;
};

// Fails before any work when super-class routing lacks a map or the map
// does not fit the config, and aborts on a non-finite loss.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                  const Dataset& train_set, const Dataset& val_set, const SuperClassMap* superclasses,
                  const TrainOptions& options = {});

Checkpoint make_checkpoint(ModelParams<float>& params, const ModelConfig& cfg, int epoch, std::uint64_t seed,
                           const Optimizer* optimizer = nullptr);

// Rebuilds parameters from a checkpoint.
ModelParams<float> restore_params(const Checkpoint& ckpt);

enum class SuperclassSource { kProvided, kRandom, kCluster, kFile };

std::string_view to_string(SuperclassSource s);
SuperclassSource parse_superclass_source(std::string_view text);

struct SuperclassPlan {
  SuperclassSource source = SuperclassSource::kProvided;
  std::uint64_t seed = 0;
  std::filesystem::path file = {};
};

// Provided: the dataset's coarse labels (E must match). Random: seeded
// balanced split. Cluster: needs the confusion of a dense model. File: a
// saved map, checked against C and E.
SuperClassMap make_superclasses(const SuperclassPlan& plan, const Dataset& train_set, int num_superclasses,
                                const ConfusionMatrix* confusion = nullptr);

enum class AblationAxis { kExperts, kLayers, kTopK, kRouting };

std::string_view to_string(AblationAxis a);
AblationAxis parse_ablation_axis(std::string_view text);

struct AblationSetup {
  ModelConfig base;  // must be an MoE config
  TrainConfig train;
  LossConfig loss;
  SuperclassPlan superclasses;
  Dataset train_set;
  Dataset val_set;
  std::optional<std::filesystem::path> output_dir;  // one subdirectory per run
};

struct AblationRow {
  std::string value;  // axis value, or a routing strategy label
  std::string input;  // routing axis: "image", "token" or "N/A"
  std::optional<double> router_acc;
  double moe_top1 = 0;
  double dense_top1 = 0;
  long long flops = 0;
  bool is_dense = false;
};

struct AblationTable {
  AblationAxis axis;
  std::vector<AblationRow> rows;
};

// Routing values: superclass, random, learned_image, learned_token. The
// routing table starts with its dense row. For k, each row's dense baseline
// widens the MLP by k to match FLOPs; the other axes share one dense run of
// the base depth and width.
AblationTable ablate(AblationAxis axis, const std::vector<std::string>& values, const AblationSetup& setup);

// Columns: E/L -> value, Router, MoE, Delta; k -> k, FLOPs, Dense, MoE,
// Delta; routing -> Routing, Input, Acc., Delta. Accuracies in percent.
std::string format_ablation_table(const AblationTable& table);

}  // namespace vmoe
