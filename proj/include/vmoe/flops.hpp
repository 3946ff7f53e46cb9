#pragma once

// Analytical forward-pass FLOPs for one image. One multiply-accumulate counts
// as two FLOPs. Norms, activations, softmax and residual adds are ignored.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vmoe/config.hpp"

namespace vmoe {

struct FlopsReport {
  std::int64_t patch_embed = 0;       // 2 * N * 3p^2 * D
  std::int64_t attention_proj = 0;    // QKV and output projections, all blocks
  std::int64_t attention_matmul = 0;  // QK^T and AV, all blocks
  std::int64_t mlp_dense_layers = 0;
  std::int64_t mlp_moe_layers = 0;    // k expert MLPs per token
  std::int64_t router = 0;
  std::int64_t head = 0;
  std::int64_t total = 0;
};

// Block terms use the full sequence length (class token included); the
// patch embedding sees the N patches only. Per-image routers run once per
// image; per-token routers once per token in every MoE layer.
FlopsReport estimate(const ViTConfig& vit, const std::optional<MoEConfig>& moe = std::nullopt);
inline FlopsReport estimate(const ModelConfig& cfg) { return estimate(cfg.vit, cfg.moe); }

struct FlopsRow {
  std::string label;
  FlopsReport report;
};

// Aligned columns in MFLOPs.
std::string format_table(const std::vector<FlopsRow>& rows);

// Comma-separated, exact integer counts, one header line.
std::string format_csv(const std::vector<FlopsRow>& rows);

// The twelve dense grid configurations, labelled "<layers>x<width>".
std::vector<FlopsRow> dense_grid_flops();

}  // namespace vmoe
