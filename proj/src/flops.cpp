#include "vmoe/flops.hpp"

#include <algorithm>
#include <array>
#include <iomanip>
#include <sstream>

namespace vmoe {

FlopsReport estimate(const ViTConfig& vit, const std::optional<MoEConfig>& moe) {
  validate(vit);
  const std::int64_t n = vit.num_patches();
  const std::int64_t s = vit.seq_len();
  const std::int64_t d = vit.hidden_dim;
  const std::int64_t layers = vit.num_layers;
  const std::int64_t moe_layers = moe ? moe->num_moe_layers : 0;
  if (moe) validate(*moe, vit);

  FlopsReport r;
  r.patch_embed = 2 * n * vit.patch_dim() * d;
  r.attention_proj = layers * 2 * s * 4 * d * d;
  r.attention_matmul = layers * 4 * s * s * d;
  const std::int64_t mlp = 2 * s * 2 * d * vit.mlp_dim();
  r.mlp_dense_layers = (layers - moe_layers) * mlp;
  if (moe) {
    r.mlp_moe_layers = moe_layers * mlp * moe->top_k;
    const std::int64_t router = 2 * d * moe->num_experts;
    r.router = is_per_image(moe->routing) ? router : router * s * moe_layers;
  }
  r.head = 2 * d * vit.num_classes;
  r.total = r.patch_embed + r.attention_proj + r.attention_matmul + r.mlp_dense_layers + r.mlp_moe_layers +
            r.router + r.head;
  return r;
}

namespace {

constexpr std::array<const char*, 8> kColumns{"patch_embed", "attention_proj", "attention_matmul", "mlp_dense_layers",
                                              "mlp_moe_layers", "router",         "head",             "total"};

std::array<std::int64_t, 8> values(const FlopsReport& r) {
  return {r.patch_embed, r.attention_proj, r.attention_matmul, r.mlp_dense_layers,
          r.mlp_moe_layers, r.router, r.head, r.total};
}

}  // namespace

std::string format_table(const std::vector<FlopsRow>& rows) {
  std::size_t label_width = 5;
  for (const auto& row : rows) label_width = std::max(label_width, row.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_width)) << "model";
  for (const char* c : kColumns) os << "  " << std::right << std::setw(16) << c;
  os << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& row : rows) {
    os << std::left << std::setw(static_cast<int>(label_width)) << row.label;
    for (std::int64_t v : values(row.report)) {
      os << "  " << std::right << std::setw(15) << static_cast<double>(v) / 1e6 << 'M';
    }
    os << "\n";
  }
  return os.str();
}

std::string format_csv(const std::vector<FlopsRow>& rows) {
  std::ostringstream os;
  os << "model";
  for (const char* c : kColumns) os << ',' << c;
  os << '\n';
  for (const auto& row : rows) {
    os << row.label;
    for (std::int64_t v : values(row.report)) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

std::vector<FlopsRow> dense_grid_flops() {
  std::vector<FlopsRow> rows;
  for (int width : {384, 192, 96, 64}) {
    for (int layers : {12, 9, 6}) {
      rows.push_back({std::to_string(layers) + "x" + std::to_string(width), estimate(grid_config(layers, width))});
    }
  }
  return rows;
}

}  // namespace vmoe
