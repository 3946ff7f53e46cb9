#pragma once

// Whole-network parameters and forward passes: the dense ViT, the Mobile
// V-MoE with one per-image router, and the per-token V-MoE.

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vmoe/moe.hpp"

namespace vmoe {

template <typename Scalar>
struct ModelParams {
  EmbedParams<Scalar> embed;
  std::vector<DenseBlockParams<Scalar>> dense_blocks;
  std::vector<MoEBlockParams<Scalar>> moe_blocks;
  // One shared router in per-image modes, one per MoE layer per-token.
  std::vector<RouterParams<Scalar>> routers;
  LayerNormParams<Scalar> norm;
  LinearParams<Scalar> head;
};

template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  ParamInit<Scalar> init(rng);
  const ViTConfig& v = cfg.vit;
  ModelParams<Scalar> p;
  p.embed = init.embed(v);
  for (int i = 0; i < cfg.num_dense_layers(); ++i) p.dense_blocks.push_back(init.dense_block(v));
  if (cfg.moe) {
    const MoEConfig& m = *cfg.moe;
    for (int l = 0; l < m.num_moe_layers; ++l) {
      DenseBlockParams<Scalar> shared = init.dense_block(v);
      MoEBlockParams<Scalar> b{shared.norm1, shared.attn, shared.norm2, {}};
      b.experts.push_back(shared.mlp);
      for (int e = 1; e < m.num_experts; ++e) b.experts.push_back(init.mlp(v.hidden_dim, v.mlp_dim()));
      p.moe_blocks.push_back(std::move(b));
    }
    const int routers = is_per_image(m.routing) ? 1 : m.num_moe_layers;
    for (int r = 0; r < routers; ++r) p.routers.push_back({init.trunc_normal({m.num_experts, v.hidden_dim})});
  }
  p.norm = ParamInit<Scalar>::layer_norm(v.hidden_dim);
  p.head = init.linear(v.hidden_dim, v.num_classes);
  return p;
}

namespace detail {

template <typename P, typename Fn>
void visit_linear(P& l, const std::string& name, Fn& fn) {
  fn(name + ".weight", l.weight);
  fn(name + ".bias", l.bias);
}

template <typename P, typename Fn>
void visit_norm(P& n, const std::string& name, Fn& fn) {
  fn(name + ".gamma", n.gamma);
  fn(name + ".beta", n.beta);
}

template <typename P, typename Fn>
void visit_mlp(P& m, const std::string& name, Fn& fn) {
  visit_linear(m.fc1, name + ".fc1", fn);
  visit_linear(m.fc2, name + ".fc2", fn);
}

}  // namespace detail

// Calls fn(name, tensor) for every parameter in a fixed order.
template <typename Params, typename Fn>
void for_each_parameter(Params& p, Fn fn) {
  detail::visit_linear(p.embed.proj, "embed.proj", fn);
  if (p.embed.class_token.defined()) fn(std::string("embed.class_token"), p.embed.class_token);
  fn(std::string("embed.position"), p.embed.position);
  for (std::size_t i = 0; i < p.dense_blocks.size(); ++i) {
    auto& b = p.dense_blocks[i];
    const std::string base = "blocks." + std::to_string(i);
    detail::visit_norm(b.norm1, base + ".norm1", fn);
    detail::visit_linear(b.attn.qkv, base + ".attn.qkv", fn);
    detail::visit_linear(b.attn.proj, base + ".attn.proj", fn);
    detail::visit_norm(b.norm2, base + ".norm2", fn);
    detail::visit_mlp(b.mlp, base + ".mlp", fn);
  }
  for (std::size_t i = 0; i < p.moe_blocks.size(); ++i) {
    auto& b = p.moe_blocks[i];
    const std::string base = "moe_blocks." + std::to_string(i);
    detail::visit_norm(b.norm1, base + ".norm1", fn);
    detail::visit_linear(b.attn.qkv, base + ".attn.qkv", fn);
    detail::visit_linear(b.attn.proj, base + ".attn.proj", fn);
    detail::visit_norm(b.norm2, base + ".norm2", fn);
    for (std::size_t e = 0; e < b.experts.size(); ++e) {
      detail::visit_mlp(b.experts[e], base + ".experts." + std::to_string(e), fn);
    }
  }
  for (std::size_t r = 0; r < p.routers.size(); ++r) fn("routers." + std::to_string(r) + ".weight", p.routers[r].weight);
  detail::visit_norm(p.norm, "norm", fn);
  detail::visit_linear(p.head, "head", fn);
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> named_parameters(ModelParams<Scalar>& p) {
  std::vector<std::pair<std::string, Tensor<Scalar>>> out;
  for_each_parameter(p, [&](const std::string& name, Tensor<Scalar>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename Scalar>
long long parameter_count(ModelParams<Scalar>& p) {
  long long n = 0;
  for_each_parameter(p, [&](const std::string&, Tensor<Scalar>& t) { n += t.size(); });
  return n;
}

template <typename Scalar>
void zero_grad(ModelParams<Scalar>& p) {
  for_each_parameter(p, [](const std::string&, Tensor<Scalar>& t) { t.zero_grad(); });
}

// Deep copy with a different scalar type; the result shares no storage.
template <typename To, typename From>
ModelParams<To> cast_model(ModelParams<From>& src) {
  ModelParams<To> dst;
  dst.dense_blocks.resize(src.dense_blocks.size());
  dst.moe_blocks.resize(src.moe_blocks.size());
  for (std::size_t i = 0; i < src.moe_blocks.size(); ++i) dst.moe_blocks[i].experts.resize(src.moe_blocks[i].experts.size());
  dst.routers.resize(src.routers.size());
  std::vector<Tensor<From>*> from;
  for_each_parameter(src, [&](const std::string&, Tensor<From>& t) { from.push_back(&t); });
  std::size_t i = 0;
  // Class-token presence must match before visiting so the orders line up.
  if (src.embed.class_token.defined()) dst.embed.class_token = Tensor<To>::zeros({1, 1});
  for_each_parameter(dst, [&](const std::string&, Tensor<To>& t) { t = from[i++]->template cast<To>(); });
  return dst;
}

template <typename Scalar>
ModelParams<Scalar> clone_model(ModelParams<Scalar>& src) {
  return cast_model<Scalar>(src);
}

// MoE parameters built from dense ones: the last L dense layers become MoE
// layers whose E experts are copies of that layer's MLP. Routers are fresh.
template <typename Scalar>
ModelParams<Scalar> expand_to_moe(ModelParams<Scalar>& dense, const ModelConfig& cfg, std::uint64_t router_seed) {
  validate(cfg);
  if (!cfg.moe || !dense.moe_blocks.empty()) throw ConfigError("expand_to_moe: needs dense parameters and an MoE config");
  ModelParams<Scalar> src = clone_model(dense);
  const MoEConfig& m = *cfg.moe;
  ModelParams<Scalar> out;
  out.embed = src.embed;
  out.norm = src.norm;
  out.head = src.head;
  const int n_dense = cfg.num_dense_layers();
  for (int i = 0; i < static_cast<int>(src.dense_blocks.size()); ++i) {
    auto& b = src.dense_blocks[static_cast<std::size_t>(i)];
    if (i < n_dense) {
      out.dense_blocks.push_back(b);
      continue;
    }
    MoEBlockParams<Scalar> mb{b.norm1, b.attn, b.norm2, {}};
    for (int e = 0; e < m.num_experts; ++e) {
      mb.experts.push_back({{b.mlp.fc1.weight.detach(), b.mlp.fc1.bias.detach()},
                            {b.mlp.fc2.weight.detach(), b.mlp.fc2.bias.detach()}});
      for (auto* t : {&mb.experts.back().fc1.weight, &mb.experts.back().fc1.bias, &mb.experts.back().fc2.weight,
                      &mb.experts.back().fc2.bias}) {
        t->set_requires_grad(true);
      }
    }
    out.moe_blocks.push_back(std::move(mb));
  }
  std::mt19937_64 rng(router_seed);
  ParamInit<Scalar> init(rng);
  const int routers = is_per_image(m.routing) ? 1 : m.num_moe_layers;
  for (int r = 0; r < routers; ++r) out.routers.push_back({init.trunc_normal({m.num_experts, cfg.vit.hidden_dim})});
  return out;
}

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;                        // [C]
  std::optional<GatingResult<Scalar>> gating;  // per-image modes
  int distinct_experts = 0;                     // experts touched by this image
  Tensor<Scalar> balance_loss;                  // per-token mode only
};

template <typename Scalar>
Tensor<Scalar> run_dense_blocks(Tensor<Scalar> tokens, const ModelParams<Scalar>& p, const ViTConfig& v) {
  for (const auto& b : p.dense_blocks) tokens = dense_block_forward(tokens, b, v.num_heads);
  return tokens;
}

// Dense ViT: dense layers throughout, classification from the class token.
template <typename Scalar>
Tensor<Scalar> vit_forward(const Tensor<Scalar>& image, const ModelParams<Scalar>& p, const ViTConfig& v) {
  if (!p.moe_blocks.empty()) throw ConfigError("vit_forward: parameters contain MoE blocks");
  Tensor<Scalar> tokens = run_dense_blocks(patch_embed(image, p.embed, v), p, v);
  return classify(tokens, p.norm, p.head, v.use_class_token);
}

// Mobile V-MoE: (num_layers - L) dense layers, then a single gate on the
// mean patch token whose decision is reused by all L MoE layers.
template <typename Scalar>
ForwardResult<Scalar> mobile_vmoe_forward(const Tensor<Scalar>& image, const ModelParams<Scalar>& p,
                                          const ModelConfig& cfg, ExpertCounter* counter = nullptr) {
  if (!cfg.moe || !is_per_image(cfg.moe->routing)) {
    throw ConfigError("mobile_vmoe_forward needs a per-image routing mode");
  }
  const ViTConfig& v = cfg.vit;
  Tensor<Scalar> tokens = run_dense_blocks(patch_embed(image, p.embed, v), p, v);
  ForwardResult<Scalar> r;
  r.gating = gate(per_image_router_input(tokens, v.use_class_token), p.routers.at(0), cfg.moe->top_k);
  for (const auto& b : p.moe_blocks) tokens = moe_block_forward(tokens, b, v.num_heads, *r.gating, counter);
  r.logits = classify(tokens, p.norm, p.head, v.use_class_token);
  r.distinct_experts = static_cast<int>(r.gating->selected.size());
  return r;
}

// Regular V-MoE: every MoE layer routes each token through its own router.
template <typename Scalar>
ForwardResult<Scalar> per_token_vmoe_forward(const Tensor<Scalar>& image, const ModelParams<Scalar>& p,
                                             const ModelConfig& cfg, ExpertCounter* counter = nullptr) {
  if (!cfg.moe || cfg.moe->routing != RoutingMode::kPerTokenLearned) {
    throw ConfigError("per_token_vmoe_forward needs routing mode per_token_learned");
  }
  const ViTConfig& v = cfg.vit;
  Tensor<Scalar> tokens = run_dense_blocks(patch_embed(image, p.embed, v), p, v);
  ForwardResult<Scalar> r;
  std::vector<bool> used(static_cast<std::size_t>(cfg.moe->num_experts), false);
  for (std::size_t l = 0; l < p.moe_blocks.size(); ++l) {
    TokenRoutingTrace<Scalar> trace;
    tokens = per_token_moe_block_forward(tokens, p.moe_blocks[l], p.routers.at(l), v.num_heads, cfg.moe->top_k,
                                         counter, &trace);
    for (std::size_t e = 0; e < used.size(); ++e) used[e] = used[e] || trace.used[e];
    r.balance_loss = r.balance_loss.defined() ? add(r.balance_loss, trace.balance_loss) : trace.balance_loss;
  }
  r.logits = classify(tokens, p.norm, p.head, v.use_class_token);
  r.distinct_experts = static_cast<int>(std::count(used.begin(), used.end(), true));
  return r;
}

template <typename Scalar>
ForwardResult<Scalar> model_forward(const Tensor<Scalar>& image, const ModelParams<Scalar>& p, const ModelConfig& cfg,
                                    ExpertCounter* counter = nullptr) {
  if (!cfg.moe) return {vit_forward(image, p, cfg.vit), std::nullopt, 0, {}};
  if (is_per_image(cfg.moe->routing)) return mobile_vmoe_forward(image, p, cfg, counter);
  return per_token_vmoe_forward(image, p, cfg, counter);
}

}  // namespace vmoe
