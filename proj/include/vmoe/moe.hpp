#pragma once

// Sparse mixture-of-experts pieces: TOP-k gating over a softmax router,
// MoE-ViT blocks whose MLP is replaced by E experts, and per-token routing.

#include <algorithm>
#include <numeric>
#include <vector>

#include "vmoe/vit.hpp"

namespace vmoe {

template <typename Scalar>
struct RouterParams {
  Tensor<Scalar> weight;  // [E x D]
};

template <typename Scalar>
struct MoEBlockParams {
  LayerNormParams<Scalar> norm1;
  AttentionParams<Scalar> attn;
  LayerNormParams<Scalar> norm2;
  std::vector<MlpParams<Scalar>> experts;
};

// g(x) = TOP_k(softmax(W x)). `gates` keeps the k largest probabilities and
// zeroes the rest without renormalising.
template <typename Scalar>
struct GatingResult {
  Tensor<Scalar> logits;  // [E]
  Tensor<Scalar> probs;   // [E], pre-TOP-k
  Tensor<Scalar> gates;   // [E], exactly k nonzeros
  std::vector<int> selected;  // k indices, descending probability
};

// Counts expert MLP evaluations during a forward pass.
struct ExpertCounter {
  long long evaluations = 0;
  std::vector<long long> per_expert;

  void record(int expert) {
    ++evaluations;
    if (static_cast<std::size_t>(expert) >= per_expert.size()) per_expert.resize(static_cast<std::size_t>(expert) + 1, 0);
    ++per_expert[static_cast<std::size_t>(expert)];
  }
};

// Indices of the k largest entries, descending; ties go to the lower index.
template <typename Derived>
std::vector<int> top_k_indices(const Eigen::MatrixBase<Derived>& values, int k) {
  std::vector<int> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values(a) > values(b); });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

template <typename Scalar>
GatingResult<Scalar> gate(const Tensor<Scalar>& x, const RouterParams<Scalar>& router, int k) {
  const int e = router.weight.dim(0);
  if (k < 1 || k > e) {
    throw ConfigError("gate: k=" + std::to_string(k) + " must lie in [1, E=" + std::to_string(e) + "]");
  }
  if (x.size() != router.weight.dim(1)) {
    throw DimensionError("gate: input " + shape_string(x.shape()) + " does not match router " +
                         shape_string(router.weight.shape()));
  }
  GatingResult<Scalar> g;
  const int d = static_cast<int>(x.size());
  g.logits = reshape(matmul(reshape(x, {1, d}), transpose(router.weight)), {e});
  g.probs = softmax(g.logits);
  g.selected = top_k_indices(g.probs.value(), k);
  Vector<Scalar> mask = Vector<Scalar>::Zero(e);
  for (int i : g.selected) mask[i] = Scalar(1);
  g.gates = mul(g.probs, Tensor<Scalar>({e}, std::move(mask)));
  return g;
}

// The per-image routing input: mean of the patch tokens entering the first
// MoE layer (the class token, when present, is excluded).
template <typename Scalar>
Tensor<Scalar> per_image_router_input(const Tensor<Scalar>& tokens, bool has_class_token) {
  if (!has_class_token) return mean_rows(tokens);
  return mean_rows(slice_rows(tokens, 1, tokens.rows() - 1));
}

// MLP sub-block of an MoE-ViT layer with per-image gates:
// sum over selected i of gates[i] * expert_i(x), applied to every token.
// Experts outside the selection are never evaluated.
template <typename Scalar>
Tensor<Scalar> moe_mlp_forward(const Tensor<Scalar>& normed, const std::vector<MlpParams<Scalar>>& experts,
                               const GatingResult<Scalar>& gating, ExpertCounter* counter = nullptr) {
  Tensor<Scalar> out;
  for (int i : gating.selected) {
    if (counter) counter->record(i);
    Tensor<Scalar> term = mul_scalar(mlp_forward(normed, experts.at(static_cast<std::size_t>(i))), select(gating.gates, i));
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> moe_block_forward(const Tensor<Scalar>& tokens, const MoEBlockParams<Scalar>& p, int num_heads,
                                 const GatingResult<Scalar>& gating, ExpertCounter* counter = nullptr) {
  Tensor<Scalar> x = add(tokens, mhsa_forward(layer_norm(tokens, p.norm1), p.attn, num_heads));
  return add(x, moe_mlp_forward(layer_norm(x, p.norm2), p.experts, gating, counter));
}

// Per-token routing of one MoE-ViT layer: each token, as it enters the
// layer, picks its own k experts through the layer's router. The trace
// records which experts ran and the Switch-style balance term
// E * sum_i f_i * P_i over this image's tokens.
template <typename Scalar>
struct TokenRoutingTrace {
  std::vector<bool> used;  // per expert
  Tensor<Scalar> balance_loss;
};

template <typename Scalar>
Tensor<Scalar> per_token_moe_block_forward(const Tensor<Scalar>& tokens, const MoEBlockParams<Scalar>& p,
                                           const RouterParams<Scalar>& router, int num_heads, int k,
                                           ExpertCounter* counter, TokenRoutingTrace<Scalar>* trace) {
  const int e = router.weight.dim(0);
  if (k < 1 || k > e) throw ConfigError("per-token gate: k must lie in [1, E]");
  const int n = tokens.rows();
  Tensor<Scalar> probs = softmax(matmul(tokens, transpose(router.weight)));  // [n x E]
  Tensor<Scalar> x = add(tokens, mhsa_forward(layer_norm(tokens, p.norm1), p.attn, num_heads));
  Tensor<Scalar> h = layer_norm(x, p.norm2);
  std::vector<std::vector<int>> assigned(static_cast<std::size_t>(e));
  Vector<Scalar> mask = Vector<Scalar>::Zero(static_cast<Eigen::Index>(n) * e);
  const auto P = probs.matrix();
  for (int t = 0; t < n; ++t) {
    for (int i : top_k_indices(P.row(t).transpose(), k)) {
      assigned[static_cast<std::size_t>(i)].push_back(t);
      mask[static_cast<Eigen::Index>(t) * e + i] = Scalar(1);
    }
  }
  Tensor<Scalar> gates = mul(probs, Tensor<Scalar>({n, e}, std::move(mask)));
  Tensor<Scalar> out;
  if (trace) trace->used.assign(static_cast<std::size_t>(e), false);
  for (int i = 0; i < e; ++i) {
    const auto& rows = assigned[static_cast<std::size_t>(i)];
    if (rows.empty()) continue;
    if (counter) counter->record(i);
    if (trace) trace->used[static_cast<std::size_t>(i)] = true;
    Tensor<Scalar> y = mlp_forward(gather_rows(h, rows), p.experts.at(static_cast<std::size_t>(i)));
    Tensor<Scalar> term = scatter_rows(mul_rows(y, gather_column(gates, rows, i)), rows, n);
    out = out.defined() ? add(out, term) : term;
  }
  if (trace) {
    Vector<Scalar> fraction(e);
    for (int i = 0; i < e; ++i) {
      fraction[i] = static_cast<Scalar>(assigned[static_cast<std::size_t>(i)].size()) / static_cast<Scalar>(n * k);
    }
    Tensor<Scalar> mean_prob = mean_rows(probs);
    trace->balance_loss = scale(sum(mul(mean_prob, Tensor<Scalar>({e}, std::move(fraction)))), static_cast<Scalar>(e));
  }
  return add(x, out);
}

}  // namespace vmoe
