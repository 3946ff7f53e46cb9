#pragma once

// Dense Vision Transformer building blocks: patch embedding, multi-head
// self-attention, MLP and the pre-norm residual layer.

#include <cmath>
#include <random>
#include <vector>

#include "vmoe/config.hpp"
#include "vmoe/ops.hpp"

namespace vmoe {

template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> weight;  // [in x out]
  Tensor<Scalar> bias;    // [out]
};

template <typename Scalar>
struct LayerNormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

template <typename Scalar>
struct AttentionParams {
  LinearParams<Scalar> qkv;   // D -> 3D
  LinearParams<Scalar> proj;  // D -> D
};

template <typename Scalar>
struct MlpParams {
  LinearParams<Scalar> fc1;  // D -> r*D
  LinearParams<Scalar> fc2;  // r*D -> D
};

template <typename Scalar>
struct DenseBlockParams {
  LayerNormParams<Scalar> norm1;
  AttentionParams<Scalar> attn;
  LayerNormParams<Scalar> norm2;
  MlpParams<Scalar> mlp;
};

template <typename Scalar>
struct EmbedParams {
  LinearParams<Scalar> proj;  // 3p^2 -> D
  Tensor<Scalar> class_token;  // [1 x D], undefined without a class token
  Tensor<Scalar> position;     // [seq_len x D]
};

// Truncated normal (sigma 0.02, cut at two sigma) for projections, zero
// biases, unit/zero layer norms.
template <typename Scalar>
class ParamInit {
 public:
  explicit ParamInit(std::mt19937_64& rng) : rng_(rng) {}

  Tensor<Scalar> trunc_normal(Shape shape, double stddev = 0.02) {
    std::normal_distribution<double> dist(0.0, stddev);
    Vector<Scalar> v(static_cast<Eigen::Index>(shape_size(shape)));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double x;
      do {
        x = dist(rng_);
      } while (std::abs(x) > 2.0 * stddev);
      v[i] = static_cast<Scalar>(x);
    }
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
  }

  static Tensor<Scalar> zeros(Shape shape) { return Tensor<Scalar>::zeros(std::move(shape), true); }

  static Tensor<Scalar> ones(Shape shape) {
    auto t = Tensor<Scalar>::constant(std::move(shape), Scalar(1));
    t.set_requires_grad(true);
    return t;
  }

  LinearParams<Scalar> linear(int in, int out) { return {trunc_normal({in, out}), zeros({out})}; }
  static LayerNormParams<Scalar> layer_norm(int d) { return {ones({d}), zeros({d})}; }
  MlpParams<Scalar> mlp(int d, int hidden) { return {linear(d, hidden), linear(hidden, d)}; }

  DenseBlockParams<Scalar> dense_block(const ViTConfig& cfg) {
    const int d = cfg.hidden_dim;
    DenseBlockParams<Scalar> b;
    b.norm1 = layer_norm(d);
    b.attn = {linear(d, 3 * d), linear(d, d)};
    b.norm2 = layer_norm(d);
    b.mlp = mlp(d, cfg.mlp_dim());
    return b;
  }

  EmbedParams<Scalar> embed(const ViTConfig& cfg) {
    EmbedParams<Scalar> e;
    e.proj = linear(cfg.patch_dim(), cfg.hidden_dim);
    if (cfg.use_class_token) e.class_token = trunc_normal({1, cfg.hidden_dim});
    e.position = trunc_normal({cfg.seq_len(), cfg.hidden_dim});
    return e;
  }

 private:
  std::mt19937_64& rng_;
};

// Flattens an [H x W x 3] image into [N x 3p^2] patch rows. Patch (gy, gx)
// is row gy * grid + gx; within a patch values are ordered (py, px, c).
template <typename Scalar>
RowMatrix<Scalar> extract_patches(const Tensor<Scalar>& image, const ViTConfig& cfg) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("image must be [H x W x 3], got " + shape_string(image.shape()));
  }
  if (cfg.image_size % cfg.patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(cfg.image_size) + " not divisible by patch_size " +
                      std::to_string(cfg.patch_size));
  }
  if (image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size) {
    throw DimensionError("image " + shape_string(image.shape()) + " does not match image_size " +
                         std::to_string(cfg.image_size));
  }
  const int p = cfg.patch_size;
  const int g = cfg.grid();
  const int w = cfg.image_size;
  RowMatrix<Scalar> patches(g * g, cfg.patch_dim());
  const auto& px = image.value();
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      const int row = gy * g + gx;
      for (int py = 0; py < p; ++py) {
        const Eigen::Index src = (static_cast<Eigen::Index>(gy * p + py) * w + gx * p) * 3;
        patches.row(row).segment(py * p * 3, p * 3) = px.segment(src, p * 3).transpose();
      }
    }
  }
  return patches;
}

template <typename Scalar>
Tensor<Scalar> patch_embed(const Tensor<Scalar>& image, const EmbedParams<Scalar>& params, const ViTConfig& cfg) {
  RowMatrix<Scalar> patches = extract_patches(image, cfg);
  const int n = static_cast<int>(patches.rows());
  const int pd = static_cast<int>(patches.cols());
  Tensor<Scalar> flat({n, pd}, Eigen::Map<Vector<Scalar>>(patches.data(), patches.size()));
  Tensor<Scalar> tokens = linear(flat, params.proj.weight, params.proj.bias);
  if (cfg.use_class_token) tokens = concat_rows<Scalar>({params.class_token, tokens});
  return add(tokens, params.position);
}

// Multi-head scaled dot-product self-attention. When `attention` is given,
// the per-head attention matrices are appended to it.
template <typename Scalar>
Tensor<Scalar> mhsa_forward(const Tensor<Scalar>& tokens, const AttentionParams<Scalar>& params, int num_heads,
                            std::vector<Tensor<Scalar>>* attention = nullptr) {
  const int d = tokens.cols();
  if (num_heads <= 0 || d % num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(d) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  const int dh = d / num_heads;
  const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  Tensor<Scalar> qkv = linear(tokens, params.qkv.weight, params.qkv.bias);
  std::vector<Tensor<Scalar>> heads;
  heads.reserve(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    Tensor<Scalar> q = slice_cols(qkv, h * dh, dh);
    Tensor<Scalar> k = slice_cols(qkv, d + h * dh, dh);
    Tensor<Scalar> v = slice_cols(qkv, 2 * d + h * dh, dh);
    Tensor<Scalar> weights = softmax(scale(matmul(q, transpose(k)), scale_factor));
    if (attention) attention->push_back(weights);
    heads.push_back(matmul(weights, v));
  }
  Tensor<Scalar> merged = num_heads == 1 ? heads.front() : concat_cols(heads);
  return linear(merged, params.proj.weight, params.proj.bias);
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const LayerNormParams<Scalar>& p) {
  return layernorm(x, p.gamma, p.beta);
}

template <typename Scalar>
Tensor<Scalar> mlp_forward(const Tensor<Scalar>& x, const MlpParams<Scalar>& p) {
  return linear(gelu(linear(x, p.fc1.weight, p.fc1.bias)), p.fc2.weight, p.fc2.bias);
}

// x <- x + MHSA(LN(x)); x <- x + MLP(LN(x)).
template <typename Scalar>
Tensor<Scalar> dense_block_forward(const Tensor<Scalar>& tokens, const DenseBlockParams<Scalar>& p, int num_heads) {
  Tensor<Scalar> x = add(tokens, mhsa_forward(layer_norm(tokens, p.norm1), p.attn, num_heads));
  return add(x, mlp_forward(layer_norm(x, p.norm2), p.mlp));
}

// Logits [C] from the class token (or the token mean without one).
template <typename Scalar>
Tensor<Scalar> classify(const Tensor<Scalar>& tokens, const LayerNormParams<Scalar>& norm,
                        const LinearParams<Scalar>& head, bool use_class_token) {
  Tensor<Scalar> pooled = use_class_token ? slice_rows(tokens, 0, 1) : reshape(mean_rows(tokens), {1, tokens.cols()});
  Tensor<Scalar> logits = linear(layer_norm(pooled, norm), head.weight, head.bias);
  return reshape(logits, {logits.cols()});
}

}  // namespace vmoe
