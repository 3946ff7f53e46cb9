#pragma once

// Differentiable kernels. Every function returns a new tensor and, when
// recording, attaches the rule that accumulates its gradient into the inputs.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vmoe/tensor.hpp"

namespace vmoe {

namespace detail {

template <typename Scalar>
ConstMatrixMap<Scalar> as_matrix(const Vector<Scalar>& v, int rows, int cols) {
  return ConstMatrixMap<Scalar>(v.data(), rows, cols);
}

template <typename Scalar>
MatrixMap<Scalar> as_matrix(Vector<Scalar>& v, int rows, int cols) {
  return MatrixMap<Scalar>(v.data(), rows, cols);
}

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_string(s));
}

template <typename Scalar>
void require_finite(const Vector<Scalar>& v, const char* op) {
  if (!v.allFinite()) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace detail

// C = A * B for A [m x n], B [n x p].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank2(a.shape(), "matmul");
  detail::require_rank2(b.shape(), "matmul");
  const int m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Vector<Scalar> out(static_cast<Eigen::Index>(m) * p);
  detail::as_matrix(out, m, p).noalias() = a.matrix() * b.matrix();
  return make_result<Scalar>({m, p}, std::move(out), {a.node(), b.node()}, [m, n, p](Node<Scalar>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const auto dC = detail::as_matrix(self.grad, m, p);
    if (A.requires_grad) {
      detail::as_matrix(A.grad_buffer(), m, n).noalias() += dC * detail::as_matrix(B.value, n, p).transpose();
    }
    if (B.requires_grad) {
      detail::as_matrix(B.grad_buffer(), n, p).noalias() += detail::as_matrix(A.value, m, n).transpose() * dC;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  detail::require_rank2(a.shape(), "transpose");
  const int m = a.dim(0), n = a.dim(1);
  Vector<Scalar> out(a.size());
  detail::as_matrix(out, n, m) = a.matrix().transpose();
  return make_result<Scalar>({n, m}, std::move(out), {a.node()}, [m, n](Node<Scalar>& self) {
    auto& A = *self.inputs[0];
    detail::as_matrix(A.grad_buffer(), m, n) += detail::as_matrix(self.grad, n, m).transpose();
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_size(shape) != static_cast<std::size_t>(a.size())) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  return make_result<Scalar>(std::move(shape), a.value(), {a.node()},
                             [](Node<Scalar>& self) { self.inputs[0]->grad_buffer() += self.grad; });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Vector<Scalar> out = a.value() + b.value();
  return make_result<Scalar>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->grad_buffer() += self.grad;
    }
  });
}

// x [m x n] + bias [n] broadcast over rows.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  detail::require_rank2(x.shape(), "add_bias");
  const int m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit " + shape_string(x.shape()));
  }
  Vector<Scalar> out = x.value();
  detail::as_matrix(out, m, n).rowwise() += bias.value().transpose();
  return make_result<Scalar>(x.shape(), std::move(out), {x.node(), bias.node()}, [m, n](Node<Scalar>& self) {
    auto& X = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (X.requires_grad) X.grad_buffer() += self.grad;
    if (B.requires_grad) B.grad_buffer() += detail::as_matrix(self.grad, m, n).colwise().sum().transpose();
  });
}

// Elementwise product of equal shapes.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Vector<Scalar> out = a.value().cwiseProduct(b.value());
  return make_result<Scalar>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) A.grad_buffer() += self.grad.cwiseProduct(B.value);
    if (B.requires_grad) B.grad_buffer() += self.grad.cwiseProduct(A.value);
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar c) {
  Vector<Scalar> out = a.value() * c;
  return make_result<Scalar>(a.shape(), std::move(out), {a.node()},
                             [c](Node<Scalar>& self) { self.inputs[0]->grad_buffer() += self.grad * c; });
}

// a * s where s holds a single element.
template <typename Scalar>
Tensor<Scalar> mul_scalar(const Tensor<Scalar>& a, const Tensor<Scalar>& s) {
  if (s.size() != 1) throw DimensionError("mul_scalar: expected a single-element factor, got " + shape_string(s.shape()));
  Vector<Scalar> out = a.value() * s.value()[0];
  return make_result<Scalar>(a.shape(), std::move(out), {a.node(), s.node()}, [](Node<Scalar>& self) {
    auto& A = *self.inputs[0];
    auto& S = *self.inputs[1];
    if (A.requires_grad) A.grad_buffer() += self.grad * S.value[0];
    if (S.requires_grad) S.grad_buffer()[0] += self.grad.dot(A.value);
  });
}

// Element i of a tensor as a one-element tensor.
template <typename Scalar>
Tensor<Scalar> select(const Tensor<Scalar>& a, Eigen::Index i) {
  if (i < 0 || i >= a.size()) throw DimensionError("select: index " + std::to_string(i) + " out of range");
  Vector<Scalar> out(1);
  out[0] = a.value()[i];
  return make_result<Scalar>({1}, std::move(out), {a.node()},
                             [i](Node<Scalar>& self) { self.inputs[0]->grad_buffer()[i] += self.grad[0]; });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Vector<Scalar> out(1);
  out[0] = a.value().sum();
  return make_result<Scalar>({1}, std::move(out), {a.node()},
                             [](Node<Scalar>& self) { self.inputs[0]->grad_buffer().array() += self.grad[0]; });
}

// Softmax along `axis` (negative counts from the back), max-subtracted.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis = -1) {
  const int r = static_cast<int>(x.rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("softmax: axis out of range for " + shape_string(x.shape()));
  detail::require_finite(x.value(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
  for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(x.dim(i));
  const std::size_t n = static_cast<std::size_t>(x.dim(axis));
  const Vector<Scalar>& in = x.value();
  Vector<Scalar> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      Scalar mx = in[base];
      for (std::size_t t = 1; t < n; ++t) mx = std::max(mx, in[base + t * inner]);
      Scalar total = 0;
      for (std::size_t t = 0; t < n; ++t) {
        const Scalar e = std::exp(in[base + t * inner] - mx);
        out[base + t * inner] = e;
        total += e;
      }
      for (std::size_t t = 0; t < n; ++t) out[base + t * inner] /= total;
    }
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [outer, inner, n](Node<Scalar>& self) {
    auto& X = *self.inputs[0];
    Vector<Scalar>& dx = X.grad_buffer();
    const Vector<Scalar>& y = self.value;
    const Vector<Scalar>& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * n * inner + j;
        Scalar dot = 0;
        for (std::size_t t = 0; t < n; ++t) dot += dy[base + t * inner] * y[base + t * inner];
        for (std::size_t t = 0; t < n; ++t) {
          const std::size_t idx = base + t * inner;
          dx[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

// Normalizes each vector along the last axis to zero mean and unit (biased)
// variance, then applies gamma * xhat + beta.
template <typename Scalar>
Tensor<Scalar> layernorm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                         Scalar eps = Scalar(1e-6)) {
  const int d = x.cols();
  const int m = static_cast<int>(x.size() / d);
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layernorm: affine parameters do not match last axis of " + shape_string(x.shape()));
  }
  if (!(eps > 0)) throw ConfigError("layernorm: eps must be positive");
  const auto X = detail::as_matrix(x.value(), m, d);
  RowMatrix<Scalar> xhat(m, d);
  Vector<Scalar> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const Scalar mu = X.row(i).mean();
    const auto centered = (X.row(i).array() - mu).eval();
    const Scalar var = centered.square().mean();
    inv_std[i] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std[i];
  }
  Vector<Scalar> out(x.size());
  auto Y = detail::as_matrix(out, m, d);
  Y = (xhat.array().rowwise() * gamma.value().transpose().array()).rowwise() + beta.value().transpose().array();
  return make_result<Scalar>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Scalar>& self) {
        auto& Xn = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        const auto dY = detail::as_matrix(self.grad, m, d);
        if (G.requires_grad) G.grad_buffer() += dY.cwiseProduct(xhat).colwise().sum().transpose();
        if (B.requires_grad) B.grad_buffer() += dY.colwise().sum().transpose();
        if (Xn.requires_grad) {
          auto dX = detail::as_matrix(Xn.grad_buffer(), m, d);
          const auto g = G.value.transpose().array();
          for (int i = 0; i < m; ++i) {
            const auto dxhat = (dY.row(i).array() * g).eval();
            const Scalar mean_d = dxhat.mean();
            const Scalar mean_dx = (dxhat * xhat.row(i).array()).mean();
            dX.row(i).array() += inv_std[i] * (dxhat - mean_d - xhat.row(i).array() * mean_dx);
          }
        }
      });
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  static constexpr Scalar kC = Scalar(0.7978845608028654);  // sqrt(2/pi)
  static constexpr Scalar kA = Scalar(0.044715);
  const auto xs = x.value().array();
  const auto t = (kC * (xs + kA * xs.cube())).tanh().eval();
  Vector<Scalar> out = (Scalar(0.5) * xs * (Scalar(1) + t)).matrix();
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [t](Node<Scalar>& self) {
    auto& X = *self.inputs[0];
    const auto v = X.value.array();
    const auto dinner = kC * (Scalar(1) + Scalar(3) * kA * v.square());
    const auto deriv = Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * v * (Scalar(1) - t.square()) * dinner;
    X.grad_buffer().array() += self.grad.array() * deriv;
  });
}

// Mean over the batch of -log softmax(logits)[label]. Rank-1 logits are a
// batch of one.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const int c = logits.cols();
  const int b = logits.rows();
  if (static_cast<int>(labels.size()) != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows of logits");
  }
  detail::require_finite(logits.value(), "cross_entropy");
  const auto L = detail::as_matrix(logits.value(), b, c);
  RowMatrix<Scalar> probs(b, c);
  Scalar total = 0;
  for (int i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    const Scalar mx = L.row(i).maxCoeff();
    const auto e = (L.row(i).array() - mx).exp().eval();
    const Scalar z = e.sum();
    probs.row(i) = e / z;
    total += -(L(i, labels[i]) - mx - std::log(z));
  }
  Vector<Scalar> out(1);
  out[0] = total / Scalar(b);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<Scalar>({1}, std::move(out), {logits.node()},
                             [b, c, probs = std::move(probs), lab = std::move(lab)](Node<Scalar>& self) {
                               auto dL = detail::as_matrix(self.inputs[0]->grad_buffer(), b, c);
                               const Scalar g = self.grad[0] / Scalar(b);
                               for (int i = 0; i < b; ++i) {
                                 dL.row(i) += g * probs.row(i);
                                 dL(i, lab[i]) -= g;
                               }
                             });
}

// Rows [begin, begin + count) of a 2-D tensor.
template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, int begin, int count) {
  detail::require_rank2(x.shape(), "slice_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (begin < 0 || count <= 0 || begin + count > m) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.shape()));
  }
  Vector<Scalar> out = x.value().segment(static_cast<Eigen::Index>(begin) * n, static_cast<Eigen::Index>(count) * n);
  return make_result<Scalar>({count, n}, std::move(out), {x.node()}, [begin, count, n](Node<Scalar>& self) {
    self.inputs[0]->grad_buffer().segment(static_cast<Eigen::Index>(begin) * n, static_cast<Eigen::Index>(count) * n) +=
        self.grad;
  });
}

// Columns [begin, begin + count) of a 2-D tensor.
template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, int begin, int count) {
  detail::require_rank2(x.shape(), "slice_cols");
  const int m = x.dim(0), n = x.dim(1);
  if (begin < 0 || count <= 0 || begin + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.shape()));
  }
  Vector<Scalar> out(static_cast<Eigen::Index>(m) * count);
  detail::as_matrix(out, m, count) = x.matrix().middleCols(begin, count);
  return make_result<Scalar>({m, count}, std::move(out), {x.node()}, [m, n, begin, count](Node<Scalar>& self) {
    detail::as_matrix(self.inputs[0]->grad_buffer(), m, n).middleCols(begin, count) +=
        detail::as_matrix(self.grad, m, count);
  });
}

// Stacks 2-D tensors with equal column counts vertically.
template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const int n = parts.front().cols();
  int m = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p.shape(), "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    m += p.rows();
  }
  Vector<Scalar> out(static_cast<Eigen::Index>(m) * n);
  std::vector<std::shared_ptr<Node<Scalar>>> inputs;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.segment(offset, p.size()) = p.value();
    offset += p.size();
    inputs.push_back(p.node());
  }
  return make_result<Scalar>({m, n}, std::move(out), std::move(inputs), [](Node<Scalar>& self) {
    Eigen::Index off = 0;
    for (auto& in : self.inputs) {
      const Eigen::Index len = in->value.size();
      if (in->requires_grad) in->grad_buffer() += self.grad.segment(off, len);
      off += len;
    }
  });
}

// Places 2-D tensors with equal row counts side by side.
template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const int m = parts.front().rows();
  int n = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p.shape(), "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += p.cols();
  }
  Vector<Scalar> out(static_cast<Eigen::Index>(m) * n);
  auto O = detail::as_matrix(out, m, n);
  std::vector<std::shared_ptr<Node<Scalar>>> inputs;
  int col = 0;
  for (const auto& p : parts) {
    O.middleCols(col, p.cols()) = p.matrix();
    col += p.cols();
    inputs.push_back(p.node());
  }
  return make_result<Scalar>({m, n}, std::move(out), std::move(inputs), [m, n](Node<Scalar>& self) {
    const auto dO = detail::as_matrix(self.grad, m, n);
    int c = 0;
    for (auto& in : self.inputs) {
      const int w = in->shape[1];
      if (in->requires_grad) detail::as_matrix(in->grad_buffer(), m, w) += dO.middleCols(c, w);
      c += w;
    }
  });
}

// Column-wise mean of a 2-D tensor, returned as a rank-1 tensor.
template <typename Scalar>
Tensor<Scalar> mean_rows(const Tensor<Scalar>& x) {
  detail::require_rank2(x.shape(), "mean_rows");
  const int m = x.dim(0), n = x.dim(1);
  Vector<Scalar> out = x.matrix().colwise().mean().transpose();
  return make_result<Scalar>({n}, std::move(out), {x.node()}, [m, n](Node<Scalar>& self) {
    detail::as_matrix(self.inputs[0]->grad_buffer(), m, n).rowwise() +=
        (self.grad / Scalar(m)).transpose();
  });
}

// Rows `index` of x, in the given order.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const int> index) {
  detail::require_rank2(x.shape(), "gather_rows");
  const int m = x.dim(0), n = x.dim(1);
  const int k = static_cast<int>(index.size());
  if (k == 0) throw DimensionError("gather_rows: empty index");
  Vector<Scalar> out(static_cast<Eigen::Index>(k) * n);
  auto O = detail::as_matrix(out, k, n);
  for (int i = 0; i < k; ++i) {
    if (index[i] < 0 || index[i] >= m) throw DimensionError("gather_rows: row index out of range");
    O.row(i) = x.matrix().row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return make_result<Scalar>({k, n}, std::move(out), {x.node()}, [m, n, k, idx = std::move(idx)](Node<Scalar>& self) {
    auto dX = detail::as_matrix(self.inputs[0]->grad_buffer(), m, n);
    const auto dO = detail::as_matrix(self.grad, k, n);
    for (int i = 0; i < k; ++i) dX.row(idx[i]) += dO.row(i);
  });
}

// Inverse of gather_rows: a [rows x n] tensor holding x's rows at `index`,
// zeros elsewhere.
template <typename Scalar>
Tensor<Scalar> scatter_rows(const Tensor<Scalar>& x, std::span<const int> index, int rows) {
  detail::require_rank2(x.shape(), "scatter_rows");
  const int k = x.dim(0), n = x.dim(1);
  if (static_cast<int>(index.size()) != k) throw DimensionError("scatter_rows: index length differs from row count");
  Vector<Scalar> out = Vector<Scalar>::Zero(static_cast<Eigen::Index>(rows) * n);
  auto O = detail::as_matrix(out, rows, n);
  for (int i = 0; i < k; ++i) {
    if (index[i] < 0 || index[i] >= rows) throw DimensionError("scatter_rows: row index out of range");
    O.row(index[i]) += x.matrix().row(i);
  }
  std::vector<int> idx(index.begin(), index.end());
  return make_result<Scalar>({rows, n}, std::move(out), {x.node()},
                             [rows, n, k, idx = std::move(idx)](Node<Scalar>& self) {
                               auto dX = detail::as_matrix(self.inputs[0]->grad_buffer(), k, n);
                               const auto dO = detail::as_matrix(self.grad, rows, n);
                               for (int i = 0; i < k; ++i) dX.row(i) += dO.row(idx[i]);
                             });
}

// Scales row i of x [m x n] by w[i].
template <typename Scalar>
Tensor<Scalar> mul_rows(const Tensor<Scalar>& x, const Tensor<Scalar>& w) {
  detail::require_rank2(x.shape(), "mul_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (w.size() != m) throw DimensionError("mul_rows: weight length does not match row count");
  Vector<Scalar> out(x.size());
  detail::as_matrix(out, m, n) = x.matrix().array().colwise() * w.value().array();
  return make_result<Scalar>(x.shape(), std::move(out), {x.node(), w.node()}, [m, n](Node<Scalar>& self) {
    auto& X = *self.inputs[0];
    auto& W = *self.inputs[1];
    const auto dO = detail::as_matrix(self.grad, m, n);
    if (X.requires_grad) {
      detail::as_matrix(X.grad_buffer(), m, n).array() += dO.array().colwise() * W.value.array();
    }
    if (W.requires_grad) W.grad_buffer() += dO.cwiseProduct(detail::as_matrix(X.value, m, n)).rowwise().sum();
  });
}

// x[rows[i], col] for each i, as a rank-1 tensor.
template <typename Scalar>
Tensor<Scalar> gather_column(const Tensor<Scalar>& x, std::span<const int> rows, int col) {
  detail::require_rank2(x.shape(), "gather_column");
  const int m = x.dim(0), n = x.dim(1);
  const int k = static_cast<int>(rows.size());
  if (k == 0 || col < 0 || col >= n) throw DimensionError("gather_column: bad index");
  Vector<Scalar> out(k);
  for (int i = 0; i < k; ++i) {
    if (rows[i] < 0 || rows[i] >= m) throw DimensionError("gather_column: row index out of range");
    out[i] = x.matrix()(rows[i], col);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result<Scalar>({k}, std::move(out), {x.node()}, [m, n, col, idx = std::move(idx)](Node<Scalar>& self) {
    auto dX = detail::as_matrix(self.inputs[0]->grad_buffer(), m, n);
    for (std::size_t i = 0; i < idx.size(); ++i) dX(idx[i], col) += self.grad[static_cast<Eigen::Index>(i)];
  });
}

// y = x W + b with W stored [in x out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  return add_bias(matmul(x, weight), bias);
}

}  // namespace vmoe
