// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "clipforge/errors.hpp"
#include "kernels.hpp"

namespace clipforge {

namespace {

using detail::ImplPtr;
using detail::TensorImpl;

std::string shapes(const Tensor& a, const Tensor& b) { return to_string(a.shape()) + " and " + to_string(b.shape()); }

void require_dim(const Tensor& t, std::size_t d, const char* op) {
  if (t.dim() != d)
    throw DimensionError(std::string(op) + ": expected a " + std::to_string(d) + "-d tensor, got " +
                         to_string(t.shape()));
}

// Number of elements b spans when it matches a's shape or a's trailing extents.
std::size_t broadcast_inner(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
    throw DimensionError(std::string(op) + ": cannot broadcast " + shapes(a, b));
  return b.numel();
}

Tensor empty_like_shape(const Shape& shape) { return Tensor::zeros(shape); }

float* out_ptr(Tensor& t) { return t.mutable_data().data(); }

}  // namespace

// -- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0))
    throw DimensionError("matmul: incompatible shapes " + shapes(a, b));
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor out = empty_like_shape({m, n});
  kernels::gemm_nn(a.data().data(), b.data().data(), out_ptr(out), m, k, n, false);
  ImplPtr A = a.impl(), B = b.impl();
  return record(out, "matmul", {a, b}, [A, B, m, k, n](const TensorImpl& o) {
    if (A->requires_grad) kernels::gemm_nt(o.grad.data(), B->data.data(), A->grad_buffer().data(), m, n, k, true);
    if (B->requires_grad) kernels::gemm_tn(A->data.data(), o.grad.data(), B->grad_buffer().data(), m, k, n, true);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_dim(w, 2, "linear");
  const std::size_t in = w.size(0), outd = w.size(1);
  if (x.shape().back() != in) throw DimensionError("linear: incompatible shapes " + shapes(x, w));
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != outd))
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(w.shape()));
  const std::size_t rows = x.numel() / in;
  Shape oshape = x.shape();
  oshape.back() = outd;
  Tensor out = empty_like_shape(oshape);
  float* o = out_ptr(out);
  kernels::gemm_nn(x.data().data(), w.data().data(), o, rows, in, outd, false);
  if (bias.defined()) {
    const float* bb = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outd; ++j) o[r * outd + j] += bb[j];
  }
  ImplPtr X = x.impl(), W = w.impl(), Bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return record(out, "linear", std::move(inputs), [X, W, Bi, rows, in, outd](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (X->requires_grad) kernels::gemm_nt(g, W->data.data(), X->grad_buffer().data(), rows, outd, in, true);
    if (W->requires_grad) kernels::gemm_tn(X->data.data(), g, W->grad_buffer().data(), rows, in, outd, true);
    if (Bi && Bi->requires_grad) {
      std::vector<double> acc(outd, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < outd; ++j) acc[j] += g[r * outd + j];
      auto gb = Bi->grad_buffer();
      for (std::size_t j = 0; j < outd; ++j) gb[j] += static_cast<float>(acc[j]);
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.dim() != 3 || b.dim() != 3 || a.size(0) != b.size(0))
    throw DimensionError("bmm: incompatible shapes " + shapes(a, b));
  const std::size_t batch = a.size(0), m = a.size(1), k = a.size(2);
  const std::size_t n = transpose_b ? b.size(1) : b.size(2);
  if ((transpose_b ? b.size(2) : b.size(1)) != k) throw DimensionError("bmm: incompatible shapes " + shapes(a, b));
  Tensor out = empty_like_shape({batch, m, n});
  float* o = out_ptr(out);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (transpose_b)
      kernels::gemm_nt(pa + i * m * k, pb + i * n * k, o + i * m * n, m, k, n, false);
    else
      kernels::gemm_nn(pa + i * m * k, pb + i * k * n, o + i * m * n, m, k, n, false);
  }
  ImplPtr A = a.impl(), B = b.impl();
  return record(out, "bmm", {a, b}, [A, B, batch, m, k, n, transpose_b](const TensorImpl& o) {
    const float* g = o.grad.data();
    float* ga = A->requires_grad ? A->grad_buffer().data() : nullptr;
    float* gb = B->requires_grad ? B->grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      const float* gi = g + i * m * n;
      const float* ai = A->data.data() + i * m * k;
      const float* bi = B->data.data() + i * k * n;
      if (transpose_b) {
        if (ga) kernels::gemm_nn(gi, bi, ga + i * m * k, m, n, k, true);
        if (gb) kernels::gemm_tn(gi, ai, gb + i * n * k, m, n, k, true);
      } else {
        if (ga) kernels::gemm_nt(gi, bi, ga + i * m * k, m, n, k, true);
        if (gb) kernels::gemm_tn(ai, gi, gb + i * k * n, m, k, n, true);
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_dim(a, 2, "transpose");
  const std::size_t r = a.size(0), c = a.size(1);
  Tensor out = empty_like_shape({c, r});
  float* o = out_ptr(out);
  const float* p = a.data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = p[i * c + j];
  ImplPtr A = a.impl();
  return record(out, "transpose", {a}, [A, r, c](const TensorImpl& o) {
    auto g = A->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

// -- elementwise -------------------------------------------------------------

namespace {

template <typename Fwd>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, float b_sign, bool product) {
  const std::size_t inner = broadcast_inner(a, b, op);
  const std::size_t total = a.numel();
  Tensor out = empty_like_shape(a.shape());
  float* o = out_ptr(out);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (std::size_t i = 0; i < total; ++i) o[i] = fwd(pa[i], pb[i % inner]);
  ImplPtr A = a.impl(), B = b.impl();
  return record(out, op, {a, b}, [A, B, inner, total, b_sign, product](const TensorImpl& o) {
    const float* g = o.grad.data();
    if (A->requires_grad) {
      auto ga = A->grad_buffer();
      if (product)
        for (std::size_t i = 0; i < total; ++i) ga[i] += g[i] * B->data[i % inner];
      else
        for (std::size_t i = 0; i < total; ++i) ga[i] += g[i];
    }
    if (B->requires_grad) {
      std::vector<double> acc(inner, 0.0);
      if (product)
        for (std::size_t i = 0; i < total; ++i) acc[i % inner] += static_cast<double>(g[i]) * A->data[i];
      else
        for (std::size_t i = 0; i < total; ++i) acc[i % inner] += g[i];
      auto gb = B->grad_buffer();
      for (std::size_t j = 0; j < inner; ++j) gb[j] += b_sign * static_cast<float>(acc[j]);
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  const std::size_t total = a.numel();
  Tensor out = empty_like_shape(a.shape());
  float* o = out_ptr(out);
  const float* p = a.data().data();
  for (std::size_t i = 0; i < total; ++i) o[i] = fwd(p[i]);
  ImplPtr A = a.impl();
  return record(out, op, {a}, [A, total, deriv](const TensorImpl& o) {
    auto g = A->grad_buffer();
    for (std::size_t i = 0; i < total; ++i) g[i] += o.grad[i] * deriv(A->data[i], o.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(a, b, "add", [](float x, float y) { return x + y; }, 1.0f, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast(a, b, "sub", [](float x, float y) { return x - y; }, -1.0f, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(a, b, "mul", [](float x, float y) { return x * y; }, 1.0f, true);
}

Tensor scale(const Tensor& a, float factor) {
  return unary(
      a, "scale", [factor](float x) { return x * factor; }, [factor](float, float) { return factor; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: scalar operand has shape " + to_string(s.shape()));
  const float sv = s.item();
  const std::size_t total = a.numel();
  Tensor out = empty_like_shape(a.shape());
  float* o = out_ptr(out);
  const float* p = a.data().data();
  for (std::size_t i = 0; i < total; ++i) o[i] = p[i] * sv;
  ImplPtr A = a.impl(), S = s.impl();
  return record(out, "mul_scalar", {a, s}, [A, S, total](const TensorImpl& o) {
    const float sv = S->data[0];
    if (A->requires_grad) {
      auto ga = A->grad_buffer();
      for (std::size_t i = 0; i < total; ++i) ga[i] += o.grad[i] * sv;
    }
    if (S->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < total; ++i) acc += static_cast<double>(o.grad[i]) * A->data[i];
      S->grad_buffer()[0] += static_cast<float>(acc);
    }
  });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor clamp_max(const Tensor& a, float hi) {
  return unary(
      a, "clamp_max", [hi](float x) { return std::min(x, hi); },
      [hi](float x, float) { return x <= hi ? 1.0f : 0.0f; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, "gelu",
      [](float x) {
        const double xd = x;
        return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd * std::numbers::sqrt2 / 2.0)));
      },
      [](float x, float) {
        const double xd = x;
        const double cdf = 0.5 * (1.0 + std::erf(xd * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * std::numbers::pi);
        return static_cast<float>(cdf + xd * pdf);
      });
}

// -- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  ImplPtr A = a.impl();
  return record(out, "sum", {a}, [A](const TensorImpl& o) {
    const float g = o.grad[0];
    for (float& v : A->grad_buffer()) v += g;
  });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const std::size_t n = a.numel();
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  ImplPtr A = a.impl();
  return record(out, "mean", {a}, [A, n](const TensorImpl& o) {
    const float g = static_cast<float>(o.grad[0] / static_cast<double>(n));
    for (float& v : A->grad_buffer()) v += g;
  });
}

// -- shape -------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (clipforge::numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  Tensor out = Tensor::from(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()));
  ImplPtr A = a.impl();
  return record(out, "reshape", {a}, [A](const TensorImpl& o) { A->accumulate_grad(o.grad); });
}

// -- normalization -----------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.dim() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.dim() != 1 || bias.dim() != 1 || gain.size(0) != d || bias.size(0) != d)
    throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                         " do not match feature extent of " + to_string(x.shape()));
  if (!(eps >= 0.0f)) throw ContractError("layer_norm: eps must be non-negative");
  const std::size_t rows = x.numel() / d;
  Tensor out = empty_like_shape(x.shape());
  float* o = out_ptr(out);
  const float* px = x.data().data();
  const float* pg = gain.data().data();
  const float* pb = bias.data().data();
  auto stats = std::make_shared<std::vector<double>>(2 * rows);  // mean, rstd per row
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = rstd;
    float* orow = o + r * d;
    for (std::size_t j = 0; j < d; ++j)
      orow[j] = static_cast<float>((xr[j] - mu) * rstd * pg[j] + pb[j]);
  }
  ImplPtr X = x.impl(), G = gain.impl(), B = bias.impl();
  return record(out, "layer_norm", {x, gain, bias}, [X, G, B, stats, rows, d](const TensorImpl& o) {
    std::vector<double> dgain(d, 0.0), dbias(d, 0.0), xhat(d), gh(d);
    float* gx = X->requires_grad ? X->grad_buffer().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const double mu = (*stats)[2 * r], rstd = (*stats)[2 * r + 1];
      const float* xr = X->data.data() + r * d;
      const float* dy = o.grad.data() + r * d;
      double mean_g = 0.0, mean_gx = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (xr[j] - mu) * rstd;
        gh[j] = static_cast<double>(dy[j]) * G->data[j];
        mean_g += gh[j];
        mean_gx += gh[j] * xhat[j];
        dgain[j] += static_cast<double>(dy[j]) * xhat[j];
        dbias[j] += dy[j];
      }
      mean_g /= static_cast<double>(d);
      mean_gx /= static_cast<double>(d);
      if (gx)
        for (std::size_t j = 0; j < d; ++j)
          gx[r * d + j] += static_cast<float>(rstd * (gh[j] - mean_g - xhat[j] * mean_gx));
    }
    if (G->requires_grad) {
      auto g = G->grad_buffer();
      for (std::size_t j = 0; j < d; ++j) g[j] += static_cast<float>(dgain[j]);
    }
    if (B->requires_grad) {
      auto g = B->grad_buffer();
      for (std::size_t j = 0; j < d; ++j) g[j] += static_cast<float>(dbias[j]);
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.dim() == 0) throw DimensionError("softmax_rows: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out = empty_like_shape(x.shape());
  float* o = out_ptr(out);
  const float* p = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = p + r * n;
    float* yr = o + r * n;
    const float mx = *std::max_element(xr, xr + n);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(static_cast<double>(xr[j]) - mx);
    for (std::size_t j = 0; j < n; ++j) yr[j] = static_cast<float>(std::exp(static_cast<double>(xr[j]) - mx) / denom);
  }
  ImplPtr X = x.impl();
  return record(out, "softmax_rows", {x}, [X, rows, n](const TensorImpl& o) {
    auto g = X->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const float* y = o.data.data() + r * n;
      const float* dy = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += static_cast<float>(y[j] * (dy[j] - dot));
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_dim(logits, 2, "cross_entropy");
  const std::size_t n = logits.size(0), c = logits.size(1);
  if (targets.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(logits.shape()));
  auto probs = std::make_shared<std::vector<double>>(n * c);
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  const float* p = logits.data().data();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= c) throw InputError("cross_entropy: target " + std::to_string(targets[r]) + " out of range");
    const float* xr = p + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(xr[j] - mx);
    const double lse = mx + std::log(denom);
    total += lse - xr[targets[r]];
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(xr[j] - lse);
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  ImplPtr L = logits.impl();
  return record(out, "cross_entropy", {logits}, [L, probs, tgt, n, c](const TensorImpl& o) {
    const double g = o.grad[0] / static_cast<double>(n);
    auto gl = L->grad_buffer();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j)
        gl[r * c + j] += static_cast<float>(g * ((*probs)[r * c + j] - (j == (*tgt)[r] ? 1.0 : 0.0)));
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.dim() == 0) throw DimensionError("l2_normalize_rows: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto norms = std::make_shared<std::vector<double>>(rows);
  Tensor out = empty_like_shape(x.shape());
  float* o = out_ptr(out);
  const float* p = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(p[r * d + j]) * p[r * d + j];
    const double nr = std::max(std::sqrt(ss), 1e-12);
    (*norms)[r] = nr;
    for (std::size_t j = 0; j < d; ++j) o[r * d + j] = static_cast<float>(p[r * d + j] / nr);
  }
  ImplPtr X = x.impl();
  return record(out, "l2_normalize_rows", {x}, [X, norms, rows, d](const TensorImpl& o) {
    auto g = X->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const float* y = o.data.data() + r * d;
      const float* dy = o.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(y[j]) * dy[j];
      const double nr = (*norms)[r];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += static_cast<float>((dy[j] - y[j] * dot) / nr);
    }
  });
}

// -- token plumbing ----------------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
  require_dim(table, 2, "embedding");
  if (clipforge::numel(ids_shape) != ids.size())
    throw DimensionError("embedding: id shape " + to_string(ids_shape) + " does not match " +
                         std::to_string(ids.size()) + " ids");
  const std::size_t vocab = table.size(0), d = table.size(1);
  for (std::int32_t id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw InputError("embedding: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
  Shape oshape = ids_shape;
  oshape.push_back(d);
  Tensor out = empty_like_shape(oshape);
  float* o = out_ptr(out);
  const float* t = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(t + static_cast<std::size_t>(ids[i]) * d, d, o + i * d);
  ImplPtr T = table.impl();
  auto idv = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  return record(out, "embedding", {table}, [T, idv, d](const TensorImpl& o) {
    auto g = T->grad_buffer();
    for (std::size_t i = 0; i < idv->size(); ++i) {
      float* row = g.data() + static_cast<std::size_t>((*idv)[i]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += o.grad[i * d + j];
    }
  });
}

Tensor prepend_token(const Tensor& x, const Tensor& token) {
  require_dim(x, 3, "prepend_token");
  const std::size_t b = x.size(0), n = x.size(1), d = x.size(2);
  if (token.numel() != d) throw DimensionError("prepend_token: token " + to_string(token.shape()) + " vs " + to_string(x.shape()));
  Tensor out = empty_like_shape({b, n + 1, d});
  float* o = out_ptr(out);
  const float* px = x.data().data();
  const float* pt = token.data().data();
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(pt, d, o + i * (n + 1) * d);
    std::copy_n(px + i * n * d, n * d, o + i * (n + 1) * d + d);
  }
  ImplPtr X = x.impl(), T = token.impl();
  return record(out, "prepend_token", {x, token}, [X, T, b, n, d](const TensorImpl& o) {
    if (X->requires_grad) {
      auto g = X->grad_buffer();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < n * d; ++j) g[i * n * d + j] += o.grad[i * (n + 1) * d + d + j];
    }
    if (T->requires_grad) {
      std::vector<double> acc(d, 0.0);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) acc[j] += o.grad[i * (n + 1) * d + j];
      auto g = T->grad_buffer();
      for (std::size_t j = 0; j < d; ++j) g[j] += static_cast<float>(acc[j]);
    }
  });
}

Tensor gather_tokens(const Tensor& x, const std::vector<std::vector<std::size_t>>& index) {
  require_dim(x, 3, "gather_tokens");
  const std::size_t b = x.size(0), n = x.size(1), d = x.size(2);
  if (index.size() != b) throw DimensionError("gather_tokens: " + std::to_string(index.size()) + " index rows for " + to_string(x.shape()));
  const std::size_t k = index.empty() ? 0 : index[0].size();
  for (const auto& row : index) {
    if (row.size() != k) throw DimensionError("gather_tokens: ragged index rows");
    for (std::size_t t : row)
      if (t >= n) throw DimensionError("gather_tokens: position " + std::to_string(t) + " out of range for " + to_string(x.shape()));
  }
  Tensor out = empty_like_shape({b, k, d});
  float* o = out_ptr(out);
  const float* px = x.data().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) std::copy_n(px + (i * n + index[i][j]) * d, d, o + (i * k + j) * d);
  ImplPtr X = x.impl();
  auto idx = std::make_shared<std::vector<std::vector<std::size_t>>>(index);
  return record(out, "gather_tokens", {x}, [X, idx, b, n, k, d](const TensorImpl& o) {
    auto g = X->grad_buffer();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        float* dst = g.data() + (i * n + (*idx)[i][j]) * d;
        const float* src = o.grad.data() + (i * k + j) * d;
        for (std::size_t e = 0; e < d; ++e) dst[e] += src[e];
      }
  });
}

Tensor select_tokens(const Tensor& x, std::span<const std::size_t> position) {
  require_dim(x, 3, "select_tokens");
  const std::size_t b = x.size(0), n = x.size(1), d = x.size(2);
  if (position.size() != b) throw DimensionError("select_tokens: " + std::to_string(position.size()) + " positions for " + to_string(x.shape()));
  for (std::size_t p : position)
    if (p >= n) throw DimensionError("select_tokens: position " + std::to_string(p) + " out of range for " + to_string(x.shape()));
  Tensor out = empty_like_shape({b, d});
  float* o = out_ptr(out);
  const float* px = x.data().data();
  for (std::size_t i = 0; i < b; ++i) std::copy_n(px + (i * n + position[i]) * d, d, o + i * d);
  ImplPtr X = x.impl();
  auto pos = std::make_shared<std::vector<std::size_t>>(position.begin(), position.end());
  return record(out, "select_tokens", {x}, [X, pos, b, n, d](const TensorImpl& o) {
    auto g = X->grad_buffer();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t e = 0; e < d; ++e) g[(i * n + (*pos)[i]) * d + e] += o.grad[i * d + e];
  });
}

Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t part, std::size_t parts) {
  require_dim(x, 3, "split_heads");
  const std::size_t b = x.size(0), n = x.size(1), total = x.size(2);
  if (parts == 0 || part >= parts || total % parts != 0 || (total / parts) % heads != 0)
    throw DimensionError("split_heads: cannot split " + to_string(x.shape()) + " into " + std::to_string(parts) +
                         " parts of " + std::to_string(heads) + " heads");
  const std::size_t width = total / parts, dh = width / heads, offset = part * width;
  Tensor out = empty_like_shape({b * heads, n, dh});
  float* o = out_ptr(out);
  const float* px = x.data().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t)
        std::copy_n(px + (i * n + t) * total + offset + h * dh, dh, o + ((i * heads + h) * n + t) * dh);
  ImplPtr X = x.impl();
  return record(out, "split_heads", {x}, [X, b, n, total, heads, dh, offset](const TensorImpl& o) {
    auto g = X->grad_buffer();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < n; ++t) {
          float* dst = g.data() + (i * n + t) * total + offset + h * dh;
          const float* src = o.grad.data() + ((i * heads + h) * n + t) * dh;
          for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
        }
  });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require_dim(x, 3, "merge_heads");
  if (heads == 0 || x.size(0) % heads != 0)
    throw DimensionError("merge_heads: " + to_string(x.shape()) + " is not divisible into " + std::to_string(heads) + " heads");
  const std::size_t b = x.size(0) / heads, n = x.size(1), dh = x.size(2), width = heads * dh;
  Tensor out = empty_like_shape({b, n, width});
  float* o = out_ptr(out);
  const float* px = x.data().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t)
        std::copy_n(px + ((i * heads + h) * n + t) * dh, dh, o + (i * n + t) * width + h * dh);
  ImplPtr X = x.impl();
  return record(out, "merge_heads", {x}, [X, b, n, dh, width, heads](const TensorImpl& o) {
    auto g = X->grad_buffer();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < n; ++t) {
          float* dst = g.data() + ((i * heads + h) * n + t) * dh;
          const float* src = o.grad.data() + (i * n + t) * width + h * dh;
          for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
        }
  });
}

Tensor causal_mask(const Tensor& scores) {
  require_dim(scores, 3, "causal_mask");
  const std::size_t batch = scores.size(0), n = scores.size(1);
  if (scores.size(2) != n) throw DimensionError("causal_mask: scores must be square, got " + to_string(scores.shape()));
  Tensor out = Tensor::from(scores.shape(), std::vector<float>(scores.data().begin(), scores.data().end()));
  float* o = out_ptr(out);
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) o[(b * n + i) * n + j] = kNegInf;
  ImplPtr S = scores.impl();
  return record(out, "causal_mask", {scores}, [S, batch, n](const TensorImpl& o) {
    auto g = S->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) g[(b * n + i) * n + j] += o.grad[(b * n + i) * n + j];
  });
}

Tensor drop_path(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw RangeError("drop_path: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const std::size_t b = x.size(0), per = x.numel() / b;
  auto keep = std::make_shared<std::vector<float>>(b);
  const float survivor = static_cast<float>(1.0 / (1.0 - rate));
  for (float& k : *keep) k = rng.uniform() >= rate ? survivor : 0.0f;
  Tensor out = empty_like_shape(x.shape());
  float* o = out_ptr(out);
  const float* p = x.data().data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < per; ++j) o[i * per + j] = p[i * per + j] * (*keep)[i];
  ImplPtr X = x.impl();
  return record(out, "drop_path", {x}, [X, keep, b, per](const TensorImpl& o) {
    auto g = X->grad_buffer();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < per; ++j) g[i * per + j] += o.grad[i * per + j] * (*keep)[i];
  });
}

Tensor patchify(const Tensor& images, std::size_t patch_size) {
  require_dim(images, 4, "patchify");
  const std::size_t b = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  const std::size_t p = patch_size;
  if (p == 0 || h % p != 0 || w % p != 0)
    throw DimensionError("patchify: image extent " + to_string(images.shape()) + " not divisible by patch size " +
                         std::to_string(p));
  const std::size_t gh = h / p, gw = w / p, n = gh * gw, len = c * p * p;
  Tensor out = empty_like_shape({b, n, len});
  float* o = out_ptr(out);
  const float* px = images.data().data();
  // Flat index map from output element to source pixel; shared with backward.
  auto src = std::make_shared<std::vector<std::size_t>>(n * len);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t pxi = 0; pxi < gw; ++pxi) {
      const std::size_t t = py * gw + pxi;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t r = 0; r < p; ++r)
          for (std::size_t col = 0; col < p; ++col)
            (*src)[t * len + (ch * p + r) * p + col] = (ch * h + py * p + r) * w + pxi * p + col;
    }
  const std::size_t image_elems = c * h * w;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t e = 0; e < n * len; ++e) o[i * n * len + e] = px[i * image_elems + (*src)[e]];
  ImplPtr I = images.impl();
  return record(out, "patchify", {images}, [I, src, b, n, len, image_elems](const TensorImpl& o) {
    auto g = I->grad_buffer();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t e = 0; e < n * len; ++e) g[i * image_elems + (*src)[e]] += o.grad[i * n * len + e];
  });
}

}  // namespace clipforge
