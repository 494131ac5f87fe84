// SPDX-License-Identifier: Apache-2.0
#include "permstr/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "permstr/numerics/kernels.hpp"
#include "permstr/numerics/tape.hpp"

namespace permstr::num {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

void require_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": dtype mismatch " + to_string(a.dtype()) + " vs " +
                        to_string(b.dtype()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) {
    return false;
  }
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_output(Shape shape, DType dtype, bool track) {
  Tensor out = Tensor::zeros(std::move(shape), dtype);
  out.set_requires_grad(track);
  return out;
}

void record(const char* op, std::vector<ImplPtr> inputs, const Tensor& out,
            std::function<void()> fn) {
  Tape::active()->record(op, std::move(inputs), out, std::move(fn));
}

std::size_t last_dim(const Tensor& t) { return t.shape().empty() ? 1 : t.shape().back(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype("matmul", a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  const bool track = tracking({&a, &b});
  Tensor out = make_output({m, n}, a.dtype(), track);
  dispatch(a.dtype(), [&]<typename T>() {
    kernels::gemm<T>(a.data<T>(), b.data<T>(), out.data<T>(), m, k, n, false);
  });
  if (track) {
    ImplPtr ai = a.shared();
    ImplPtr bi = b.shared();
    TensorImpl* oi = out.impl();
    record("matmul", {ai, bi}, out, [ai, bi, oi, m, k, n] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        if (ai->requires_grad) {
          kernels::gemm_nt<T>(go, bi->values<T>(), ai->grad_values<T>(), m, n, k, true);
        }
        if (bi->requires_grad) {
          kernels::gemm_tn<T>(ai->values<T>(), go, bi->grad_values<T>(), k, m, n, true);
        }
      });
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dtype("add", a, b);
  require_same_shape("add", a, b);
  const bool track = tracking({&a, &b});
  Tensor out = make_output(a.shape(), a.dtype(), track);
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = x[i] + y[i];
    }
  });
  if (track) {
    ImplPtr ai = a.shared();
    ImplPtr bi = b.shared();
    TensorImpl* oi = out.impl();
    record("add", {ai, bi}, out, [ai, bi, oi] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        for (TensorImpl* in : {ai.get(), bi.get()}) {
          if (in->requires_grad) {
            auto& g = in->grad_values<T>();
            for (std::size_t i = 0; i < g.size(); ++i) {
              g[i] += go[i];
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_same_dtype("add_bias", x, bias);
  const std::size_t d = last_dim(x);
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not match last axis of " + shape_string(x.shape()));
  }
  const bool track = tracking({&x, &bias});
  Tensor out = make_output(x.shape(), x.dtype(), track);
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto b = bias.data<T>();
    auto o = out.data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        o[r * d + j] = src[r * d + j] + b[j];
      }
    }
  });
  if (track) {
    ImplPtr xi = x.shared();
    ImplPtr bi = bias.shared();
    TensorImpl* oi = out.impl();
    record("add_bias", {xi, bi}, out, [xi, bi, oi, rows, d] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        if (xi->requires_grad) {
          auto& g = xi->grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += go[i];
          }
        }
        if (bi->requires_grad) {
          auto& g = bi->grad_values<T>();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              g[j] += go[r * d + j];
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dtype("mul", a, b);
  require_same_shape("mul", a, b);
  const bool track = tracking({&a, &b});
  Tensor out = make_output(a.shape(), a.dtype(), track);
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = x[i] * y[i];
    }
  });
  if (track) {
    ImplPtr ai = a.shared();
    ImplPtr bi = b.shared();
    TensorImpl* oi = out.impl();
    record("mul", {ai, bi}, out, [ai, bi, oi] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        const auto& x = ai->values<T>();
        const auto& y = bi->values<T>();
        if (ai->requires_grad) {
          auto& g = ai->grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += go[i] * y[i];
          }
        }
        if (bi->requires_grad) {
          auto& g = bi->grad_values<T>();
          for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += go[i] * x[i];
          }
        }
      });
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), x.dtype(), track);
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto o = out.data<T>();
    const T f = static_cast<T>(factor);
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = src[i] * f;
    }
  });
  if (track) {
    ImplPtr xi = x.shared();
    TensorImpl* oi = out.impl();
    record("scale", {xi}, out, [xi, oi, factor] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        auto& g = xi->grad_values<T>();
        const T f = static_cast<T>(factor);
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += go[i] * f;
        }
      });
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = make_output({1}, x.dtype(), track);
  dispatch(x.dtype(), [&]<typename T>() {
    T acc = 0;
    for (T v : x.data<T>()) {
      acc += v;
    }
    out.data<T>()[0] = acc;
  });
  if (track) {
    ImplPtr xi = x.shared();
    TensorImpl* oi = out.impl();
    record("sum", {xi}, out, [xi, oi] {
      dispatch(oi->dtype, [&]<typename T>() {
        const T go = oi->grad_values<T>()[0];
        for (T& g : xi->grad_values<T>()) {
          g += go;
        }
      });
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(x.shape()));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) {
    outer *= x.dim(i);
  }
  for (std::size_t i = axis + 1; i < x.rank(); ++i) {
    inner *= x.dim(i);
  }
  const std::size_t len = x.dim(axis);
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), x.dtype(), track);
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * len * inner + c;
        T peak = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < len; ++i) {
          peak = std::max(peak, src[base + i * inner]);
        }
        T total = 0;
        for (std::size_t i = 0; i < len; ++i) {
          const T e = std::exp(src[base + i * inner] - peak);
          o[base + i * inner] = e;
          total += e;
        }
        for (std::size_t i = 0; i < len; ++i) {
          o[base + i * inner] /= total;
        }
      }
    }
  });
  if (track) {
    ImplPtr xi = x.shared();
    TensorImpl* oi = out.impl();
    record("softmax", {xi}, out, [xi, oi, outer, inner, len] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        const auto& y = oi->values<T>();
        auto& g = xi->grad_values<T>();
        for (std::size_t a = 0; a < outer; ++a) {
          for (std::size_t c = 0; c < inner; ++c) {
            const std::size_t base = a * len * inner + c;
            T dot = 0;
            for (std::size_t i = 0; i < len; ++i) {
              dot += go[base + i * inner] * y[base + i * inner];
            }
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t at = base + i * inner;
              g[at] += y[at] * (go[at] - dot);
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_same_dtype("layer_norm", x, gamma);
  require_same_dtype("layer_norm", x, beta);
  const std::size_t d = last_dim(x);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: gamma " + shape_string(gamma.shape()) + " / beta " +
                         shape_string(beta.shape()) + " do not match last axis of " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  const bool track = tracking({&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), x.dtype(), track);
  // Normalized activations and reciprocal deviations, kept for backward.
  auto normalized = std::make_shared<Buffer>();
  auto inv_std = std::make_shared<Buffer>();
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto g = gamma.data<T>();
    auto b = beta.data<T>();
    auto o = out.data<T>();
    std::vector<T> xhat(track ? x.numel() : 0);
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = src.data() + r * d;
      T mean = 0;
      for (std::size_t j = 0; j < d; ++j) {
        mean += row[j];
      }
      mean /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const T c = row[j] - mean;
        var += c * c;
      }
      var /= static_cast<T>(d);
      rstd[r] = T{1} / std::sqrt(var + static_cast<T>(eps));
      for (std::size_t j = 0; j < d; ++j) {
        const T h = (row[j] - mean) * rstd[r];
        if (track) {
          xhat[r * d + j] = h;
        }
        o[r * d + j] = h * g[j] + b[j];
      }
    }
    *normalized = std::move(xhat);
    *inv_std = std::move(rstd);
  });
  if (track) {
    ImplPtr xi = x.shared();
    ImplPtr gi = gamma.shared();
    ImplPtr bi = beta.shared();
    TensorImpl* oi = out.impl();
    record("layer_norm", {xi, gi, bi}, out, [xi, gi, bi, oi, normalized, inv_std, rows, d] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        const auto& xhat = std::get<std::vector<T>>(*normalized);
        const auto& rstd = std::get<std::vector<T>>(*inv_std);
        const auto& g = gi->values<T>();
        if (gi->requires_grad) {
          auto& gg = gi->grad_values<T>();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += go[r * d + j] * xhat[r * d + j];
            }
          }
        }
        if (bi->requires_grad) {
          auto& gb = bi->grad_values<T>();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              gb[j] += go[r * d + j];
            }
          }
        }
        if (xi->requires_grad) {
          auto& gx = xi->grad_values<T>();
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0;
            T mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = go[r * d + j] * g[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = go[r * d + j] * g[j];
              gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), x.dtype(), track);
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto o = out.data<T>();
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = src[i] * T{0.5} * (T{1} + std::erf(src[i] * inv_sqrt2));
    }
  });
  if (track) {
    ImplPtr xi = x.shared();
    TensorImpl* oi = out.impl();
    record("gelu", {xi}, out, [xi, oi] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        const auto& src = xi->values<T>();
        auto& g = xi->grad_values<T>();
        const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
        const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T v = src[i];
          const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
          const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
          g[i] += go[i] * (cdf + v * pdf);
        }
      });
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw DimensionError("gather_rows: table must be 2-D, got " + shape_string(table.shape()));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
  }
  const bool track = tracking({&table});
  Tensor out = make_output({ids.size(), d}, table.dtype(), track);
  dispatch(table.dtype(), [&]<typename T>() {
    auto src = table.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                  o.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
  });
  if (track) {
    ImplPtr ti = table.shared();
    TensorImpl* oi = out.impl();
    std::vector<int> saved(ids.begin(), ids.end());
    record("gather_rows", {ti}, out, [ti, oi, saved = std::move(saved), d] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        auto& g = ti->grad_values<T>();
        for (std::size_t i = 0; i < saved.size(); ++i) {
          const std::size_t row = static_cast<std::size_t>(saved[i]);
          for (std::size_t j = 0; j < d; ++j) {
            g[row * d + j] += go[i * d + j];
          }
        }
      });
    });
  }
  return out;
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore) {
  if (logits.rank() != 2) {
    throw DimensionError("masked_cross_entropy: logits must be 2-D, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  if (n == 0 || targets.size() != n) {
    throw DimensionError("masked_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  std::size_t valid = 0;
  for (int t : targets) {
    if (t == ignore) {
      continue;
    }
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw IndexError("masked_cross_entropy: target " + std::to_string(t) + " outside " +
                       std::to_string(c) + " classes");
    }
    ++valid;
  }
  if (valid == 0) {
    throw ContractError("masked_cross_entropy: every position is ignored; no valid target");
  }
  const bool track = tracking({&logits});
  Tensor out = make_output({1}, logits.dtype(), track);
  auto probs = std::make_shared<Buffer>();
  dispatch(logits.dtype(), [&]<typename T>() {
    auto src = logits.data<T>();
    std::vector<T> p(src.begin(), src.end());
    kernels::softmax_rows<T>(p, n, c);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (targets[i] == ignore) {
        continue;
      }
      const T* row = src.data() + i * c;
      const T peak = *std::max_element(row, row + c);
      T z = 0;
      for (std::size_t j = 0; j < c; ++j) {
        z += std::exp(row[j] - peak);
      }
      total += std::log(z) + peak - row[targets[i]];
    }
    out.data<T>()[0] = total / static_cast<T>(valid);
    if (track) {
      *probs = std::move(p);
    }
  });
  if (track) {
    ImplPtr li = logits.shared();
    TensorImpl* oi = out.impl();
    std::vector<int> saved(targets.begin(), targets.end());
    record("masked_cross_entropy", {li}, out,
           [li, oi, probs, saved = std::move(saved), ignore, n, c, valid] {
             dispatch(oi->dtype, [&]<typename T>() {
               const T go = oi->grad_values<T>()[0] / static_cast<T>(valid);
               const auto& p = std::get<std::vector<T>>(*probs);
               auto& g = li->grad_values<T>();
               for (std::size_t i = 0; i < n; ++i) {
                 if (saved[i] == ignore) {
                   continue;
                 }
                 for (std::size_t j = 0; j < c; ++j) {
                   const T onehot = static_cast<std::size_t>(saved[i]) == j ? T{1} : T{0};
                   g[i * c + j] += go * (p[i * c + j] - onehot);
                 }
               }
             });
           });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) {
    return x;
  }
  if (p >= 1.0) {
    throw ContractError("dropout: probability must be < 1, got " + std::to_string(p));
  }
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<std::uint8_t> mask(x.numel());
  for (auto& m : mask) {
    m = keep(*rng) ? 1 : 0;
  }
  const double inv_keep = 1.0 / (1.0 - p);
  const bool track = tracking({&x});
  Tensor out = make_output(x.shape(), x.dtype(), track);
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto o = out.data<T>();
    const T s = static_cast<T>(inv_keep);
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = mask[i] ? src[i] * s : T{0};
    }
  });
  if (track) {
    ImplPtr xi = x.shared();
    TensorImpl* oi = out.impl();
    record("dropout", {xi}, out, [xi, oi, mask = std::move(mask), inv_keep] {
      dispatch(oi->dtype, [&]<typename T>() {
        const auto& go = oi->grad_values<T>();
        auto& g = xi->grad_values<T>();
        const T s = static_cast<T>(inv_keep);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (mask[i]) {
            g[i] += go[i] * s;
          }
        }
      });
    });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> allowed) {
  require_same_dtype("attention", q, k);
  require_same_dtype("attention", q, v);
  const std::size_t nb = shape.batch;
  const std::size_t nh = shape.heads;
  const std::size_t nq = shape.queries;
  const std::size_t nk = shape.keys;
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention: inputs must be 2-D");
  }
  const std::size_t d = q.dim(1);
  if (nh == 0 || d % nh != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(nh) + " heads");
  }
  if (q.dim(0) != nb * nq || k.dim(0) != nb * nk || v.dim(0) != nb * nk || k.dim(1) != d ||
      v.dim(1) != d) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()) +
                         " inconsistent with batch " + std::to_string(nb) + ", " +
                         std::to_string(nq) + " queries, " + std::to_string(nk) + " keys");
  }
  const bool shared_mask = allowed.size() == nq * nk;
  if (!allowed.empty() && !shared_mask && allowed.size() != nb * nq * nk) {
    throw DimensionError("attention: mask of " + std::to_string(allowed.size()) +
                         " entries fits neither " + std::to_string(nq) + "x" +
                         std::to_string(nk) + " nor the batched form");
  }
  auto visible = [&](std::size_t b, std::size_t i, std::size_t j) -> bool {
    if (allowed.empty()) {
      return true;
    }
    return allowed[(shared_mask ? 0 : b * nq * nk) + i * nk + j] != 0;
  };
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t i = 0; i < nq; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < nk && !any; ++j) {
        any = visible(b, i, j);
      }
      if (!any) {
        throw ContractError("attention: query row " + std::to_string(i) + " of batch element " +
                            std::to_string(b) + " is fully masked");
      }
    }
  }
  const std::size_t dh = d / nh;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool track = tracking({&q, &k, &v});
  Tensor out = make_output({nb * nq, d}, q.dtype(), track);
  auto weights = std::make_shared<Buffer>();
  dispatch(q.dtype(), [&]<typename T>() {
    auto qd = q.data<T>();
    auto kd = k.data<T>();
    auto vd = v.data<T>();
    auto od = out.data<T>();
    std::vector<T> probs(nb * nh * nq * nk);
    const T sc = static_cast<T>(scale_factor);
    const auto units = static_cast<std::int64_t>(nb * nh);
#pragma omp parallel for schedule(static) if (nb * nh * nq * nk * dh >= (1 << 15))
    for (std::int64_t u = 0; u < units; ++u) {
      const std::size_t b = static_cast<std::size_t>(u) / nh;
      const std::size_t h = static_cast<std::size_t>(u) % nh;
      T* p = probs.data() + static_cast<std::size_t>(u) * nq * nk;
      for (std::size_t i = 0; i < nq; ++i) {
        const T* qrow = qd.data() + (b * nq + i) * d + h * dh;
        T* prow = p + i * nk;
        for (std::size_t j = 0; j < nk; ++j) {
          if (!visible(b, i, j)) {
            prow[j] = -std::numeric_limits<T>::infinity();
            continue;
          }
          const T* krow = kd.data() + (b * nk + j) * d + h * dh;
          T dot = 0;
          for (std::size_t t = 0; t < dh; ++t) {
            dot += qrow[t] * krow[t];
          }
          prow[j] = dot * sc;
        }
      }
      kernels::softmax_rows<T>(std::span<T>(p, nq * nk), nq, nk);
      for (std::size_t i = 0; i < nq; ++i) {
        T* orow = od.data() + (b * nq + i) * d + h * dh;
        const T* prow = p + i * nk;
        for (std::size_t j = 0; j < nk; ++j) {
          const T w = prow[j];
          if (w == T{0}) {
            continue;
          }
          const T* vrow = vd.data() + (b * nk + j) * d + h * dh;
          for (std::size_t t = 0; t < dh; ++t) {
            orow[t] += w * vrow[t];
          }
        }
      }
    }
    if (track) {
      *weights = std::move(probs);
    }
  });
  if (track) {
    ImplPtr qi = q.shared();
    ImplPtr ki = k.shared();
    ImplPtr vi = v.shared();
    TensorImpl* oi = out.impl();
    record("attention", {qi, ki, vi}, out,
           [qi, ki, vi, oi, weights, nb, nh, nq, nk, d, dh, scale_factor] {
             dispatch(oi->dtype, [&]<typename T>() {
               const auto& go = oi->grad_values<T>();
               const auto& p = std::get<std::vector<T>>(*weights);
               const auto& qd = qi->values<T>();
               const auto& kd = ki->values<T>();
               const auto& vd = vi->values<T>();
               // Allocate before the parallel region; grad_values is not thread-safe.
               T* gq = qi->requires_grad ? qi->grad_values<T>().data() : nullptr;
               T* gk = ki->requires_grad ? ki->grad_values<T>().data() : nullptr;
               T* gv = vi->requires_grad ? vi->grad_values<T>().data() : nullptr;
               const T sc = static_cast<T>(scale_factor);
               const auto units = static_cast<std::int64_t>(nb * nh);
#pragma omp parallel for schedule(static) if (nb * nh * nq * nk * dh >= (1 << 15))
               for (std::int64_t u = 0; u < units; ++u) {
                 const std::size_t b = static_cast<std::size_t>(u) / nh;
                 const std::size_t h = static_cast<std::size_t>(u) % nh;
                 const T* pu = p.data() + static_cast<std::size_t>(u) * nq * nk;
                 std::vector<T> ds(nk);
                 for (std::size_t i = 0; i < nq; ++i) {
                   const T* prow = pu + i * nk;
                   const T* grow = go.data() + (b * nq + i) * d + h * dh;
                   T dot = 0;
                   for (std::size_t j = 0; j < nk; ++j) {
                     T dp = 0;
                     if (prow[j] != T{0}) {
                       const T* vrow = vd.data() + (b * nk + j) * d + h * dh;
                       for (std::size_t t = 0; t < dh; ++t) {
                         dp += grow[t] * vrow[t];
                       }
                     }
                     ds[j] = dp;
                     dot += dp * prow[j];
                   }
                   for (std::size_t j = 0; j < nk; ++j) {
                     ds[j] = prow[j] * (ds[j] - dot) * sc;
                   }
                   const T* qrow = qd.data() + (b * nq + i) * d + h * dh;
                   for (std::size_t j = 0; j < nk; ++j) {
                     if (prow[j] == T{0}) {
                       continue;
                     }
                     const std::size_t kv = (b * nk + j) * d + h * dh;
                     if (gq != nullptr) {
                       T* gqrow = gq + (b * nq + i) * d + h * dh;
                       for (std::size_t t = 0; t < dh; ++t) {
                         gqrow[t] += ds[j] * kd[kv + t];
                       }
                     }
                     if (gk != nullptr) {
                       for (std::size_t t = 0; t < dh; ++t) {
                         gk[kv + t] += ds[j] * qrow[t];
                       }
                     }
                     if (gv != nullptr) {
                       for (std::size_t t = 0; t < dh; ++t) {
                         gv[kv + t] += prow[j] * grow[t];
                       }
                     }
                   }
                 }
               }
             });
           });
  }
  return out;
}

}  // namespace permstr::num
