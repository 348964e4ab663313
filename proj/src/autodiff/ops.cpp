// SPDX-License-Identifier: Apache-2.0
#include "miml/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "miml/core/errors.hpp"

namespace miml::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

detail::Node& in(detail::Node& out, std::size_t i) { return *out.inputs[i]; }

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return ho * wo; }
};

// cols[(ci*kh + ki)*kw + kj, oy*wo + ox] = image[ci, oy*s + ki - pad, ox*s + kj - pad] (zero outside)
void im2col(const double* image, const ConvGeometry& g, double* cols) {
  const std::size_t p = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = image + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* image) {
  const std::size_t p = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = image + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (kernel.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    throw DimensionError("conv2d: bias shape " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(kernel.dim(0)) + " filters");
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                 kernel.dim(3), stride, padding, 0, 0};
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                         shape_string(input.shape()));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t patch = g.patch(), pos = g.positions();
  const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.f * pos;
  const bool keep_cols = kernel.requires_grad();
  std::vector<double> cols(keep_cols ? g.n * patch * pos : patch * pos);
  std::vector<double> out(g.n * out_stride);

  ConstMatMap k(kernel.values().data(), static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(patch));
  const auto bias_v = bias.values();
  for (std::size_t n = 0; n < g.n; ++n) {
    double* c = cols.data() + (keep_cols ? n * patch * pos : 0);
    im2col(input.values().data() + n * in_stride, g, c);
    ConstMatMap cm(c, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(pos));
    MatMap o(out.data() + n * out_stride, static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(pos));
    o.noalias() = k * cm;
    for (std::size_t f = 0; f < g.f; ++f) {
      double* row = out.data() + n * out_stride + f * pos;
      for (std::size_t q = 0; q < pos; ++q) row[q] += bias_v[f];
    }
  }

  return make_result(
      {g.n, g.f, g.ho, g.wo}, std::move(out), {input, kernel, bias}, "conv2d",
      [g, cols = std::move(cols), keep_cols](detail::Node& o) {
        const std::size_t patch = g.patch(), pos = g.positions();
        const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.f * pos;
        auto& x = in(o, 0);
        auto& kn = in(o, 1);
        auto& b = in(o, 2);
        if (b.requires_grad) {
          auto& gb = b.grad_buffer();
          for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t f = 0; f < g.f; ++f) {
              const double* row = o.grad.data() + n * out_stride + f * pos;
              double s = 0.0;
              for (std::size_t q = 0; q < pos; ++q) s += row[q];
              gb[f] += s;
            }
        }
        if (kn.requires_grad && keep_cols) {
          MatMap gk(kn.grad_buffer().data(), static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(patch));
          for (std::size_t n = 0; n < g.n; ++n) {
            ConstMatMap go(o.grad.data() + n * out_stride, static_cast<Eigen::Index>(g.f),
                           static_cast<Eigen::Index>(pos));
            ConstMatMap cm(cols.data() + n * patch * pos, static_cast<Eigen::Index>(patch),
                           static_cast<Eigen::Index>(pos));
            gk.noalias() += go * cm.transpose();
          }
        }
        if (x.requires_grad) {
          auto& gx = x.grad_buffer();
          ConstMatMap k(kn.value.data(), static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(patch));
          RowMatrix dcols(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(pos));
          for (std::size_t n = 0; n < g.n; ++n) {
            ConstMatMap go(o.grad.data() + n * out_stride, static_cast<Eigen::Index>(g.f),
                           static_cast<Eigen::Index>(pos));
            dcols.noalias() = k.transpose() * go;
            col2im_add(dcols.data(), g, gx.data() + n * in_stride);
          }
        }
      });
}

Tensor leaky_relu(const Tensor& input, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("leaky_relu: alpha must lie in (0,1)");
  std::vector<double> out(input.numel());
  const auto v = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : alpha * v[i];
  return make_result(input.shape(), std::move(out), {input}, "leaky_relu", [alpha](detail::Node& o) {
    auto& x = in(o, 0);
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * (x.value[i] > 0.0 ? 1.0 : alpha);
  });
}

double softplus(double v) {
  // log(1+e^v) = max(v,0) + log1p(e^{-|v|})
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}

namespace {
double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor softplus(const Tensor& input) {
  std::vector<double> out(input.numel());
  const auto v = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus(v[i]);
  return make_result(input.shape(), std::move(out), {input}, "softplus", [](detail::Node& o) {
    auto& x = in(o, 0);
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * sigmoid(x.value[i]);
  });
}

Tensor clamp(const Tensor& input, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo must not exceed hi");
  std::vector<double> out(input.numel());
  const auto v = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(v[i], lo, hi);
  return make_result(input.shape(), std::move(out), {input}, "clamp", [lo, hi](detail::Node& o) {
    auto& x = in(o, 0);
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (x.value[i] >= lo && x.value[i] <= hi) gx[i] += o.grad[i];
  });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormMode mode,
                  BatchNormState& state, double momentum, double epsilon) {
  require_rank(input, 4, "batch_norm", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("batch_norm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  if (state.running_mean.size() != c || state.running_var.size() != c) {
    throw DimensionError("batch_norm: running statistics sized for " + std::to_string(state.running_mean.size()) +
                         " channels, input has " + std::to_string(c));
  }
  const std::size_t m = n * hw;
  if (mode == BatchNormMode::Train && m < 2) {
    throw DegenerateStatisticsError("batch_norm: train mode needs at least 2 values per channel, got " +
                                    std::to_string(m));
  }

  const auto x = input.values();
  std::vector<double> mean(c), inv_std(c);
  if (mode == BatchNormMode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * hw;
        for (std::size_t q = 0; q < hw; ++q) s += p[q];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * hw;
        for (std::size_t q = 0; q < hw; ++q) ss += (p[q] - mu) * (p[q] - mu);
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + epsilon);
      const double unbiased = ss / static_cast<double>(m - 1);
      state.running_mean[ch] = (1.0 - momentum) * state.running_mean[ch] + momentum * mu;
      state.running_var[ch] = (1.0 - momentum) * state.running_var[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + epsilon);
    }
  }

  const auto gv = gamma.values(), bv = beta.values();
  std::vector<double> xhat(input.numel()), out(input.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t q = 0; q < hw; ++q) {
        const double h = (x[off + q] - mean[ch]) * inv_std[ch];
        xhat[off + q] = h;
        out[off + q] = gv[ch] * h + bv[ch];
      }
    }

  const bool train = mode == BatchNormMode::Train;
  return make_result(
      input.shape(), std::move(out), {input, gamma, beta}, "batch_norm",
      [n, c, hw, m, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::Node& o) {
        auto& xi = in(o, 0);
        auto& gm = in(o, 1);
        auto& bt = in(o, 2);
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
              sum_dy[ch] += o.grad[off + q];
              sum_dy_xhat[ch] += o.grad[off + q] * xhat[off + q];
            }
          }
        if (gm.requires_grad) {
          auto& g = gm.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy_xhat[ch];
        }
        if (bt.requires_grad) {
          auto& g = bt.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
        }
        if (xi.requires_grad) {
          auto& gx = xi.grad_buffer();
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t off = (b * c + ch) * hw;
              const double scale = gm.value[ch] * inv_std[ch];
              for (std::size_t q = 0; q < hw; ++q) {
                const double dy = o.grad[off + q];
                gx[off + q] += train ? scale * (dy - inv_m * sum_dy[ch] - inv_m * xhat[off + q] * sum_dy_xhat[ch])
                                     : scale * dy;
              }
            }
        }
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "left operand");
  require_rank(b, 2, "matmul", "right operand");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatMap(out.data(), m, n).noalias() = ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, "matmul", [m, k, n](detail::Node& o) {
    auto& an = in(o, 0);
    auto& bn = in(o, 1);
    ConstMatMap go(o.grad.data(), m, n);
    if (an.requires_grad) MatMap(an.grad_buffer().data(), m, k).noalias() += go * ConstMatMap(bn.value.data(), k, n).transpose();
    if (bn.requires_grad) MatMap(bn.grad_buffer().data(), k, n).noalias() += ConstMatMap(an.value.data(), m, k).transpose() * go;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto av = a.values(), bv = b.values();
  if (a.shape() == b.shape() || (a.numel() == 1 && b.numel() == 1)) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& o) {
      for (std::size_t j = 0; j < 2; ++j) {
        auto& x = in(o, j);
        if (!x.requires_grad) continue;
        auto& g = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
    const std::size_t cols = b.dim(0), rows = a.numel() / cols;
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = av[r * cols + j] + bv[j];
    return make_result(a.shape(), std::move(out), {a, b}, "add", [rows, cols](detail::Node& o) {
      auto& x = in(o, 0);
      auto& y = in(o, 1);
      if (x.requires_grad) {
        auto& g = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (y.requires_grad) {
        auto& g = y.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cols; ++j) g[j] += o.grad[r * cols + j];
      }
    });
  }
  throw DimensionError("add: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

Tensor multiply_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  const auto v = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * s;
  return make_result(a.shape(), std::move(out), {a}, "multiply_scalar", [s](detail::Node& o) {
    auto& g = in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
  });
}

Tensor subtract(const Tensor& a, const Tensor& b) { return add(a, multiply_scalar(b, -1.0)); }

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw DimensionError("concat: every part must be 2-D with " + std::to_string(rows) + " rows, got " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + col);
    col += widths[k];
  }
  return make_result({rows, total}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()), "concat",
                     [rows, total, widths](detail::Node& o) {
                       std::size_t col = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         auto& x = in(o, k);
                         if (x.requires_grad) {
                           auto& g = x.grad_buffer();
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               g[r * widths[k] + j] += o.grad[r * total + col + j];
                         }
                         col += widths[k];
                       }
                     });
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(input.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(input.values().begin(), input.values().end());
  return make_result(std::move(shape), std::move(out), {input}, "reshape", [](detail::Node& o) {
    auto& g = in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor flatten(const Tensor& input) {
  if (input.rank() < 1) throw DimensionError("flatten: needs a batch dimension");
  return reshape(input, {input.dim(0), input.numel() / input.dim(0)});
}

Tensor global_average_pool(const Tensor& input) {
  require_rank(input, 4, "global_average_pool", "input");
  const std::size_t nc = input.dim(0) * input.dim(1), hw = input.dim(2) * input.dim(3);
  const auto v = input.values();
  std::vector<double> out(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    double s = 0.0;
    for (std::size_t q = 0; q < hw; ++q) s += v[i * hw + q];
    out[i] = s / static_cast<double>(hw);
  }
  return make_result({input.dim(0), input.dim(1)}, std::move(out), {input}, "global_average_pool",
                     [nc, hw](detail::Node& o) {
                       auto& g = in(o, 0).grad_buffer();
                       const double inv = 1.0 / static_cast<double>(hw);
                       for (std::size_t i = 0; i < nc; ++i)
                         for (std::size_t q = 0; q < hw; ++q) g[i * hw + q] += o.grad[i] * inv;
                     });
}

Tensor mean(const Tensor& input) {
  const auto v = input.values();
  double s = 0.0;
  for (double x : v) s += x;
  const double inv = 1.0 / static_cast<double>(v.size());
  return make_result({}, {s * inv}, {input}, "mean", [inv](detail::Node& o) {
    auto& g = in(o, 0).grad_buffer();
    for (auto& x : g) x += o.grad[0] * inv;
  });
}

Tensor log_softmax(const Tensor& logits) {
  require_rank(logits, 2, "log_softmax", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto v = logits.values();
  std::vector<double> out(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = v.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = row[j] - lse;
  }
  return make_result(logits.shape(), out, {logits}, "log_softmax", [n, k, out](detail::Node& o) {
    auto& g = in(o, 0).grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += o.grad[r * k + j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += o.grad[r * k + j] - std::exp(out[r * k + j]) * s;
    }
  });
}

Tensor gather_logit(const Tensor& logits, std::span<const std::size_t> index) {
  require_rank(logits, 2, "gather_logit", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (index.size() != n) {
    throw DimensionError("gather_logit: " + std::to_string(index.size()) + " indices for " + std::to_string(n) +
                         " rows");
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (idx[r] >= k) {
      throw ContractError("gather_logit: index " + std::to_string(idx[r]) + " out of range [0," + std::to_string(k) +
                          ")");
    }
    out[r] = logits.values()[r * k + idx[r]];
  }
  return make_result({n}, std::move(out), {logits}, "gather_logit", [k, idx = std::move(idx)](detail::Node& o) {
    auto& g = in(o, 0).grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) g[r * k + idx[r]] += o.grad[r];
  });
}

Tensor gather_rows(const Tensor& input, std::span<const std::size_t> rows) {
  require_rank(input, 2, "gather_rows", "input");
  const std::size_t n = input.dim(0), m = input.dim(1);
  if (rows.empty()) throw ContractError("gather_rows: empty row list");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * m);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw ContractError("gather_rows: row " + std::to_string(idx[r]) + " out of range");
    std::copy_n(input.values().data() + idx[r] * m, m, out.data() + r * m);
  }
  const std::size_t count = idx.size();
  return make_result({count, m}, std::move(out), {input}, "gather_rows",
                     [m, idx = std::move(idx)](detail::Node& o) {
                       auto& g = in(o, 0).grad_buffer();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < m; ++j) g[idx[r] * m + j] += o.grad[r * m + j];
                     });
}

Tensor map_elementwise(const Tensor& input, std::function<double(double)> f, std::function<double(double)> df,
                       const char* op_name) {
  std::vector<double> out(input.numel());
  const auto v = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
  return make_result(input.shape(), std::move(out), {input}, op_name, [df = std::move(df)](detail::Node& o) {
    auto& x = in(o, 0);
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(x.value[i]);
  });
}

}  // namespace miml::ad
