// Copyright 2026 The fedshield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedshield/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "fedshield/errors.hpp"

namespace fedshield::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct PatchGeometry {
  std::int64_t channels, height, width;  // image the patches index into
  std::int64_t kernel, stride;
  Padding2d pad;
  std::int64_t grid_h, grid_w;  // patch grid

  std::int64_t rows() const { return channels * kernel * kernel; }
  std::int64_t cols() const { return grid_h * grid_w; }
};

// cols[(c, ki, kj), (i, j)] = img[c, i*stride + ki - pad.h, j*stride + kj - pad.w]
void gather_patches(const double* img, const PatchGeometry& g, double* cols) {
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * g.cols();
        for (std::int64_t i = 0; i < g.grid_h; ++i) {
          const std::int64_t y = i * g.stride + ki - g.pad.h;
          double* out = row + i * g.grid_w;
          if (y < 0 || y >= g.height) {
            std::fill(out, out + g.grid_w, 0.0);
            continue;
          }
          const double* src = img + (c * g.height + y) * g.width;
          for (std::int64_t j = 0; j < g.grid_w; ++j) {
            const std::int64_t x = j * g.stride + kj - g.pad.w;
            out[j] = (x < 0 || x >= g.width) ? 0.0 : src[x];
          }
        }
      }
    }
  }
}

// Adjoint of gather_patches: img += scatter(cols).
void scatter_patches(const double* cols, const PatchGeometry& g, double* img) {
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * g.cols();
        for (std::int64_t i = 0; i < g.grid_h; ++i) {
          const std::int64_t y = i * g.stride + ki - g.pad.h;
          if (y < 0 || y >= g.height) continue;
          const double* in = row + i * g.grid_w;
          double* dst = img + (c * g.height + y) * g.width;
          for (std::int64_t j = 0; j < g.grid_w; ++j) {
            const std::int64_t x = j * g.stride + kj - g.pad.w;
            if (x >= 0 && x < g.width) dst[x] += in[j];
          }
        }
      }
    }
  }
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected rank-4 tensor, got " +
                     shape_string(t.shape()));
  }
}

void add_channel_bias(Tensor& y, const Tensor* bias) {
  if (!bias) return;
  const auto B = y.dim(0), C = y.dim(1), HW = y.dim(2) * y.dim(3);
  if (bias->size() != static_cast<std::size_t>(C)) throw ShapeError("bias size mismatch");
  double* p = y.data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const double v = (*bias)[c];
      for (std::int64_t i = 0; i < HW; ++i) *p++ += v;
    }
  }
}

void accumulate_channel_sums(const Tensor& grad_out, Tensor* grad_bias) {
  if (!grad_bias) return;
  const auto B = grad_out.dim(0), C = grad_out.dim(1), HW = grad_out.dim(2) * grad_out.dim(3);
  const double* p = grad_out.data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t i = 0; i < HW; ++i) s += *p++;
      (*grad_bias)[c] += s;
    }
  }
}

}  // namespace

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

std::int64_t conv_transpose_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                        std::int64_t pad, std::int64_t out_pad) {
  return (in - 1) * stride + kernel - 2 * pad + out_pad;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, std::int64_t stride,
              Padding2d pad) {
  require_rank4(x, "conv2d input");
  require_rank4(weight, "conv2d weight");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != C) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  const PatchGeometry g{C, H, W, k, stride, pad, conv_output_size(H, k, stride, pad.h),
                        conv_output_size(W, k, stride, pad.w)};
  if (g.grid_h <= 0 || g.grid_w <= 0) throw ShapeError("conv2d: non-positive output size");
  Tensor y({B, O, g.grid_h, g.grid_w});
  std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap wm(weight.data(), O, g.rows());
  for (std::int64_t b = 0; b < B; ++b) {
    gather_patches(x.data() + b * C * H * W, g, cols.data());
    MatMap yb(y.data() + b * O * g.cols(), O, g.cols());
    yb.noalias() = wm * ConstMatMap(cols.data(), g.rows(), g.cols());
  }
  add_channel_bias(y, bias);
  return y;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             std::int64_t stride, Padding2d pad) {
  const auto B = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const auto O = weight.dim(0), k = weight.dim(2);
  const PatchGeometry g{C, H, W, k, stride, pad, grad_out.dim(2), grad_out.dim(3)};
  Tensor gx(input_shape);
  std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap wm(weight.data(), O, g.rows());
  for (std::int64_t b = 0; b < B; ++b) {
    MatMap c(cols.data(), g.rows(), g.cols());
    c.noalias() = wm.transpose() * ConstMatMap(grad_out.data() + b * O * g.cols(), O, g.cols());
    scatter_patches(cols.data(), g, gx.data() + b * C * H * W);
  }
  return gx;
}

void conv2d_backward_params(const Tensor& grad_out, const Tensor& x, std::int64_t stride,
                            Padding2d pad, Tensor& grad_weight, Tensor* grad_bias) {
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = grad_weight.dim(0), k = grad_weight.dim(2);
  const PatchGeometry g{C, H, W, k, stride, pad, grad_out.dim(2), grad_out.dim(3)};
  std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  MatMap gw(grad_weight.data(), O, g.rows());
  for (std::int64_t b = 0; b < B; ++b) {
    gather_patches(x.data() + b * C * H * W, g, cols.data());
    gw.noalias() += ConstMatMap(grad_out.data() + b * O * g.cols(), O, g.cols()) *
                    ConstMatMap(cols.data(), g.rows(), g.cols()).transpose();
  }
  accumulate_channel_sums(grad_out, grad_bias);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor* bias,
                        std::int64_t stride, Padding2d pad, Padding2d out_pad) {
  require_rank4(x, "conv_transpose2d input");
  require_rank4(weight, "conv_transpose2d weight");
  const auto B = x.dim(0), Cin = x.dim(1), Hin = x.dim(2), Win = x.dim(3);
  const auto Cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != Cin) throw ShapeError("conv_transpose2d: channel mismatch");
  const auto Hout = conv_transpose_output_size(Hin, k, stride, pad.h, out_pad.h);
  const auto Wout = conv_transpose_output_size(Win, k, stride, pad.w, out_pad.w);
  if (Hout <= 0 || Wout <= 0) throw ShapeError("conv_transpose2d: non-positive output size");
  const PatchGeometry g{Cout, Hout, Wout, k, stride, pad, Hin, Win};
  Tensor y({B, Cout, Hout, Wout});
  std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap wm(weight.data(), Cin, g.rows());
  for (std::int64_t b = 0; b < B; ++b) {
    MatMap c(cols.data(), g.rows(), g.cols());
    c.noalias() = wm.transpose() * ConstMatMap(x.data() + b * Cin * g.cols(), Cin, g.cols());
    scatter_patches(cols.data(), g, y.data() + b * Cout * Hout * Wout);
  }
  add_channel_bias(y, bias);
  return y;
}

Tensor conv_transpose2d_backward_input(const Tensor& grad_out, const Tensor& weight,
                                       const Shape& input_shape, std::int64_t stride,
                                       Padding2d pad) {
  const auto B = input_shape[0], Cin = input_shape[1], Hin = input_shape[2], Win = input_shape[3];
  const auto Cout = weight.dim(1), k = weight.dim(2);
  const auto Hout = grad_out.dim(2), Wout = grad_out.dim(3);
  const PatchGeometry g{Cout, Hout, Wout, k, stride, pad, Hin, Win};
  Tensor gx(input_shape);
  std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap wm(weight.data(), Cin, g.rows());
  for (std::int64_t b = 0; b < B; ++b) {
    gather_patches(grad_out.data() + b * Cout * Hout * Wout, g, cols.data());
    MatMap gxb(gx.data() + b * Cin * g.cols(), Cin, g.cols());
    gxb.noalias() = wm * ConstMatMap(cols.data(), g.rows(), g.cols());
  }
  return gx;
}

void conv_transpose2d_backward_params(const Tensor& grad_out, const Tensor& x, std::int64_t stride,
                                      Padding2d pad, Tensor& grad_weight, Tensor* grad_bias) {
  const auto B = x.dim(0), Cin = x.dim(1), Hin = x.dim(2), Win = x.dim(3);
  const auto Cout = grad_weight.dim(1), k = grad_weight.dim(2);
  const auto Hout = grad_out.dim(2), Wout = grad_out.dim(3);
  const PatchGeometry g{Cout, Hout, Wout, k, stride, pad, Hin, Win};
  std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  MatMap gw(grad_weight.data(), Cin, g.rows());
  for (std::int64_t b = 0; b < B; ++b) {
    gather_patches(grad_out.data() + b * Cout * Hout * Wout, g, cols.data());
    gw.noalias() += ConstMatMap(x.data() + b * Cin * g.cols(), Cin, g.cols()) *
                    ConstMatMap(cols.data(), g.rows(), g.cols()).transpose();
  }
  accumulate_channel_sums(grad_out, grad_bias);
}

MaxPoolResult maxpool2d(const Tensor& x, std::int64_t kernel) {
  require_rank4(x, "maxpool2d input");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Ho = H / kernel, Wo = W / kernel;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("maxpool2d: input smaller than kernel");
  MaxPoolResult r{Tensor({B, C, Ho, Wo}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const std::int64_t base = bc * H * W;
    for (std::int64_t i = 0; i < Ho; ++i) {
      for (std::int64_t j = 0; j < Wo; ++j, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = base + i * kernel * W + j * kernel;
        for (std::int64_t di = 0; di < kernel; ++di) {
          for (std::int64_t dj = 0; dj < kernel; ++dj) {
            const std::int64_t idx = base + (i * kernel + di) * W + j * kernel + dj;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        r.output[o] = best;
        r.argmax[o] = best_idx;
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<std::int64_t>& argmax,
                          const Shape& input_shape) {
  Tensor gx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += grad_out[o];
  return gx;
}

Tensor maxpool2d_select(const Tensor& input_like, const std::vector<std::int64_t>& argmax,
                        const Shape& output_shape) {
  Tensor y(output_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) y[o] = input_like[argmax[o]];
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_mask(const Tensor& grad, const Tensor& x) {
  require_same_shape(grad, x, "relu_mask");
  Tensor g = grad;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  const auto B = x.dim(0), in = x.dim(1), out = weight.dim(0);
  Tensor y({B, out});
  MatMap ym(y.data(), B, out);
  ym.noalias() = ConstMatMap(x.data(), B, in) * ConstMatMap(weight.data(), out, in).transpose();
  if (bias) {
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t o = 0; o < out; ++o) y[b * out + o] += (*bias)[o];
    }
  }
  return y;
}

Tensor linear_backward_input(const Tensor& grad_out, const Tensor& weight) {
  const auto B = grad_out.dim(0), out = weight.dim(0), in = weight.dim(1);
  Tensor gx({B, in});
  MatMap gm(gx.data(), B, in);
  gm.noalias() = ConstMatMap(grad_out.data(), B, out) * ConstMatMap(weight.data(), out, in);
  return gx;
}

void linear_backward_params(const Tensor& grad_out, const Tensor& x, Tensor& grad_weight,
                            Tensor* grad_bias) {
  const auto B = x.dim(0), in = x.dim(1), out = grad_weight.dim(0);
  MatMap gw(grad_weight.data(), out, in);
  gw.noalias() += ConstMatMap(grad_out.data(), B, out).transpose() * ConstMatMap(x.data(), B, in);
  if (grad_bias) {
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t o = 0; o < out; ++o) (*grad_bias)[o] += grad_out[b * out + o];
    }
  }
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                   BatchNormCache* cache) {
  require_rank4(x, "batchnorm2d input");
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(B * HW);
  Tensor y = Tensor::zeros_like(x);
  Tensor normalized = Tensor::zeros_like(x);
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = x.data() + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) mean += p[i];
    }
    mean /= count;
    double var = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = x.data() + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= count;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[c] = istd;
    for (std::int64_t b = 0; b < B; ++b) {
      const std::int64_t off = (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        const double n = (x[off + i] - mean) * istd;
        normalized[off + i] = n;
        y[off + i] = gamma[c] * n + beta[c];
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Tensor batchnorm2d_backward(const Tensor& grad_out, const Tensor& gamma,
                            const BatchNormCache& cache, Tensor& grad_gamma, Tensor& grad_beta) {
  const auto B = grad_out.dim(0), C = grad_out.dim(1), HW = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(B * HW);
  Tensor gx = Tensor::zeros_like(grad_out);
  for (std::int64_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gn = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const std::int64_t off = (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        sum_g += grad_out[off + i];
        sum_gn += grad_out[off + i] * cache.normalized[off + i];
      }
    }
    grad_gamma[c] += sum_gn;
    grad_beta[c] += sum_g;
    const double scale = gamma[c] * cache.inv_std[c] / count;
    for (std::int64_t b = 0; b < B; ++b) {
      const std::int64_t off = (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        gx[off + i] =
            scale * (count * grad_out[off + i] - sum_g - cache.normalized[off + i] * sum_gn);
      }
    }
  }
  return gx;
}

}  // namespace fedshield::nn
