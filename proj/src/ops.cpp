#include "jpfa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace jpfa::ops {

using detail::TensorImpl;
using detail::make_node;

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* role) {
  if (t.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + role + " must have rank " +
                                std::to_string(rank) + ", got shape " + shape_str(t.shape()));
  }
}

// Valid output range [lo, hi) for which in = out*stride + k - pad lands
// inside [0, extent).
void valid_range(int extent, int stride, int k, int pad, int out_extent, int& lo, int& hi) {
  int off = k - pad;
  // out*stride + off >= 0  ->  out >= ceil(-off / stride)
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  // out*stride + off <= extent-1  ->  out <= floor((extent-1-off) / stride)
  int top = extent - 1 - off;
  hi = top < 0 ? 0 : top / stride + 1;
  lo = std::min(lo, out_extent);
  hi = std::min(hi, out_extent);
  if (hi < lo) hi = lo;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  const int O = ks[0], I = ks[1], KH = ks[2], KW = ks[3];
  if (C != I) {
    throw std::invalid_argument("conv2d: input channels of " + shape_str(is) +
                                " do not match kernel input channels of " + shape_str(ks));
  }
  const int OH = (H + 2 * padding - KH) / stride + 1;
  const int OW = (W + 2 * padding - KW) / stride + 1;
  if (H + 2 * padding < KH || W + 2 * padding < KW || OH <= 0 || OW <= 0) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(ks) +
                                " does not fit input " + shape_str(is) + " with padding " +
                                std::to_string(padding));
  }

  auto in = input.impl();
  auto kr = kernel.impl();
  std::vector<double> out(static_cast<std::size_t>(N) * O * OH * OW, 0.0);
  const double* id = in->data.data();
  const double* kd = kr->data.data();
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      double* outp = out.data() + (static_cast<std::size_t>(n) * O + o) * OH * OW;
      for (int c = 0; c < C; ++c) {
        const double* inc = id + (static_cast<std::size_t>(n) * C + c) * H * W;
        const double* kc = kd + (static_cast<std::size_t>(o) * I + c) * KH * KW;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const double w = kc[kh * KW + kw];
            if (w == 0.0) continue;
            int oh_lo, oh_hi, ow_lo, ow_hi;
            valid_range(H, stride, kh, padding, OH, oh_lo, oh_hi);
            valid_range(W, stride, kw, padding, OW, ow_lo, ow_hi);
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const int ih = oh * stride + kh - padding;
              const double* inrow = inc + ih * W + (kw - padding);
              double* outrow = outp + oh * OW;
              for (int ow = ow_lo; ow < ow_hi; ++ow) {
                outrow[ow] += w * inrow[ow * stride];
              }
            }
          }
        }
      }
    }
  }

  Shape oshape{N, O, OH, OW};
  return make_node(oshape, std::move(out), {in, kr},
                   [in, kr, N, C, H, W, O, I, KH, KW, OH, OW, stride, padding](TensorImpl& self) {
                     const double* gout = self.grad.data();
                     const double* id2 = in->data.data();
                     const double* kd2 = kr->data.data();
                     double* gi = in->requires_grad ? in->ensure_grad().data() : nullptr;
                     double* gk = kr->requires_grad ? kr->ensure_grad().data() : nullptr;
                     for (int n = 0; n < N; ++n) {
                       for (int o = 0; o < O; ++o) {
                         const double* goutp = gout + (static_cast<std::size_t>(n) * O + o) * OH * OW;
                         for (int c = 0; c < C; ++c) {
                           const double* inc = id2 + (static_cast<std::size_t>(n) * C + c) * H * W;
                           double* gic = gi ? gi + (static_cast<std::size_t>(n) * C + c) * H * W : nullptr;
                           const std::size_t kbase = (static_cast<std::size_t>(o) * I + c) * KH * KW;
                           for (int kh = 0; kh < KH; ++kh) {
                             for (int kw = 0; kw < KW; ++kw) {
                               const double w = kd2[kbase + kh * KW + kw];
                               int oh_lo, oh_hi, ow_lo, ow_hi;
                               valid_range(H, stride, kh, padding, OH, oh_lo, oh_hi);
                               valid_range(W, stride, kw, padding, OW, ow_lo, ow_hi);
                               double wsum = 0.0;
                               for (int oh = oh_lo; oh < oh_hi; ++oh) {
                                 const int ih = oh * stride + kh - padding;
                                 const double* grow = goutp + oh * OW;
                                 const double* inrow = inc + ih * W + (kw - padding);
                                 if (gic) {
                                   double* girow = gic + ih * W + (kw - padding);
                                   for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                     girow[ow * stride] += w * grow[ow];
                                   }
                                 }
                                 if (gk) {
                                   for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                     wsum += inrow[ow * stride] * grow[ow];
                                   }
                                 }
                               }
                               if (gk) gk[kbase + kh * KW + kw] += wsum;
                             }
                           }
                         }
                       }
                     }
                   });
}

Tensor channel_bias(const Tensor& input, const Tensor& bias) {
  require_rank(input, 4, "channel_bias", "input");
  require_rank(bias, 1, "channel_bias", "bias");
  const auto& is = input.shape();
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  if (bias.shape()[0] != C) {
    throw std::invalid_argument("channel_bias: bias " + shape_str(bias.shape()) +
                                " does not match channels of input " + shape_str(is));
  }
  auto in = input.impl();
  auto bi = bias.impl();
  std::vector<double> out(in->data.size());
  const int plane = H * W;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double b = bi->data[c];
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (int p = 0; p < plane; ++p) out[base + p] = in->data[base + p] + b;
    }
  }
  return make_node(is, std::move(out), {in, bi}, [in, bi, N, C, plane](TensorImpl& self) {
    if (in->requires_grad) in->accumulate(self.grad);
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
          double s = 0.0;
          for (int p = 0; p < plane; ++p) s += self.grad[base + p];
          gb[c] += s;
        }
      }
    }
  });
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
  require_rank(input, 4, "maxpool2d", "input");
  if (window <= 0 || stride <= 0) {
    throw std::invalid_argument("maxpool2d: window and stride must be positive");
  }
  const auto& is = input.shape();
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  if (window > H || window > W) {
    throw std::invalid_argument("maxpool2d: window " + std::to_string(window) +
                                " exceeds spatial extent of input " + shape_str(is));
  }
  const int OH = (H - window) / stride + 1;
  const int OW = (W - window) / stride + 1;
  auto in = input.impl();
  std::vector<double> out(static_cast<std::size_t>(N) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t ibase = (static_cast<std::size_t>(n) * C + c) * H * W;
      const std::size_t obase = (static_cast<std::size_t>(n) * C + c) * OH * OW;
      for (int oh = 0; oh < OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow) {
          std::size_t best_idx = ibase + (oh * stride) * W + (ow * stride);
          double best = in->data[best_idx];
          for (int dh = 0; dh < window; ++dh) {
            for (int dw = 0; dw < window; ++dw) {
              const std::size_t idx = ibase + (oh * stride + dh) * W + (ow * stride + dw);
              if (in->data[idx] > best) {
                best = in->data[idx];
                best_idx = idx;
              }
            }
          }
          out[obase + oh * OW + ow] = best;
          (*argmax)[obase + oh * OW + ow] = best_idx;
        }
      }
    }
  }
  Shape oshape{N, C, OH, OW};
  return make_node(oshape, std::move(out), {in}, [in, argmax](TensorImpl& self) {
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*argmax)[i]] += self.grad[i];
  });
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  const int N = input.shape()[0], D = input.shape()[1];
  const int K = weight.shape()[1];
  if (weight.shape()[0] != D) {
    throw std::invalid_argument("dense: input " + shape_str(input.shape()) +
                                " and weight " + shape_str(weight.shape()) + " disagree");
  }
  if (bias.shape()[0] != K) {
    throw std::invalid_argument("dense: bias " + shape_str(bias.shape()) +
                                " does not match weight " + shape_str(weight.shape()));
  }
  auto in = input.impl();
  auto wt = weight.impl();
  auto bi = bias.impl();
  std::vector<double> out(static_cast<std::size_t>(N) * K);
  for (int n = 0; n < N; ++n) {
    double* orow = out.data() + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k) orow[k] = bi->data[k];
    const double* irow = in->data.data() + static_cast<std::size_t>(n) * D;
    for (int d = 0; d < D; ++d) {
      const double x = irow[d];
      if (x == 0.0) continue;
      const double* wrow = wt->data.data() + static_cast<std::size_t>(d) * K;
      for (int k = 0; k < K; ++k) orow[k] += x * wrow[k];
    }
  }
  return make_node({N, K}, std::move(out), {in, wt, bi}, [in, wt, bi, N, D, K](TensorImpl& self) {
    const double* gout = self.grad.data();
    if (in->requires_grad) {
      auto& gi = in->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const double* grow = gout + static_cast<std::size_t>(n) * K;
        double* girow = gi.data() + static_cast<std::size_t>(n) * D;
        for (int d = 0; d < D; ++d) {
          const double* wrow = wt->data.data() + static_cast<std::size_t>(d) * K;
          double s = 0.0;
          for (int k = 0; k < K; ++k) s += grow[k] * wrow[k];
          girow[d] += s;
        }
      }
    }
    if (wt->requires_grad) {
      auto& gw = wt->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const double* grow = gout + static_cast<std::size_t>(n) * K;
        const double* irow = in->data.data() + static_cast<std::size_t>(n) * D;
        for (int d = 0; d < D; ++d) {
          const double x = irow[d];
          if (x == 0.0) continue;
          double* gwrow = gw.data() + static_cast<std::size_t>(d) * K;
          for (int k = 0; k < K; ++k) gwrow[k] += x * grow[k];
        }
      }
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const double* grow = gout + static_cast<std::size_t>(n) * K;
        for (int k = 0; k < K; ++k) gb[k] += grow[k];
      }
    }
  });
}

Tensor reshape(const Tensor& input, Shape new_shape) {
  auto in = input.impl();
  if (!in) throw std::logic_error("reshape on undefined Tensor");
  if (numel(new_shape) != static_cast<std::int64_t>(in->data.size())) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(in->shape) + " as " +
                                shape_str(new_shape));
  }
  return make_node(std::move(new_shape), in->data, {in},
                   [in](TensorImpl& self) { in->accumulate(self.grad); });
}

Tensor upsample_nearest2x(const Tensor& input) {
  require_rank(input, 4, "upsample_nearest2x", "input");
  const auto& is = input.shape();
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  auto in = input.impl();
  std::vector<double> out(static_cast<std::size_t>(N) * C * 4 * H * W);
  const int OW = 2 * W;
  for (int nc = 0; nc < N * C; ++nc) {
    const double* ip = in->data.data() + static_cast<std::size_t>(nc) * H * W;
    double* op = out.data() + static_cast<std::size_t>(nc) * 4 * H * W;
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const double v = ip[h * W + w];
        op[(2 * h) * OW + 2 * w] = v;
        op[(2 * h) * OW + 2 * w + 1] = v;
        op[(2 * h + 1) * OW + 2 * w] = v;
        op[(2 * h + 1) * OW + 2 * w + 1] = v;
      }
    }
  }
  Shape oshape{N, C, 2 * H, 2 * W};
  return make_node(oshape, std::move(out), {in}, [in, N, C, H, W, OW](TensorImpl& self) {
    auto& g = in->ensure_grad();
    for (int nc = 0; nc < N * C; ++nc) {
      double* gp = g.data() + static_cast<std::size_t>(nc) * H * W;
      const double* sp = self.grad.data() + static_cast<std::size_t>(nc) * 4 * H * W;
      for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
          gp[h * W + w] += sp[(2 * h) * OW + 2 * w] + sp[(2 * h) * OW + 2 * w + 1] +
                           sp[(2 * h + 1) * OW + 2 * w] + sp[(2 * h + 1) * OW + 2 * w + 1];
        }
      }
    }
  });
}

Tensor instance_norm(const Tensor& input, double epsilon) {
  require_rank(input, 4, "instance_norm", "input");
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("instance_norm: epsilon must be positive");
  }
  const auto& is = input.shape();
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  const int M = H * W;
  if (M < 2) {
    throw std::invalid_argument("instance_norm: input " + shape_str(is) +
                                " needs more than one pixel per plane");
  }
  auto in = input.impl();
  std::vector<double> out(in->data.size());
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * C);
  for (int nc = 0; nc < N * C; ++nc) {
    const double* ip = in->data.data() + static_cast<std::size_t>(nc) * M;
    double* op = out.data() + static_cast<std::size_t>(nc) * M;
    double mu = 0.0;
    for (int j = 0; j < M; ++j) mu += ip[j];
    mu /= M;
    double var = 0.0;
    for (int j = 0; j < M; ++j) var += (ip[j] - mu) * (ip[j] - mu);
    var /= M;
    const double is_ = 1.0 / std::sqrt(var + epsilon);
    (*inv_sigma)[nc] = is_;
    for (int j = 0; j < M; ++j) op[j] = (ip[j] - mu) * is_;
  }
  return make_node(is, std::move(out), {in}, [in, inv_sigma, N, C, M](TensorImpl& self) {
    auto& g = in->ensure_grad();
    for (int nc = 0; nc < N * C; ++nc) {
      const double* y = self.data.data() + static_cast<std::size_t>(nc) * M;
      const double* up = self.grad.data() + static_cast<std::size_t>(nc) * M;
      double* gp = g.data() + static_cast<std::size_t>(nc) * M;
      double mg = 0.0, mgy = 0.0;
      for (int j = 0; j < M; ++j) {
        mg += up[j];
        mgy += up[j] * y[j];
      }
      mg /= M;
      mgy /= M;
      const double is_ = (*inv_sigma)[nc];
      for (int j = 0; j < M; ++j) gp[j] += is_ * (up[j] - mg - y[j] * mgy);
    }
  });
}

namespace {

Tensor reduce_impl(const Tensor& input, const std::vector<int>& axes, bool mean) {
  auto in = input.impl();
  if (!in) throw std::logic_error("reduce on undefined Tensor");
  const auto& shape = in->shape;
  const int rank = static_cast<int>(shape.size());
  std::vector<bool> reduced(rank, false);
  if (axes.empty()) {
    std::fill(reduced.begin(), reduced.end(), true);
  } else {
    for (int a : axes) {
      if (a < 0 || a >= rank) {
        throw std::invalid_argument("reduce: axis " + std::to_string(a) +
                                    " invalid for shape " + shape_str(shape));
      }
      if (reduced[a]) {
        throw std::invalid_argument("reduce: duplicate axis " + std::to_string(a));
      }
      reduced[a] = true;
    }
  }

  Shape oshape;
  std::int64_t count = 1;
  for (int d = 0; d < rank; ++d) {
    if (reduced[d]) count *= shape[d];
    else oshape.push_back(shape[d]);
  }
  if (oshape.empty()) oshape.push_back(1);

  // Row-major strides of the input; each input index maps to an output slot
  // by dropping the reduced axes.
  std::vector<std::int64_t> ostride(rank, 0);
  std::int64_t os = 1;
  for (int d = rank - 1; d >= 0; --d) {
    if (!reduced[d]) {
      ostride[d] = os;
      os *= shape[d];
    }
  }
  const std::int64_t onumel = numel(oshape);

  // Precompute the output slot of every input element once; the backward
  // pass reuses the same map.
  auto slot = std::make_shared<std::vector<std::int64_t>>(in->data.size());
  {
    std::vector<int> idx(rank, 0);
    for (std::size_t flat = 0; flat < in->data.size(); ++flat) {
      std::int64_t o = 0;
      for (int d = 0; d < rank; ++d) o += ostride[d] * idx[d];
      (*slot)[flat] = o;
      for (int d = rank - 1; d >= 0; --d) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  }

  std::vector<double> out(static_cast<std::size_t>(onumel), 0.0);
  for (std::size_t flat = 0; flat < in->data.size(); ++flat) {
    out[(*slot)[flat]] += in->data[flat];
  }
  const double scale = mean ? 1.0 / static_cast<double>(count) : 1.0;
  if (mean) {
    for (double& v : out) v *= scale;
  }
  return make_node(std::move(oshape), std::move(out), {in}, [in, slot, scale](TensorImpl& self) {
    auto& g = in->ensure_grad();
    for (std::size_t flat = 0; flat < g.size(); ++flat) {
      g[flat] += self.grad[(*slot)[flat]] * scale;
    }
  });
}

}  // namespace

Tensor reduce_sum(const Tensor& input, const std::vector<int>& axes) {
  return reduce_impl(input, axes, false);
}

Tensor reduce_mean(const Tensor& input, const std::vector<int>& axes) {
  return reduce_impl(input, axes, true);
}

Tensor row(const Tensor& matrix, int i) {
  require_rank(matrix, 2, "row", "matrix");
  const int N = matrix.shape()[0], K = matrix.shape()[1];
  if (i < 0 || i >= N) {
    throw std::invalid_argument("row: index " + std::to_string(i) + " out of range for " +
                                shape_str(matrix.shape()));
  }
  auto in = matrix.impl();
  std::vector<double> out(in->data.begin() + static_cast<std::size_t>(i) * K,
                          in->data.begin() + static_cast<std::size_t>(i + 1) * K);
  return make_node({K}, std::move(out), {in}, [in, i, K](TensorImpl& self) {
    auto& g = in->ensure_grad();
    for (int k = 0; k < K; ++k) g[static_cast<std::size_t>(i) * K + k] += self.grad[k];
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  const int K = static_cast<int>(rows[0].size());
  std::vector<std::shared_ptr<TensorImpl>> parents;
  parents.reserve(rows.size());
  std::vector<double> out;
  out.reserve(rows.size() * static_cast<std::size_t>(K));
  for (const auto& r : rows) {
    if (r.shape().size() != 1 || r.shape()[0] != K) {
      throw std::invalid_argument("stack_rows: row shape " + shape_str(r.shape()) +
                                  " does not match first row length " + std::to_string(K));
    }
    parents.push_back(r.impl());
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  const int N = static_cast<int>(rows.size());
  auto keep = std::make_shared<std::vector<std::shared_ptr<TensorImpl>>>(parents);
  return make_node({N, K}, std::move(out), std::move(parents), [keep, K](TensorImpl& self) {
    for (std::size_t r = 0; r < keep->size(); ++r) {
      auto& p = (*keep)[r];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (int k = 0; k < K; ++k) g[k] += self.grad[r * K + k];
    }
  });
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "pairwise_sqdist", "first argument");
  require_rank(b, 2, "pairwise_sqdist", "second argument");
  const int n = a.shape()[0], K = a.shape()[1];
  const int m = b.shape()[0];
  if (b.shape()[1] != K) {
    throw std::invalid_argument("pairwise_sqdist: feature lengths differ, " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto ai = a.impl();
  auto bi = b.impl();
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    const double* ar = ai->data.data() + static_cast<std::size_t>(i) * K;
    for (int j = 0; j < m; ++j) {
      const double* br = bi->data.data() + static_cast<std::size_t>(j) * K;
      double s = 0.0;
      for (int k = 0; k < K; ++k) {
        const double d = ar[k] - br[k];
        s += d * d;
      }
      out[static_cast<std::size_t>(i) * m + j] = s;
    }
  }
  return make_node({n, m}, std::move(out), {ai, bi}, [ai, bi, n, m, K](TensorImpl& self) {
    double* ga = ai->requires_grad ? ai->ensure_grad().data() : nullptr;
    double* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
    for (int i = 0; i < n; ++i) {
      const double* ar = ai->data.data() + static_cast<std::size_t>(i) * K;
      for (int j = 0; j < m; ++j) {
        const double g = 2.0 * self.grad[static_cast<std::size_t>(i) * m + j];
        if (g == 0.0) continue;
        const double* br = bi->data.data() + static_cast<std::size_t>(j) * K;
        for (int k = 0; k < K; ++k) {
          const double d = g * (ar[k] - br[k]);
          if (ga) ga[static_cast<std::size_t>(i) * K + k] += d;
          if (gb) gb[static_cast<std::size_t>(j) * K + k] -= d;
        }
      }
    }
  });
}

}  // namespace jpfa::ops
