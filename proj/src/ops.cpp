#include "vitbis/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vitbis {

namespace {

using i64 = std::int64_t;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

// C (+)= A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n,
             bool accumulate) {
  CMapM A(a, m, k);
  CMapM B(b, k, n);
  MapM C(c, m, n);
  if (accumulate) C.noalias() += A * B;
  else C.noalias() = A * B;
}

// C (+)= A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, i64 m, i64 k, i64 n,
             bool accumulate) {
  CMapM A(a, m, k);
  CMapM B(b, n, k);
  MapM C(c, m, n);
  if (accumulate) C.noalias() += A * B.transpose();
  else C.noalias() = A * B.transpose();
}

// C (+)= A[k,m]^T * B[k,n]
void gemm_tn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n,
             bool accumulate) {
  CMapM A(a, k, m);
  CMapM B(b, k, n);
  MapM C(c, m, n);
  if (accumulate) C.noalias() += A.transpose() * B;
  else C.noalias() = A.transpose() * B;
}

// Tape shared by the inputs, or nullptr when everything is constant.
Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tp = nullptr;
  for (const Tensor* t : ts) {
    if (!t->defined()) throw ShapeMismatch("undefined tensor passed to op");
    if (t->tape == nullptr) continue;
    if (tp == nullptr) tp = t->tape;
    else if (tp != t->tape) throw Error("op inputs live on different tapes");
  }
  return tp;
}

i64 node_on(const Tensor& t, Tape* tp) {
  return (tp != nullptr && t.tape == tp) ? t.node : -1;
}

// Broadcast contract for binary ops: after stripping leading extents of 1,
// b's dims must equal a's trailing dims. Returns b's element count (the
// tiling period over a's flat index space).
i64 broadcast_period(const Shape& a, const Shape& b) {
  std::size_t start = 0;
  while (start < b.dims.size() && b.dims[start] == 1) ++start;
  const std::size_t core = b.dims.size() - start;
  if (core > a.dims.size()) {
    throw ShapeMismatch("cannot broadcast " + b.str() + " onto " + a.str());
  }
  for (std::size_t i = 0; i < core; ++i) {
    if (b.dims[start + i] != a.dims[a.dims.size() - core + i]) {
      throw ShapeMismatch("cannot broadcast " + b.str() + " onto " + a.str());
    }
  }
  return b.numel();
}

i64 normalize_axis(i64 axis, i64 rank) {
  const i64 ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for rank " +
                        std::to_string(rank));
  }
  return ax;
}

// Factors a shape into [outer, n, inner] around an axis.
void axis_extents(const Shape& s, i64 ax, i64& outer, i64& n, i64& inner) {
  outer = 1;
  for (i64 i = 0; i < ax; ++i) outer *= s[i];
  n = s[ax];
  inner = 1;
  for (i64 i = ax + 1; i < s.rank(); ++i) inner *= s[i];
}

// col is [C*k*k, Ho*Wo]; out-of-image taps read zero.
void im2col(const double* img, i64 C, i64 H, i64 W, i64 k, i64 stride, i64 pad,
            i64 Ho, i64 Wo, double* col) {
  for (i64 c = 0; c < C; ++c) {
    for (i64 ky = 0; ky < k; ++ky) {
      for (i64 kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * (Ho * Wo);
        for (i64 oy = 0; oy < Ho; ++oy) {
          const i64 iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * Wo, row + (oy + 1) * Wo, 0.0);
            continue;
          }
          const double* src = img + (c * H + iy) * W;
          for (i64 ox = 0; ox < Wo; ++ox) {
            const i64 ix = ox * stride - pad + kx;
            row[oy * Wo + ox] = (ix < 0 || ix >= W) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds col back into img.
void col2im_add(const double* col, i64 C, i64 H, i64 W, i64 k, i64 stride,
                i64 pad, i64 Ho, i64 Wo, double* img) {
  for (i64 c = 0; c < C; ++c) {
    for (i64 ky = 0; ky < k; ++ky) {
      for (i64 kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * (Ho * Wo);
        for (i64 oy = 0; oy < Ho; ++oy) {
          const i64 iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          double* dst = img + (c * H + iy) * W;
          for (i64 ox = 0; ox < Wo; ++ox) {
            const i64 ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

struct LerpAxis {
  std::vector<i64> i0, i1;
  std::vector<double> t;
};

// Half-pixel sampling positions for upsampling n -> factor*n, edge clamped.
LerpAxis lerp_axis(i64 n, i64 factor) {
  LerpAxis ax;
  const i64 m = n * factor;
  ax.i0.resize(m);
  ax.i1.resize(m);
  ax.t.resize(m);
  for (i64 o = 0; o < m; ++o) {
    const double src = (o + 0.5) / factor - 0.5;
    const double f = std::floor(src);
    const i64 base = static_cast<i64>(f);
    ax.t[o] = src - f;
    ax.i0[o] = std::clamp<i64>(base, 0, n - 1);
    ax.i1[o] = std::clamp<i64>(base + 1, 0, n - 1);
  }
  return ax;
}

void check_rank4(const Tensor& x, const char* what) {
  if (x.shape.rank() != 4) {
    throw ShapeMismatch(std::string(what) + " expects rank 4, got " + x.shape.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const i64 period = broadcast_period(a.shape, b.shape);
  Tensor out = Tensor::zeros(a.shape);
  const i64 n = a.numel();
  const double* av = a.data->data();
  const double* bv = b.data->data();
  double* ov = out.data->data();
  for (i64 i = 0; i < n; ++i) ov[i] = av[i] + bv[i % period];
  Tape* tp = common_tape({&a, &b});
  if (tp) {
    const i64 an = node_on(a, tp), bn = node_on(b, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [an, bn, n, period](Tape& t, const std::vector<double>& up) {
      if (an >= 0) {
        auto& g = t.grad_buffer(an);
        for (i64 i = 0; i < n; ++i) g[i] += up[i];
      }
      if (bn >= 0) {
        auto& g = t.grad_buffer(bn);
        for (i64 i = 0; i < n; ++i) g[i % period] += up[i];
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, double b) {
  Tensor out = Tensor::zeros(a.shape);
  const i64 n = a.numel();
  for (i64 i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + b;
  Tape* tp = common_tape({&a});
  if (tp) {
    const i64 an = node_on(a, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [an, n](Tape& t, const std::vector<double>& up) {
      if (an >= 0) {
        auto& g = t.grad_buffer(an);
        for (i64 i = 0; i < n; ++i) g[i] += up[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const i64 period = broadcast_period(a.shape, b.shape);
  Tensor out = Tensor::zeros(a.shape);
  const i64 n = a.numel();
  const double* av = a.data->data();
  const double* bv = b.data->data();
  double* ov = out.data->data();
  for (i64 i = 0; i < n; ++i) ov[i] = av[i] - bv[i % period];
  Tape* tp = common_tape({&a, &b});
  if (tp) {
    const i64 an = node_on(a, tp), bn = node_on(b, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [an, bn, n, period](Tape& t, const std::vector<double>& up) {
      if (an >= 0) {
        auto& g = t.grad_buffer(an);
        for (i64 i = 0; i < n; ++i) g[i] += up[i];
      }
      if (bn >= 0) {
        auto& g = t.grad_buffer(bn);
        for (i64 i = 0; i < n; ++i) g[i % period] -= up[i];
      }
    });
  }
  return out;
}

Tensor sub(double a, const Tensor& b) {
  Tensor out = Tensor::zeros(b.shape);
  const i64 n = b.numel();
  for (i64 i = 0; i < n; ++i) (*out.data)[i] = a - (*b.data)[i];
  Tape* tp = common_tape({&b});
  if (tp) {
    const i64 bn = node_on(b, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [bn, n](Tape& t, const std::vector<double>& up) {
      if (bn >= 0) {
        auto& g = t.grad_buffer(bn);
        for (i64 i = 0; i < n; ++i) g[i] -= up[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const i64 period = broadcast_period(a.shape, b.shape);
  Tensor out = Tensor::zeros(a.shape);
  const i64 n = a.numel();
  const double* av = a.data->data();
  const double* bv = b.data->data();
  double* ov = out.data->data();
  for (i64 i = 0; i < n; ++i) ov[i] = av[i] * bv[i % period];
  Tape* tp = common_tape({&a, &b});
  if (tp) {
    const i64 an = node_on(a, tp), bn = node_on(b, tp);
    auto ad = a.data, bd = b.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [an, bn, n, period, ad, bd](Tape& t, const std::vector<double>& up) {
      if (an >= 0) {
        auto& g = t.grad_buffer(an);
        for (i64 i = 0; i < n; ++i) g[i] += up[i] * (*bd)[i % period];
      }
      if (bn >= 0) {
        auto& g = t.grad_buffer(bn);
        for (i64 i = 0; i < n; ++i) g[i % period] += up[i] * (*ad)[i];
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  const i64 period = broadcast_period(a.shape, b.shape);
  Tensor out = Tensor::zeros(a.shape);
  const i64 n = a.numel();
  const double* av = a.data->data();
  const double* bv = b.data->data();
  double* ov = out.data->data();
  for (i64 i = 0; i < n; ++i) ov[i] = av[i] / bv[i % period];
  Tape* tp = common_tape({&a, &b});
  if (tp) {
    const i64 an = node_on(a, tp), bn = node_on(b, tp);
    auto ad = a.data, bd = b.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [an, bn, n, period, ad, bd](Tape& t, const std::vector<double>& up) {
      if (an >= 0) {
        auto& g = t.grad_buffer(an);
        for (i64 i = 0; i < n; ++i) g[i] += up[i] / (*bd)[i % period];
      }
      if (bn >= 0) {
        auto& g = t.grad_buffer(bn);
        for (i64 i = 0; i < n; ++i) {
          const double bb = (*bd)[i % period];
          g[i % period] -= up[i] * (*ad)[i] / (bb * bb);
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape);
  const i64 n = a.numel();
  for (i64 i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * s;
  Tape* tp = common_tape({&a});
  if (tp) {
    const i64 an = node_on(a, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [an, n, s](Tape& t, const std::vector<double>& up) {
      if (an >= 0) {
        auto& g = t.grad_buffer(an);
        for (i64 i = 0; i < n; ++i) g[i] += up[i] * s;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const i64 ra = a.shape.rank(), rb = b.shape.rank();
  Tape* tp = common_tape({&a, &b});

  if (ra == 2 && rb == 2) {
    const i64 m = a.shape[0], k = a.shape[1], n = b.shape[1];
    if (b.shape[0] != k) {
      throw ShapeMismatch("matmul " + a.shape.str() + " x " + b.shape.str());
    }
    Tensor out = Tensor::zeros({m, n});
    gemm_nn(a.data->data(), b.data->data(), out.data->data(), m, k, n, false);
    if (tp) {
      const i64 an = node_on(a, tp), bn = node_on(b, tp);
      auto ad = a.data, bd = b.data;
      out.tape = tp;
      out.node = tp->record(out.shape, [an, bn, ad, bd, m, k, n](Tape& t, const std::vector<double>& up) {
        if (an >= 0) gemm_nt(up.data(), bd->data(), t.grad_buffer(an).data(), m, n, k, true);
        if (bn >= 0) gemm_tn(ad->data(), up.data(), t.grad_buffer(bn).data(), k, m, n, true);
      });
    }
    return out;
  }

  if (ra == 3 && rb == 2) {
    // [B,m,k] @ [k,n]: row-major lets the batch fold into the rows.
    const i64 B = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[1];
    if (b.shape[0] != k) {
      throw ShapeMismatch("matmul " + a.shape.str() + " x " + b.shape.str());
    }
    Tensor out = Tensor::zeros({B, m, n});
    gemm_nn(a.data->data(), b.data->data(), out.data->data(), B * m, k, n, false);
    if (tp) {
      const i64 an = node_on(a, tp), bn = node_on(b, tp);
      auto ad = a.data, bd = b.data;
      out.tape = tp;
      out.node = tp->record(out.shape, [an, bn, ad, bd, B, m, k, n](Tape& t, const std::vector<double>& up) {
        if (an >= 0) gemm_nt(up.data(), bd->data(), t.grad_buffer(an).data(), B * m, n, k, true);
        if (bn >= 0) gemm_tn(ad->data(), up.data(), t.grad_buffer(bn).data(), k, B * m, n, true);
      });
    }
    return out;
  }

  if (ra == 3 && rb == 3) {
    const i64 B = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2];
    if (b.shape[0] != B || b.shape[1] != k) {
      throw ShapeMismatch("matmul " + a.shape.str() + " x " + b.shape.str());
    }
    Tensor out = Tensor::zeros({B, m, n});
    for (i64 i = 0; i < B; ++i) {
      gemm_nn(a.data->data() + i * m * k, b.data->data() + i * k * n,
              out.data->data() + i * m * n, m, k, n, false);
    }
    if (tp) {
      const i64 an = node_on(a, tp), bn = node_on(b, tp);
      auto ad = a.data, bd = b.data;
      out.tape = tp;
      out.node = tp->record(out.shape, [an, bn, ad, bd, B, m, k, n](Tape& t, const std::vector<double>& up) {
        if (an >= 0) {
          auto& g = t.grad_buffer(an);
          for (i64 i = 0; i < B; ++i) {
            gemm_nt(up.data() + i * m * n, bd->data() + i * k * n,
                    g.data() + i * m * k, m, n, k, true);
          }
        }
        if (bn >= 0) {
          auto& g = t.grad_buffer(bn);
          for (i64 i = 0; i < B; ++i) {
            gemm_tn(ad->data() + i * m * k, up.data() + i * m * n,
                    g.data() + i * k * n, k, m, n, true);
          }
        }
      });
    }
    return out;
  }

  throw ShapeMismatch("matmul does not support ranks " + std::to_string(ra) +
                      " x " + std::to_string(rb));
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::int64_t stride, std::int64_t pad) {
  check_rank4(x, "conv2d input");
  check_rank4(w, "conv2d weight");
  if (w.shape[2] != w.shape[3]) throw ShapeMismatch("conv2d kernel must be square");
  if (w.shape[1] != x.shape[1]) {
    throw ShapeMismatch("conv2d weight " + w.shape.str() + " does not match input " + x.shape.str());
  }
  if (stride < 1 || pad < 0) throw ShapeMismatch("conv2d stride/pad out of range");
  const i64 B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const i64 Co = w.shape[0], k = w.shape[2];
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape != Shape{Co}) {
    throw ShapeMismatch("conv2d bias must be [" + std::to_string(Co) + "]");
  }
  const i64 hnum = H + 2 * pad - k, wnum = W + 2 * pad - k;
  if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0) {
    throw NonIntegralOutput("conv2d output extent is not integral for input " +
                            x.shape.str() + ", k=" + std::to_string(k) +
                            ", stride=" + std::to_string(stride) +
                            ", pad=" + std::to_string(pad));
  }
  const i64 Ho = hnum / stride + 1, Wo = wnum / stride + 1;
  const i64 ckk = Ci * k * k, hw = Ho * Wo;

  Tensor out = Tensor::zeros({B, Co, Ho, Wo});
  std::vector<double> col(static_cast<std::size_t>(ckk * hw));
  for (i64 b = 0; b < B; ++b) {
    im2col(x.data->data() + b * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo, col.data());
    double* ob = out.data->data() + b * Co * hw;
    gemm_nn(w.data->data(), col.data(), ob, Co, ckk, hw, false);
    if (has_bias) {
      for (i64 c = 0; c < Co; ++c) {
        const double bv = (*bias.data)[c];
        for (i64 i = 0; i < hw; ++i) ob[c * hw + i] += bv;
      }
    }
  }

  Tape* tp = has_bias ? common_tape({&x, &w, &bias}) : common_tape({&x, &w});
  if (tp) {
    const i64 xn = node_on(x, tp), wn = node_on(w, tp);
    const i64 bn = has_bias ? node_on(bias, tp) : -1;
    auto xd = x.data, wd = w.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [=](Tape& t, const std::vector<double>& up) {
      std::vector<double> buf(static_cast<std::size_t>(ckk * hw));
      if (wn >= 0) {
        auto& gw = t.grad_buffer(wn);
        for (i64 b = 0; b < B; ++b) {
          im2col(xd->data() + b * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo, buf.data());
          gemm_nt(up.data() + b * Co * hw, buf.data(), gw.data(), Co, hw, ckk, true);
        }
      }
      if (xn >= 0) {
        auto& gx = t.grad_buffer(xn);
        for (i64 b = 0; b < B; ++b) {
          gemm_tn(wd->data(), up.data() + b * Co * hw, buf.data(), ckk, Co, hw, false);
          col2im_add(buf.data(), Ci, H, W, k, stride, pad, Ho, Wo, gx.data() + b * Ci * H * W);
        }
      }
      if (bn >= 0) {
        auto& gb = t.grad_buffer(bn);
        for (i64 b = 0; b < B; ++b) {
          for (i64 c = 0; c < Co; ++c) {
            double s = 0.0;
            const double* u = up.data() + (b * Co + c) * hw;
            for (i64 i = 0; i < hw; ++i) s += u[i];
            gb[c] += s;
          }
        }
      }
    });
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, std::int64_t stride) {
  check_rank4(x, "conv_transpose2d input");
  check_rank4(w, "conv_transpose2d weight");
  if (w.shape[2] != w.shape[3]) throw ShapeMismatch("conv_transpose2d kernel must be square");
  if (w.shape[0] != x.shape[1]) {
    throw ShapeMismatch("conv_transpose2d weight " + w.shape.str() +
                        " does not match input " + x.shape.str());
  }
  if (stride < 2 || stride % 2 != 0) {
    throw ShapeMismatch("conv_transpose2d stride must be even and >= 2");
  }
  const i64 k = w.shape[2];
  if (k != 2 * stride) {
    throw ShapeMismatch("conv_transpose2d kernel must be 2*stride, got k=" +
                        std::to_string(k) + " stride=" + std::to_string(stride));
  }
  const i64 pad = stride / 2;
  const i64 B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const i64 Co = w.shape[1];
  const i64 H2 = stride * H, W2 = stride * W;
  const i64 ckk = Co * k * k, hw = H * W;

  // Weight viewed as [Ci, Co*k*k]; forward is the exact adjoint of conv2d
  // with the same geometry: col = w^T x, then scatter into the large image.
  Tensor out = Tensor::zeros({B, Co, H2, W2});
  std::vector<double> col(static_cast<std::size_t>(ckk * hw));
  for (i64 b = 0; b < B; ++b) {
    gemm_tn(w.data->data(), x.data->data() + b * Ci * hw, col.data(), ckk, Ci, hw, false);
    col2im_add(col.data(), Co, H2, W2, k, stride, pad, H, W,
               out.data->data() + b * Co * H2 * W2);
  }

  Tape* tp = common_tape({&x, &w});
  if (tp) {
    const i64 xn = node_on(x, tp), wn = node_on(w, tp);
    auto xd = x.data, wd = w.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [=](Tape& t, const std::vector<double>& up) {
      std::vector<double> buf(static_cast<std::size_t>(ckk * hw));
      for (i64 b = 0; b < B; ++b) {
        im2col(up.data() + b * Co * H2 * W2, Co, H2, W2, k, stride, pad, H, W, buf.data());
        if (xn >= 0) {
          gemm_nn(wd->data(), buf.data(), t.grad_buffer(xn).data() + b * Ci * hw,
                  Ci, ckk, hw, true);
        }
        if (wn >= 0) {
          gemm_nt(xd->data() + b * Ci * hw, buf.data(), t.grad_buffer(wn).data(),
                  Ci, hw, ckk, true);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

Tensor bilinear_upsample(const Tensor& x, std::int64_t factor) {
  check_rank4(x, "bilinear_upsample input");
  if (factor < 2) throw ShapeMismatch("bilinear_upsample factor must be >= 2");
  const i64 B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const i64 H2 = H * factor, W2 = W * factor;
  const LerpAxis ay = lerp_axis(H, factor);
  const LerpAxis axx = lerp_axis(W, factor);

  Tensor out = Tensor::zeros({B, C, H2, W2});
  const double* xv = x.data->data();
  double* ov = out.data->data();
  for (i64 bc = 0; bc < B * C; ++bc) {
    const double* plane = xv + bc * H * W;
    double* oplane = ov + bc * H2 * W2;
    for (i64 oy = 0; oy < H2; ++oy) {
      const i64 y0 = ay.i0[oy], y1 = ay.i1[oy];
      const double ty = ay.t[oy];
      for (i64 ox = 0; ox < W2; ++ox) {
        const i64 x0 = axx.i0[ox], x1 = axx.i1[ox];
        const double tx = axx.t[ox];
        oplane[oy * W2 + ox] =
            (1 - ty) * ((1 - tx) * plane[y0 * W + x0] + tx * plane[y0 * W + x1]) +
            ty * ((1 - tx) * plane[y1 * W + x0] + tx * plane[y1 * W + x1]);
      }
    }
  }

  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [=](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 bc = 0; bc < B * C; ++bc) {
        double* gplane = g.data() + bc * H * W;
        const double* uplane = up.data() + bc * H2 * W2;
        for (i64 oy = 0; oy < H2; ++oy) {
          const i64 y0 = ay.i0[oy], y1 = ay.i1[oy];
          const double ty = ay.t[oy];
          for (i64 ox = 0; ox < W2; ++ox) {
            const i64 x0 = axx.i0[ox], x1 = axx.i1[ox];
            const double tx = axx.t[ox];
            const double u = uplane[oy * W2 + ox];
            gplane[y0 * W + x0] += (1 - ty) * (1 - tx) * u;
            gplane[y0 * W + x1] += (1 - ty) * tx * u;
            gplane[y1 * W + x0] += ty * (1 - tx) * u;
            gplane[y1 * W + x1] += ty * tx * u;
          }
        }
      }
    });
  }
  return out;
}

Tensor avg_pool2d(const Tensor& x, std::int64_t factor) {
  check_rank4(x, "avg_pool2d input");
  if (factor < 1) throw ShapeMismatch("avg_pool2d factor must be >= 1");
  const i64 B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (H % factor != 0 || W % factor != 0) {
    throw ShapeMismatch("avg_pool2d factor " + std::to_string(factor) +
                        " does not divide " + x.shape.str());
  }
  const i64 Ho = H / factor, Wo = W / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);

  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  const double* xv = x.data->data();
  double* ov = out.data->data();
  for (i64 bc = 0; bc < B * C; ++bc) {
    const double* plane = xv + bc * H * W;
    double* oplane = ov + bc * Ho * Wo;
    for (i64 oy = 0; oy < Ho; ++oy) {
      for (i64 ox = 0; ox < Wo; ++ox) {
        double s = 0.0;
        for (i64 dy = 0; dy < factor; ++dy) {
          for (i64 dx = 0; dx < factor; ++dx) {
            s += plane[(oy * factor + dy) * W + ox * factor + dx];
          }
        }
        oplane[oy * Wo + ox] = s * inv;
      }
    }
  }

  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [=](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 bc = 0; bc < B * C; ++bc) {
        double* gplane = g.data() + bc * H * W;
        const double* uplane = up.data() + bc * Ho * Wo;
        for (i64 oy = 0; oy < Ho; ++oy) {
          for (i64 ox = 0; ox < Wo; ++ox) {
            const double u = uplane[oy * Wo + ox] * inv;
            for (i64 dy = 0; dy < factor; ++dy) {
              for (i64 dx = 0; dx < factor; ++dx) {
                gplane[(oy * factor + dy) * W + ox * factor + dx] += u;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and activations
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::int64_t axis) {
  const i64 ax = normalize_axis(axis, x.shape.rank());
  i64 outer, n, inner;
  axis_extents(x.shape, ax, outer, n, inner);

  Tensor out = Tensor::zeros(x.shape);
  const double* xv = x.data->data();
  double* ov = out.data->data();
  for (i64 o = 0; o < outer; ++o) {
    for (i64 in = 0; in < inner; ++in) {
      const i64 base = o * n * inner + in;
      double mx = xv[base];
      for (i64 j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (i64 j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        ov[base + j * inner] = e;
        z += e;
      }
      const double invz = 1.0 / z;
      for (i64 j = 0; j < n; ++j) ov[base + j * inner] *= invz;
    }
  }

  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    auto od = out.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, od, outer, n, inner](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      const double* p = od->data();
      for (i64 o = 0; o < outer; ++o) {
        for (i64 in = 0; in < inner; ++in) {
          const i64 base = o * n * inner + in;
          double dot = 0.0;
          for (i64 j = 0; j < n; ++j) dot += up[base + j * inner] * p[base + j * inner];
          for (i64 j = 0; j < n; ++j) {
            g[base + j * inner] += p[base + j * inner] * (up[base + j * inner] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const i64 r = x.shape.rank();
  if (r < 1) throw ShapeMismatch("layernorm needs rank >= 1");
  const i64 D = x.shape[r - 1];
  if (gamma.shape != Shape{D} || beta.shape != Shape{D}) {
    throw ShapeMismatch("layernorm gamma/beta must be [" + std::to_string(D) + "]");
  }
  const i64 rows = x.numel() / D;

  Tensor out = Tensor::zeros(x.shape);
  const double* xv = x.data->data();
  const double* gv = gamma.data->data();
  const double* bv = beta.data->data();
  double* ov = out.data->data();
  for (i64 rI = 0; rI < rows; ++rI) {
    const double* xr = xv + rI * D;
    double* orow = ov + rI * D;
    double mean = 0.0;
    for (i64 d = 0; d < D; ++d) mean += xr[d];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (i64 d = 0; d < D; ++d) {
      const double c = xr[d] - mean;
      var += c * c;
    }
    var /= static_cast<double>(D);
    const double istd = 1.0 / std::sqrt(var + eps);
    for (i64 d = 0; d < D; ++d) {
      orow[d] = (xr[d] - mean) * istd * gv[d] + bv[d];
    }
  }

  Tape* tp = common_tape({&x, &gamma, &beta});
  if (tp) {
    const i64 xn = node_on(x, tp), gn = node_on(gamma, tp), bn = node_on(beta, tp);
    auto xd = x.data, gd = gamma.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [=](Tape& t, const std::vector<double>& up) {
      const double* xp = xd->data();
      const double* gp = gd->data();
      std::vector<double> xhat(static_cast<std::size_t>(D));
      for (i64 rI = 0; rI < rows; ++rI) {
        const double* xr = xp + rI * D;
        const double* ur = up.data() + rI * D;
        double mean = 0.0;
        for (i64 d = 0; d < D; ++d) mean += xr[d];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (i64 d = 0; d < D; ++d) {
          const double c = xr[d] - mean;
          var += c * c;
        }
        var /= static_cast<double>(D);
        const double istd = 1.0 / std::sqrt(var + eps);
        for (i64 d = 0; d < D; ++d) xhat[d] = (xr[d] - mean) * istd;

        if (gn >= 0) {
          auto& gg = t.grad_buffer(gn);
          for (i64 d = 0; d < D; ++d) gg[d] += ur[d] * xhat[d];
        }
        if (bn >= 0) {
          auto& gb = t.grad_buffer(bn);
          for (i64 d = 0; d < D; ++d) gb[d] += ur[d];
        }
        if (xn >= 0) {
          auto& gx = t.grad_buffer(xn);
          double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
          for (i64 d = 0; d < D; ++d) {
            const double dxh = ur[d] * gp[d];
            m1 += dxh;
            m2 += dxh * xhat[d];
          }
          m1 /= static_cast<double>(D);
          m2 /= static_cast<double>(D);
          for (i64 d = 0; d < D; ++d) {
            const double dxh = ur[d] * gp[d];
            gx[rI * D + d] += istd * (dxh - m1 - xhat[d] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape);
  const i64 n = x.numel();
  const double* xv = x.data->data();
  double* ov = out.data->data();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (i64 i = 0; i < n; ++i) {
    ov[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    auto xd = x.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, xd, n](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      constexpr double kInvSqrt2 = 0.70710678118654752440;
      constexpr double kInvSqrt2Pi = 0.39894228040143267794;
      for (i64 i = 0; i < n; ++i) {
        const double v = (*xd)[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        g[i] += up[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape);
  const i64 n = x.numel();
  for (i64 i = 0; i < n; ++i) (*out.data)[i] = std::max(0.0, (*x.data)[i]);
  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    auto xd = x.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, xd, n](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 i = 0; i < n; ++i) {
        if ((*xd)[i] > 0.0) g[i] += up[i];
      }
    });
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape);
  const i64 n = x.numel();
  for (i64 i = 0; i < n; ++i) {
    const double v = (*x.data)[i];
    if (v <= 0.0) throw DomainError("log requires strictly positive input");
    (*out.data)[i] = std::log(v);
  }
  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    auto xd = x.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, xd, n](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 i = 0; i < n; ++i) g[i] += up[i] / (*xd)[i];
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw DomainError("clamp lower bound exceeds upper bound");
  Tensor out = Tensor::zeros(x.shape);
  const i64 n = x.numel();
  for (i64 i = 0; i < n; ++i) (*out.data)[i] = std::clamp((*x.data)[i], lo, hi);
  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    auto xd = x.data;
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, xd, n, lo, hi](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 i = 0; i < n; ++i) {
        const double v = (*xd)[i];
        if (v >= lo && v <= hi) g[i] += up[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  const i64 r = parts[0].shape.rank();
  const i64 ax = normalize_axis(axis, r);
  i64 total = 0;
  for (const Tensor& p : parts) {
    if (p.shape.rank() != r) throw ShapeMismatch("concat rank mismatch");
    for (i64 i = 0; i < r; ++i) {
      if (i != ax && p.shape[i] != parts[0].shape[i]) {
        throw ShapeMismatch("concat extent mismatch at axis " + std::to_string(i));
      }
    }
    total += p.shape[ax];
  }
  std::vector<i64> dims = parts[0].shape.dims;
  dims[static_cast<std::size_t>(ax)] = total;
  Tensor out = Tensor::zeros(Shape{dims});

  i64 outer, n_unused, inner;
  axis_extents(out.shape, ax, outer, n_unused, inner);
  std::vector<i64> offsets;
  i64 off = 0;
  for (const Tensor& p : parts) {
    const i64 e = p.shape[ax];
    for (i64 o = 0; o < outer; ++o) {
      std::memcpy(out.data->data() + (o * total + off) * inner,
                  p.data->data() + o * e * inner,
                  static_cast<std::size_t>(e * inner) * sizeof(double));
    }
    offsets.push_back(off);
    off += e;
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tape* tp = nullptr;
  for (const Tensor* p : ptrs) {
    Tape* cand = common_tape({p});
    if (cand) {
      if (tp && tp != cand) throw Error("op inputs live on different tapes");
      tp = cand;
    }
  }
  if (tp) {
    std::vector<i64> in_nodes, extents;
    for (const Tensor& p : parts) {
      in_nodes.push_back(node_on(p, tp));
      extents.push_back(p.shape[ax]);
    }
    out.tape = tp;
    out.node = tp->record(out.shape, [in_nodes, extents, offsets, outer, inner, total](
                                         Tape& t, const std::vector<double>& up) {
      for (std::size_t pi = 0; pi < in_nodes.size(); ++pi) {
        if (in_nodes[pi] < 0) continue;
        auto& g = t.grad_buffer(in_nodes[pi]);
        const i64 e = extents[pi];
        for (i64 o = 0; o < outer; ++o) {
          const double* src = up.data() + (o * total + offsets[pi]) * inner;
          double* dst = g.data() + o * e * inner;
          for (i64 i = 0; i < e * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

std::vector<Tensor> split(const Tensor& x, const std::vector<std::int64_t>& sizes,
                          std::int64_t axis) {
  const i64 ax = normalize_axis(axis, x.shape.rank());
  i64 total = 0;
  for (i64 s : sizes) {
    if (s < 1) throw ShapeMismatch("split sizes must be positive");
    total += s;
  }
  if (total != x.shape[ax]) {
    throw ShapeMismatch("split sizes sum to " + std::to_string(total) +
                        ", axis extent is " + std::to_string(x.shape[ax]));
  }
  i64 outer, n_unused, inner;
  axis_extents(x.shape, ax, outer, n_unused, inner);
  Tape* tp = common_tape({&x});
  const i64 xn = node_on(x, tp);

  std::vector<Tensor> parts;
  i64 off = 0;
  for (i64 s : sizes) {
    std::vector<i64> dims = x.shape.dims;
    dims[static_cast<std::size_t>(ax)] = s;
    Tensor p = Tensor::zeros(Shape{dims});
    for (i64 o = 0; o < outer; ++o) {
      std::memcpy(p.data->data() + o * s * inner,
                  x.data->data() + (o * total + off) * inner,
                  static_cast<std::size_t>(s * inner) * sizeof(double));
    }
    if (tp) {
      const i64 this_off = off;
      p.tape = tp;
      p.node = tp->record(p.shape, [xn, s, this_off, outer, inner, total](
                                       Tape& t, const std::vector<double>& up) {
        if (xn < 0) return;
        auto& g = t.grad_buffer(xn);
        for (i64 o = 0; o < outer; ++o) {
          double* dst = g.data() + (o * total + this_off) * inner;
          const double* src = up.data() + o * s * inner;
          for (i64 i = 0; i < s * inner; ++i) dst[i] += src[i];
        }
      });
    }
    parts.push_back(std::move(p));
    off += s;
  }
  return parts;
}

Tensor reshape(const Tensor& x, const Shape& s) {
  if (s.numel() != x.numel()) {
    throw ShapeMismatch("reshape " + x.shape.str() + " -> " + s.str() +
                        " changes element count");
  }
  Tensor out;
  out.shape = s;
  out.data = x.data;  // same buffer; row-major layout is unchanged
  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    const i64 n = x.numel();
    out.tape = tp;
    out.node = tp->record(s, [xn, n](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 i = 0; i < n; ++i) g[i] += up[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& perm) {
  const i64 r = x.shape.rank();
  if (static_cast<i64>(perm.size()) != r) throw ShapeMismatch("permute rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (i64 p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
      throw ShapeMismatch("permute is not a permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  std::vector<i64> dims(static_cast<std::size_t>(r));
  for (i64 i = 0; i < r; ++i) dims[static_cast<std::size_t>(i)] = x.shape[perm[static_cast<std::size_t>(i)]];
  Tensor out = Tensor::zeros(Shape{dims});

  const auto in_strides = row_major_strides(x.shape);
  // Stride in the input for a unit step along each output axis.
  std::vector<i64> step(static_cast<std::size_t>(r));
  for (i64 i = 0; i < r; ++i) step[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];

  const i64 n = x.numel();
  std::vector<i64> idx(static_cast<std::size_t>(r), 0);
  const double* xv = x.data->data();
  double* ov = out.data->data();
  i64 src = 0;
  for (i64 flat = 0; flat < n; ++flat) {
    ov[flat] = xv[src];
    for (i64 a = r - 1; a >= 0; --a) {
      auto& ia = idx[static_cast<std::size_t>(a)];
      src += step[static_cast<std::size_t>(a)];
      if (++ia < dims[static_cast<std::size_t>(a)]) break;
      src -= step[static_cast<std::size_t>(a)] * dims[static_cast<std::size_t>(a)];
      ia = 0;
    }
  }

  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, step, dims, n, r](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      std::vector<i64> idx(static_cast<std::size_t>(r), 0);
      i64 src = 0;
      for (i64 flat = 0; flat < n; ++flat) {
        g[src] += up[flat];
        for (i64 a = r - 1; a >= 0; --a) {
          auto& ia = idx[static_cast<std::size_t>(a)];
          src += step[static_cast<std::size_t>(a)];
          if (++ia < dims[static_cast<std::size_t>(a)]) break;
          src -= step[static_cast<std::size_t>(a)] * dims[static_cast<std::size_t>(a)];
          ia = 0;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

Tensor reduce_all(const Tensor& x, double factor) {
  Tensor out = Tensor::zeros({1});
  const i64 n = x.numel();
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) s += (*x.data)[i];
  (*out.data)[0] = s * factor;
  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, n, factor](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      const double u = up[0] * factor;
      for (i64 i = 0; i < n; ++i) g[i] += u;
    });
  }
  return out;
}

Tensor reduce_axis(const Tensor& x, i64 axis, double factor) {
  const i64 ax = normalize_axis(axis, x.shape.rank());
  i64 outer, n, inner;
  axis_extents(x.shape, ax, outer, n, inner);
  std::vector<i64> dims;
  for (i64 i = 0; i < x.shape.rank(); ++i) {
    if (i != ax) dims.push_back(x.shape[i]);
  }
  if (dims.empty()) dims.push_back(1);
  Tensor out = Tensor::zeros(Shape{dims});

  const double* xv = x.data->data();
  double* ov = out.data->data();
  for (i64 o = 0; o < outer; ++o) {
    for (i64 in = 0; in < inner; ++in) {
      double s = 0.0;
      for (i64 j = 0; j < n; ++j) s += xv[(o * n + j) * inner + in];
      ov[o * inner + in] = s * factor;
    }
  }

  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [xn, outer, n, inner, factor](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 o = 0; o < outer; ++o) {
        for (i64 in = 0; in < inner; ++in) {
          const double u = up[o * inner + in] * factor;
          for (i64 j = 0; j < n; ++j) g[(o * n + j) * inner + in] += u;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& x) { return reduce_all(x, 1.0); }

Tensor reduce_sum(const Tensor& x, std::int64_t axis) { return reduce_axis(x, axis, 1.0); }

Tensor reduce_mean(const Tensor& x) {
  return reduce_all(x, 1.0 / static_cast<double>(x.numel()));
}

Tensor reduce_mean(const Tensor& x, std::int64_t axis) {
  const i64 ax = normalize_axis(axis, x.shape.rank());
  return reduce_axis(x, axis, 1.0 / static_cast<double>(x.shape[ax]));
}

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------

Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& rows) {
  if (table.shape.rank() != 2) throw ShapeMismatch("gather_rows table must be rank 2");
  const i64 R = table.shape[0], C = table.shape[1];
  const i64 N = static_cast<i64>(rows.size());
  if (N == 0) throw ShapeMismatch("gather_rows needs at least one row");
  for (i64 rI : rows) {
    if (rI < 0 || rI >= R) throw ShapeMismatch("gather_rows index out of range");
  }
  Tensor out = Tensor::zeros({N, C});
  for (i64 i = 0; i < N; ++i) {
    std::memcpy(out.data->data() + i * C, table.data->data() + rows[static_cast<std::size_t>(i)] * C,
                static_cast<std::size_t>(C) * sizeof(double));
  }
  Tape* tp = common_tape({&table});
  if (tp) {
    const i64 tn = node_on(table, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [tn, rows, N, C](Tape& t, const std::vector<double>& up) {
      if (tn < 0) return;
      auto& g = t.grad_buffer(tn);
      for (i64 i = 0; i < N; ++i) {
        double* dst = g.data() + rows[static_cast<std::size_t>(i)] * C;
        const double* src = up.data() + i * C;
        for (i64 j = 0; j < C; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor patchify(const Tensor& x, std::int64_t patch) {
  check_rank4(x, "patchify input");
  const i64 B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (patch < 1 || H % patch != 0 || W % patch != 0) {
    throw ShapeMismatch("patch size " + std::to_string(patch) +
                        " does not divide spatial dims of " + x.shape.str());
  }
  const i64 gh = H / patch, gw = W / patch;
  const i64 N = gh * gw, D = C * patch * patch;
  Tensor out = Tensor::zeros({B, N, D});

  const double* xv = x.data->data();
  double* ov = out.data->data();
  for (i64 b = 0; b < B; ++b) {
    for (i64 gy = 0; gy < gh; ++gy) {
      for (i64 gx = 0; gx < gw; ++gx) {
        double* dst = ov + (b * N + gy * gw + gx) * D;
        for (i64 c = 0; c < C; ++c) {
          for (i64 py = 0; py < patch; ++py) {
            const double* src = xv + ((b * C + c) * H + gy * patch + py) * W + gx * patch;
            std::memcpy(dst + (c * patch + py) * patch, src,
                        static_cast<std::size_t>(patch) * sizeof(double));
          }
        }
      }
    }
  }

  Tape* tp = common_tape({&x});
  if (tp) {
    const i64 xn = node_on(x, tp);
    out.tape = tp;
    out.node = tp->record(out.shape, [=](Tape& t, const std::vector<double>& up) {
      if (xn < 0) return;
      auto& g = t.grad_buffer(xn);
      for (i64 b = 0; b < B; ++b) {
        for (i64 gy = 0; gy < gh; ++gy) {
          for (i64 gx = 0; gx < gw; ++gx) {
            const double* src = up.data() + (b * N + gy * gw + gx) * D;
            for (i64 c = 0; c < C; ++c) {
              for (i64 py = 0; py < patch; ++py) {
                double* dst = g.data() + ((b * C + c) * H + gy * patch + py) * W + gx * patch;
                for (i64 px = 0; px < patch; ++px) dst[px] += src[(c * patch + py) * patch + px];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace vitbis
