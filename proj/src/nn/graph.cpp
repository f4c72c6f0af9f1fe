#include "crossdiff/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

#include "crossdiff/image.hpp"

namespace crossdiff::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

struct ConvGeometry {
  int cin, h, w, k, stride, pad, ho, wo;
  int rows() const { return cin * k * k; }
  int cols() const { return ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix < 0 || ix >= g.w) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const T* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

// One pass of a 1-D filter along rows (axis 1) or columns (axis 0) of every
// channel. `forward` computes out = A in; the adjoint accumulates A^T gout.
template <typename T>
struct Filter1d {
  std::span<const T> kernel;
  int radius;
  Padding padding;

  int out_len(int n) const { return padding == Padding::Reflect ? n : n - 2 * radius; }
  int src(int o, int k, int n) const {
    return padding == Padding::Reflect ? reflect_index(o + k, n) : o + radius + k;
  }

  Tensor<T> apply(const Tensor<T>& in, bool horizontal) const {
    Tensor<T> out(in.c, horizontal ? in.h : out_len(in.h), horizontal ? out_len(in.w) : in.w);
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
          T acc = T(0);
          for (int k = -radius; k <= radius; ++k) {
            acc += kernel[k + radius] *
                   (horizontal ? in(c, y, src(x, k, in.w)) : in(c, src(y, k, in.h), x));
          }
          out(c, y, x) = acc;
        }
    return out;
  }

  void adjoint_add(const Tensor<T>& gout, bool horizontal, Tensor<T>& gin) const {
    for (int c = 0; c < gout.c; ++c)
      for (int y = 0; y < gout.h; ++y)
        for (int x = 0; x < gout.w; ++x) {
          const T g = gout(c, y, x);
          for (int k = -radius; k <= radius; ++k) {
            if (horizontal) {
              gin(c, y, src(x, k, gin.w)) += kernel[k + radius] * g;
            } else {
              gin(c, src(y, k, gin.h), x) += kernel[k + radius] * g;
            }
          }
        }
  }
};

template <typename T>
T sigmoid_of(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Var Graph<T>::push(Tensor<T> value, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), {}, needs_grad && enable_grad_, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_of(int id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.c, n.value.h, n.value.w);
  return n.grad;
}

template <typename T>
Var Graph<T>::input(Tensor<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

template <typename T>
void Graph<T>::backward(Var out) {
  require(value(out).size() == 1, "backward() needs a scalar output");
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_of(out.id).data[0] = T(1);
  for (int i = out.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (n.needs_grad && n.backward && !n.grad.empty()) n.backward();
  }
}

template <typename T>
Var Graph<T>::conv2d(Var x, const Parameter<T>& weight, const Parameter<T>* bias, int stride) {
  require(weight.shape.size() == 4 && weight.shape[2] == weight.shape[3], "conv weight must be {Cout,Cin,k,k}");
  const auto& xv = value(x);
  const int cout = weight.shape[0];
  const int k = weight.shape[2];
  require(weight.shape[1] == xv.c, "conv input channel mismatch");
  require(!bias || static_cast<int>(bias->size()) == cout, "conv bias size mismatch");
  ConvGeometry g{xv.c, xv.h, xv.w, k, stride, k / 2, 0, 0};
  g.ho = (xv.h + 2 * g.pad - k) / stride + 1;
  g.wo = (xv.w + 2 * g.pad - k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv output would be empty");
  const bool direct = k == 1 && stride == 1;

  Tensor<T> out(cout, g.ho, g.wo);
  {
    Buffer<T> col;
    const T* colp = xv.data.data();
    if (!direct) {
      col.resize(static_cast<std::size_t>(g.rows()) * g.cols());
      im2col(xv.data.data(), g, col.data());
      colp = col.data();
    }
    Eigen::Map<const RowMat<T>> W(weight.value.data(), cout, g.rows());
    Eigen::Map<const RowMat<T>> C(colp, g.rows(), g.cols());
    Eigen::Map<RowMat<T>> Y(out.data.data(), cout, g.cols());
    Y.noalias() = W * C;
    if (bias) {
      for (int o = 0; o < cout; ++o) Y.row(o).array() += bias->value[o];
    }
  }
  const bool param_grad = !weight.frozen || (bias && !bias->frozen);
  Var y = push(std::move(out), needs(x) || param_grad);
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, x, y, g, cout, direct, &weight, bias]() {
    const auto& gy = nodes_[y.id].grad;
    Eigen::Map<const RowMat<T>> dY(gy.data.data(), cout, g.cols());
    Buffer<T> col;
    const T* colp = nodes_[x.id].value.data.data();
    if (!direct && !weight.frozen) {
      col.resize(static_cast<std::size_t>(g.rows()) * g.cols());
      im2col(nodes_[x.id].value.data.data(), g, col.data());
      colp = col.data();
    }
    if (!weight.frozen) {
      Eigen::Map<const RowMat<T>> C(colp, g.rows(), g.cols());
      Eigen::Map<RowMat<T>> dW(weight.grad.data(), cout, g.rows());
      dW.noalias() += dY * C.transpose();
    }
    if (bias && !bias->frozen) {
      for (int o = 0; o < cout; ++o) bias->grad[o] += dY.row(o).sum();
    }
    if (needs(x)) {
      Eigen::Map<const RowMat<T>> W(weight.value.data(), cout, g.rows());
      auto& gx = grad_of(x.id);
      if (direct) {
        Eigen::Map<RowMat<T>> dX(gx.data.data(), g.rows(), g.cols());
        dX.noalias() += W.transpose() * dY;
      } else {
        RowMat<T> dcol = W.transpose() * dY;
        col2im_add(dcol.data(), g, gx.data.data());
      }
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::linear(Var x, const Parameter<T>& weight, const Parameter<T>* bias) {
  require(weight.shape.size() == 2, "linear weight must be {Dout,Din}");
  const auto& xv = value(x);
  const int dout = weight.shape[0], din = weight.shape[1];
  require(static_cast<int>(xv.size()) == din, "linear input size mismatch");
  Tensor<T> out(dout, 1, 1);
  for (int o = 0; o < dout; ++o) {
    T acc = bias ? bias->value[o] : T(0);
    const T* wr = weight.value.data() + static_cast<std::size_t>(o) * din;
    for (int i = 0; i < din; ++i) acc += wr[i] * xv.data[i];
    out.data[o] = acc;
  }
  const bool param_grad = !weight.frozen || (bias && !bias->frozen);
  Var y = push(std::move(out), needs(x) || param_grad);
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, x, y, din, dout, &weight, bias]() {
    const auto& gy = nodes_[y.id].grad.data;
    const auto& xv = nodes_[x.id].value.data;
    if (!weight.frozen) {
      for (int o = 0; o < dout; ++o)
        for (int i = 0; i < din; ++i) weight.grad[static_cast<std::size_t>(o) * din + i] += gy[o] * xv[i];
    }
    if (bias && !bias->frozen) {
      for (int o = 0; o < dout; ++o) bias->grad[o] += gy[o];
    }
    if (needs(x)) {
      auto& gx = grad_of(x.id).data;
      for (int o = 0; o < dout; ++o)
        for (int i = 0; i < din; ++i) gx[i] += weight.value[static_cast<std::size_t>(o) * din + i] * gy[o];
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::group_norm(Var x, int groups, const Parameter<T>& gamma, const Parameter<T>& beta, T eps) {
  const auto& xv = value(x);
  require(groups > 0 && xv.c % groups == 0, "channels must be divisible by norm groups");
  require(static_cast<int>(gamma.size()) == xv.c && static_cast<int>(beta.size()) == xv.c,
          "group norm affine size mismatch");
  const int cpg = xv.c / groups;
  const std::size_t n = static_cast<std::size_t>(cpg) * xv.plane();
  Tensor<T> xhat(xv.c, xv.h, xv.w);
  std::vector<T> inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    const T* src = xv.channel(g * cpg);
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += src[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(n);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[g] = is;
    T* dst = xhat.channel(g * cpg);
    for (std::size_t i = 0; i < n; ++i) dst[i] = (src[i] - static_cast<T>(mu)) * is;
  }
  Tensor<T> out(xv.c, xv.h, xv.w);
  for (int c = 0; c < xv.c; ++c) {
    const T* src = xhat.channel(c);
    T* dst = out.channel(c);
    for (std::size_t i = 0; i < xv.plane(); ++i) dst[i] = src[i] * gamma.value[c] + beta.value[c];
  }
  Var y = push(std::move(out), needs(x) || !gamma.frozen || !beta.frozen);
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, x, y, groups, cpg, n, xhat = std::move(xhat),
                           inv_std = std::move(inv_std), &gamma, &beta]() {
    const auto& gy = nodes_[y.id].grad;
    const std::size_t plane = gy.plane();
    for (int c = 0; c < gy.c; ++c) {
      const T* g = gy.channel(c);
      const T* xh = xhat.channel(c);
      T sg = 0, sgx = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        sg += g[i];
        sgx += g[i] * xh[i];
      }
      if (!gamma.frozen) gamma.grad[c] += sgx;
      if (!beta.frozen) beta.grad[c] += sg;
    }
    if (!needs(x)) return;
    auto& gx = grad_of(x.id);
    for (int grp = 0; grp < groups; ++grp) {
      double m1 = 0.0, m2 = 0.0;
      for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
        const T* g = gy.channel(c);
        const T* xh = xhat.channel(c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(g[i]) * gamma.value[c];
          m1 += d;
          m2 += d * xh[i];
        }
      }
      m1 /= static_cast<double>(n);
      m2 /= static_cast<double>(n);
      for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
        const T* g = gy.channel(c);
        const T* xh = xhat.channel(c);
        T* dst = gx.channel(c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(g[i]) * gamma.value[c];
          dst[i] += static_cast<T>(inv_std[grp] * (d - m1 - xh[i] * m2));
        }
      }
    }
  };
  return y;
}

// Shared body for pointwise ops: f gives the value, df the derivative given
// (input, output).
#define CROSSDIFF_POINTWISE(NAME, F, DF)                                         \
  template <typename T>                                                          \
  Var Graph<T>::NAME(Var x) {                                                    \
    const auto& xv = value(x);                                                   \
    Tensor<T> out(xv.c, xv.h, xv.w);                                             \
    for (std::size_t i = 0; i < xv.size(); ++i) {                                \
      const T v = xv.data[i];                                                    \
      out.data[i] = (F);                                                         \
    }                                                                            \
    Var y = push(std::move(out), needs(x));                                      \
    if (!needs(x)) return y;                                                     \
    nodes_[y.id].backward = [this, x, y]() {                                     \
      const auto& xs = nodes_[x.id].value.data;                                  \
      const auto& ys = nodes_[y.id].value.data;                                  \
      const auto& gy = nodes_[y.id].grad.data;                                   \
      auto& gx = grad_of(x.id).data;                                             \
      for (std::size_t i = 0; i < gy.size(); ++i) {                              \
        const T v = xs[i];                                                       \
        const T o = ys[i];                                                       \
        (void)v;                                                                 \
        (void)o;                                                                 \
        gx[i] += gy[i] * (DF);                                                   \
      }                                                                          \
    };                                                                           \
    return y;                                                                    \
  }

CROSSDIFF_POINTWISE(silu, v * sigmoid_of(v),
                    sigmoid_of(v) * (T(1) + v * (T(1) - sigmoid_of(v))))
CROSSDIFF_POINTWISE(relu, v > T(0) ? v : T(0), v > T(0) ? T(1) : T(0))
CROSSDIFF_POINTWISE(sigmoid, sigmoid_of(v), o * (T(1) - o))
CROSSDIFF_POINTWISE(abs, v < T(0) ? -v : v, v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)))
CROSSDIFF_POINTWISE(square, v * v, T(2) * v)

#undef CROSSDIFF_POINTWISE

template <typename T>
Var Graph<T>::leaky_relu(Var x, T slope) {
  const auto& xv = value(x);
  Tensor<T> out(xv.c, xv.h, xv.w);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : slope * xv.data[i];
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y, slope]() {
    const auto& xs = nodes_[x.id].value.data;
    const auto& gy = nodes_[y.id].grad.data;
    auto& gx = grad_of(x.id).data;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (xs[i] > T(0) ? T(1) : slope);
  };
  return y;
}

template <typename T>
Var Graph<T>::clip(Var x, T lo, T hi) {
  const auto& xv = value(x);
  Tensor<T> out(xv.c, xv.h, xv.w);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = std::clamp(xv.data[i], lo, hi);
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y, lo, hi]() {
    const auto& xs = nodes_[x.id].value.data;
    const auto& gy = nodes_[y.id].grad.data;
    auto& gx = grad_of(x.id).data;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (xs[i] >= lo && xs[i] <= hi) gx[i] += gy[i];
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::add_scalar(Var x, T s) {
  const auto& xv = value(x);
  Tensor<T> out = xv;
  for (auto& v : out.data) v += s;
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    auto& gx = grad_of(x.id).data;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  };
  return y;
}

template <typename T>
Var Graph<T>::mul_scalar(Var x, T s) {
  const auto& xv = value(x);
  Tensor<T> out = xv;
  for (auto& v : out.data) v *= s;
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y, s]() {
    const auto& gy = nodes_[y.id].grad.data;
    auto& gx = grad_of(x.id).data;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * s;
  };
  return y;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  require(value(a).same_shape(value(b)), "add: shape mismatch");
  Tensor<T> out = value(a);
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  Var y = push(std::move(out), needs(a) || needs(b));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, a, b, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    for (Var v : {a, b}) {
      if (!needs(v)) continue;
      auto& gv = grad_of(v.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += gy[i];
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  require(value(a).same_shape(value(b)), "sub: shape mismatch");
  Tensor<T> out = value(a);
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  Var y = push(std::move(out), needs(a) || needs(b));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, a, b, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    if (needs(a)) {
      auto& ga = grad_of(a.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (needs(b)) {
      auto& gb = grad_of(b.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  require(value(a).same_shape(value(b)), "mul: shape mismatch");
  Tensor<T> out = value(a);
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  Var y = push(std::move(out), needs(a) || needs(b));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, a, b, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    const auto& av = nodes_[a.id].value.data;
    const auto& bv = nodes_[b.id].value.data;
    if (needs(a)) {
      auto& ga = grad_of(a.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (needs(b)) {
      auto& gb = grad_of(b.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::div(Var a, Var b) {
  require(value(a).same_shape(value(b)), "div: shape mismatch");
  Tensor<T> out = value(a);
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= bv[i];
  Var y = push(std::move(out), needs(a) || needs(b));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, a, b, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    const auto& bv = nodes_[b.id].value.data;
    const auto& yv = nodes_[y.id].value.data;
    if (needs(a)) {
      auto& ga = grad_of(a.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / bv[i];
    }
    if (needs(b)) {
      auto& gb = grad_of(b.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i] * yv[i] / bv[i];
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::add_channel(Var x, Var v) {
  const auto& xv = value(x);
  require(value(v).c == xv.c && value(v).plane() == 1, "add_channel: vector must be C x 1 x 1");
  Tensor<T> out = xv;
  for (int c = 0; c < xv.c; ++c) {
    T* dst = out.channel(c);
    const T s = value(v).data[c];
    for (std::size_t i = 0; i < xv.plane(); ++i) dst[i] += s;
  }
  Var y = push(std::move(out), needs(x) || needs(v));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, x, v, y]() {
    const auto& gy = nodes_[y.id].grad;
    if (needs(x)) {
      auto& gx = grad_of(x.id).data;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy.data[i];
    }
    if (needs(v)) {
      auto& gv = grad_of(v.id).data;
      for (int c = 0; c < gy.c; ++c) {
        const T* g = gy.channel(c);
        T acc = 0;
        for (std::size_t i = 0; i < gy.plane(); ++i) acc += g[i];
        gv[c] += acc;
      }
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::mul_channel(Var x, Var v) {
  const auto& xv = value(x);
  require(value(v).c == xv.c && value(v).plane() == 1, "mul_channel: vector must be C x 1 x 1");
  Tensor<T> out = xv;
  for (int c = 0; c < xv.c; ++c) {
    T* dst = out.channel(c);
    const T s = value(v).data[c];
    for (std::size_t i = 0; i < xv.plane(); ++i) dst[i] *= s;
  }
  Var y = push(std::move(out), needs(x) || needs(v));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, x, v, y]() {
    const auto& gy = nodes_[y.id].grad;
    const auto& xs = nodes_[x.id].value;
    const auto& vs = nodes_[v.id].value.data;
    for (int c = 0; c < gy.c; ++c) {
      const T* g = gy.channel(c);
      if (needs(x)) {
        T* gx = grad_of(x.id).channel(c);
        for (std::size_t i = 0; i < gy.plane(); ++i) gx[i] += g[i] * vs[c];
      }
      if (needs(v)) {
        const T* xc = xs.channel(c);
        T acc = 0;
        for (std::size_t i = 0; i < gy.plane(); ++i) acc += g[i] * xc[i];
        grad_of(v.id).data[c] += acc;
      }
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::mul_pixel(Var x, Var s) {
  const auto& xv = value(x);
  const auto& sv = value(s);
  require(sv.c == 1 && sv.h == xv.h && sv.w == xv.w, "mul_pixel: map must be 1 x H x W");
  Tensor<T> out = xv;
  for (int c = 0; c < xv.c; ++c) {
    T* dst = out.channel(c);
    for (std::size_t i = 0; i < xv.plane(); ++i) dst[i] *= sv.data[i];
  }
  Var y = push(std::move(out), needs(x) || needs(s));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, x, s, y]() {
    const auto& gy = nodes_[y.id].grad;
    const auto& xs = nodes_[x.id].value;
    const auto& ss = nodes_[s.id].value.data;
    for (int c = 0; c < gy.c; ++c) {
      const T* g = gy.channel(c);
      if (needs(x)) {
        T* gx = grad_of(x.id).channel(c);
        for (std::size_t i = 0; i < gy.plane(); ++i) gx[i] += g[i] * ss[i];
      }
      if (needs(s)) {
        const T* xc = xs.channel(c);
        auto& gs = grad_of(s.id).data;
        for (std::size_t i = 0; i < gy.plane(); ++i) gs[i] += g[i] * xc[i];
      }
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::concat(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require(av.h == bv.h && av.w == bv.w, "concat: spatial mismatch");
  Tensor<T> out(av.c + bv.c, av.h, av.w);
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.size());
  Var y = push(std::move(out), needs(a) || needs(b));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, a, b, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    const std::size_t na = nodes_[a.id].value.size();
    if (needs(a)) {
      auto& ga = grad_of(a.id).data;
      for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
    }
    if (needs(b)) {
      auto& gb = grad_of(b.id).data;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::slice_channel(Var x, int ch) {
  const auto& xv = value(x);
  require(ch >= 0 && ch < xv.c, "slice_channel: index out of range");
  Tensor<T> out(1, xv.h, xv.w);
  std::copy(xv.channel(ch), xv.channel(ch) + xv.plane(), out.data.begin());
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y, ch]() {
    const auto& gy = nodes_[y.id].grad.data;
    T* gx = grad_of(x.id).channel(ch);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  };
  return y;
}

template <typename T>
Var Graph<T>::upsample_nearest(Var x, int factor) {
  const auto& xv = value(x);
  require(factor >= 1, "upsample factor must be positive");
  Tensor<T> out(xv.c, xv.h * factor, xv.w * factor);
  for (int c = 0; c < xv.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx) out(c, y, xx) = xv(c, y / factor, xx / factor);
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y, factor]() {
    const auto& gy = nodes_[y.id].grad;
    auto& gx = grad_of(x.id);
    for (int c = 0; c < gy.c; ++c)
      for (int yy = 0; yy < gy.h; ++yy)
        for (int xx = 0; xx < gy.w; ++xx) gx(c, yy / factor, xx / factor) += gy(c, yy, xx);
  };
  return y;
}

template <typename T>
Var Graph<T>::global_avg_pool(Var x) {
  const auto& xv = value(x);
  Tensor<T> out(xv.c, 1, 1);
  for (int c = 0; c < xv.c; ++c) {
    const T* src = xv.channel(c);
    T acc = 0;
    for (std::size_t i = 0; i < xv.plane(); ++i) acc += src[i];
    out.data[c] = acc / static_cast<T>(xv.plane());
  }
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    auto& gx = grad_of(x.id);
    const T inv = T(1) / static_cast<T>(gx.plane());
    for (int c = 0; c < gx.c; ++c) {
      T* dst = gx.channel(c);
      for (std::size_t i = 0; i < gx.plane(); ++i) dst[i] += gy[c] * inv;
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::channel_mean(Var x) {
  const auto& xv = value(x);
  Tensor<T> out(1, xv.h, xv.w);
  for (int c = 0; c < xv.c; ++c) {
    const T* src = xv.channel(c);
    for (std::size_t i = 0; i < xv.plane(); ++i) out.data[i] += src[i];
  }
  for (auto& v : out.data) v /= static_cast<T>(xv.c);
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y]() {
    const auto& gy = nodes_[y.id].grad.data;
    auto& gx = grad_of(x.id);
    const T inv = T(1) / static_cast<T>(gx.c);
    for (int c = 0; c < gx.c; ++c) {
      T* dst = gx.channel(c);
      for (std::size_t i = 0; i < gx.plane(); ++i) dst[i] += gy[i] * inv;
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::separable_filter(Var x, std::span<const T> kernel, Padding padding) {
  require(kernel.size() % 2 == 1, "filter kernel must have odd length");
  const auto& xv = value(x);
  std::vector<T> taps(kernel.begin(), kernel.end());
  const int radius = static_cast<int>(taps.size() / 2);
  if (padding == Padding::Valid) {
    require(xv.h > 2 * radius && xv.w > 2 * radius, "valid filter larger than input");
  }
  Filter1d<T> f{taps, radius, padding};
  Tensor<T> mid = f.apply(xv, true);
  Tensor<T> out = f.apply(mid, false);
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y, taps = std::move(taps), radius, padding,
                           mh = mid.h, mw = mid.w]() {
    Filter1d<T> f{taps, radius, padding};
    const auto& gy = nodes_[y.id].grad;
    Tensor<T> gmid(gy.c, mh, mw);
    f.adjoint_add(gy, false, gmid);
    f.adjoint_add(gmid, true, grad_of(x.id));
  };
  return y;
}

template <typename T>
Var Graph<T>::mean(Var x) {
  const auto& xv = value(x);
  T acc = 0;
  for (T v : xv.data) acc += v;
  Tensor<T> out(1, 1, 1, acc / static_cast<T>(xv.size()));
  Var y = push(std::move(out), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y]() {
    auto& gx = grad_of(x.id).data;
    const T g = nodes_[y.id].grad.data[0] / static_cast<T>(gx.size());
    for (auto& v : gx) v += g;
  };
  return y;
}

template <typename T>
Var Graph<T>::sum(Var x) {
  const auto& xv = value(x);
  T acc = 0;
  for (T v : xv.data) acc += v;
  Var y = push(Tensor<T>(1, 1, 1, acc), needs(x));
  if (!needs(x)) return y;
  nodes_[y.id].backward = [this, x, y]() {
    auto& gx = grad_of(x.id).data;
    const T g = nodes_[y.id].grad.data[0];
    for (auto& v : gx) v += g;
  };
  return y;
}

template <typename T>
Var Graph<T>::q_index_blocks(Var a, Var b, int block) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require(av.same_shape(bv) && av.c == 1, "q_index_blocks: inputs must be matching 1 x H x W maps");
  require(block >= 1 && av.h >= block && av.w >= block, "q_index_blocks: block larger than image");
  const int by = av.h / block, bx = av.w / block;
  const double n = static_cast<double>(block) * block;

  // Per-block statistics, kept for the backward pass.
  struct Stats {
    double mx, my, sx, sy, sxy, q;
    bool degenerate;
  };
  std::vector<Stats> stats(static_cast<std::size_t>(by) * bx);
  Tensor<T> out(1, by, bx);
  for (int i = 0; i < by; ++i)
    for (int j = 0; j < bx; ++j) {
      double sa = 0, sb = 0;
      for (int y = i * block; y < (i + 1) * block; ++y)
        for (int x = j * block; x < (j + 1) * block; ++x) {
          sa += av(0, y, x);
          sb += bv(0, y, x);
        }
      const double mx = sa / n, my = sb / n;
      double vx = 0, vy = 0, cxy = 0;
      for (int y = i * block; y < (i + 1) * block; ++y)
        for (int x = j * block; x < (j + 1) * block; ++x) {
          const double dx = av(0, y, x) - mx, dy = bv(0, y, x) - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      Stats s{mx, my, vx / n, vy / n, cxy / n, 0.0, false};
      const double den = (s.sx + s.sy) * (mx * mx + my * my);
      if (den == 0.0) {
        s.degenerate = true;
      } else {
        s.q = 4.0 * s.sxy * mx * my / den;
      }
      stats[static_cast<std::size_t>(i) * bx + j] = s;
      out(0, i, j) = static_cast<T>(s.q);
    }
  Var y = push(std::move(out), needs(a) || needs(b));
  if (!nodes_[y.id].needs_grad) return y;
  nodes_[y.id].backward = [this, a, b, y, block, bx, n, stats = std::move(stats)]() {
    const auto& gy = nodes_[y.id].grad;
    const auto& av = nodes_[a.id].value;
    const auto& bv = nodes_[b.id].value;
    Tensor<T>* ga = needs(a) ? &grad_of(a.id) : nullptr;
    Tensor<T>* gb = needs(b) ? &grad_of(b.id) : nullptr;
    for (int i = 0; i < gy.h; ++i)
      for (int j = 0; j < gy.w; ++j) {
        const Stats& s = stats[static_cast<std::size_t>(i) * bx + j];
        if (s.degenerate) continue;
        const double g = gy(0, i, j);
        const double d1 = s.sx + s.sy, d2 = s.mx * s.mx + s.my * s.my;
        const double dq_dsxy = 4.0 * s.mx * s.my / (d1 * d2);
        const double dq_dvar = -s.q / d1;
        const double dq_dmx = 4.0 * s.sxy * s.my / (d1 * d2) - s.q * 2.0 * s.mx / d2;
        const double dq_dmy = 4.0 * s.sxy * s.mx / (d1 * d2) - s.q * 2.0 * s.my / d2;
        for (int yy = i * block; yy < (i + 1) * block; ++yy)
          for (int xx = j * block; xx < (j + 1) * block; ++xx) {
            const double dx = av(0, yy, xx) - s.mx, dy = bv(0, yy, xx) - s.my;
            if (ga) (*ga)(0, yy, xx) += static_cast<T>(g * (dq_dmx + dq_dvar * 2.0 * dx + dq_dsxy * dy) / n);
            if (gb) (*gb)(0, yy, xx) += static_cast<T>(g * (dq_dmy + dq_dvar * 2.0 * dy + dq_dsxy * dx) / n);
          }
      }
  };
  return y;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace crossdiff::nn
