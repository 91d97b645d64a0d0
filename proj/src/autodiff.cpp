#include "cdplab/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace cdp::ad {

using detail::Node;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Eigen::Index numel(const Shape& s) {
  Eigen::Index n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

std::atomic<std::int64_t> g_next_id{1};

std::shared_ptr<Node> make_node(Shape shape, Eigen::ArrayXd value, const char* op) {
  auto n = std::make_shared<Node>();
  if (value.size() != numel(shape))
    throw InvalidArgument(std::string(op) + ": data size does not match shape " +
                          shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void check_finite(const Node& n) {
  if (!n.value.allFinite())
    throw NumericError(std::string("non-finite values produced by op '") + n.op + "'");
}

// Finalizes an op node: finiteness check and backward registration.
Tensor finish(std::shared_ptr<Node> out, std::vector<Tensor> inputs,
              std::function<void()> backward_fn) {
  check_finite(*out);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    out->requires_grad = true;
    out->parents.reserve(inputs.size());
    for (const auto& in : inputs) out->parents.push_back(in.handle());
    out->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(out));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

struct ConvDims {
  Eigen::Index n, c, h, w;
};

ConvDims dims4(const Tensor& t, const char* op) {
  if (t.shape().size() != 4)
    throw InvalidArgument(std::string(op) + ": expected a 4-d NCHW tensor, got " +
                          shape_str(t.shape()));
  const auto& s = t.shape();
  return {s[0], s[1], s[2], s[3]};
}

// Patch matrix for convolution arithmetic: rows index (channel, ky, kx),
// columns index output positions, zero padding outside the image.
void im2col(const double* im, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, MatRM& cols) {
  cols.resize(static_cast<Eigen::Index>(C) * kh * kw,
              static_cast<Eigen::Index>(Ho) * Wo);
  for (int c = 0; c < C; ++c) {
    const double* ch = im + static_cast<std::ptrdiff_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + ki) * kw + kj;
        double* dst = cols.data() + row * cols.cols();
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0);
            dst += Wo;
            continue;
          }
          const double* src_row = ch + static_cast<std::ptrdiff_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            *dst++ = (ix >= 0 && ix < W) ? src_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds patch columns back into the image.
void col2im_add(const MatRM& cols, int C, int H, int W, int kh, int kw, int stride,
                int pad, int Ho, int Wo, double* im) {
  for (int c = 0; c < C; ++c) {
    double* ch = im + static_cast<std::ptrdiff_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + ki) * kw + kj;
        const double* src = cols.data() + row * cols.cols();
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            src += Wo;
            continue;
          }
          double* dst_row = ch + static_cast<std::ptrdiff_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst_row[ix] += src[ox];
          }
          src += Wo;
        }
      }
    }
  }
}

}  // namespace

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  auto n = make_node(shape, Eigen::ArrayXd::Constant(numel(shape), value), "leaf");
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, Eigen::ArrayXd data, bool requires_grad) {
  auto n = make_node(shape, std::move(data), "leaf");
  check_finite(*n);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double scale, bool requires_grad) {
  Eigen::ArrayXd data(numel(shape));
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = scale * rng.normal();
  return from_data(shape, std::move(data), requires_grad);
}

double Tensor::scalar() const {
  if (size() != 1)
    throw InvalidArgument("Tensor::scalar: tensor has " + std::to_string(size()) +
                          " elements");
  return value()[0];
}

Tensor Tensor::detach() const {
  auto n = make_node(node().shape, node().value, "leaf");
  return wrap(std::move(n));
}

// --- convolution -------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  const auto x = dims4(input, "conv2d");
  const auto k = dims4(kernel, "conv2d kernel");
  if (stride < 1) throw InvalidArgument("conv2d: stride must be >= 1");
  if (padding < 0) throw InvalidArgument("conv2d: padding must be >= 0");
  if (k.c != x.c)
    throw InvalidArgument("conv2d: input channels " + shape_str(input.shape()) +
                          " do not match kernel " + shape_str(kernel.shape()));
  const int C = static_cast<int>(x.c), H = static_cast<int>(x.h), W = static_cast<int>(x.w);
  const int F = static_cast<int>(k.n), kh = static_cast<int>(k.h), kw = static_cast<int>(k.w);
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  if (H + 2 * padding < kh || W + 2 * padding < kw || Ho < 1 || Wo < 1)
    throw InvalidArgument("conv2d: kernel " + shape_str(kernel.shape()) +
                          " larger than padded input " + shape_str(input.shape()));

  const Eigen::Index N = x.n;
  const Eigen::Index out_per_n = static_cast<Eigen::Index>(F) * Ho * Wo;
  Eigen::ArrayXd out_data(N * out_per_n);

  auto cols_cache = std::make_shared<std::vector<MatRM>>(static_cast<std::size_t>(N));
  const bool needs_grad = input.requires_grad() || kernel.requires_grad();

  CMapRM K(kernel.value().data(), F, static_cast<Eigen::Index>(C) * kh * kw);
  for (Eigen::Index n = 0; n < N; ++n) {
    MatRM& cols = (*cols_cache)[static_cast<std::size_t>(n)];
    im2col(input.value().data() + n * C * H * W, C, H, W, kh, kw, stride, padding, Ho,
           Wo, cols);
    MapRM O(out_data.data() + n * out_per_n, F, static_cast<Eigen::Index>(Ho) * Wo);
    O.noalias() = K * cols;
  }
  if (!needs_grad) cols_cache->clear();

  auto out = make_node({N, F, Ho, Wo}, std::move(out_data), "conv2d");
  Node* xn = input.handle().get();
  Node* kn = kernel.handle().get();
  Node* on = out.get();
  return finish(
      out, {input, kernel},
      [xn, kn, on, cols_cache, C, H, W, F, kh, kw, stride, padding, Ho, Wo, N]() {
        CMapRM K(kn->value.data(), F, static_cast<Eigen::Index>(C) * kh * kw);
        const Eigen::Index out_per_n = static_cast<Eigen::Index>(F) * Ho * Wo;
        if (kn->requires_grad) kn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (Eigen::Index n = 0; n < N; ++n) {
          CMapRM dO(on->grad.data() + n * out_per_n, F,
                    static_cast<Eigen::Index>(Ho) * Wo);
          const MatRM& cols = (*cols_cache)[static_cast<std::size_t>(n)];
          if (kn->requires_grad) {
            MapRM dK(kn->grad.data(), F, static_cast<Eigen::Index>(C) * kh * kw);
            dK.noalias() += dO * cols.transpose();
          }
          if (xn->requires_grad) {
            MatRM dcols = K.transpose() * dO;
            col2im_add(dcols, C, H, W, kh, kw, stride, padding, Ho, Wo,
                       xn->grad.data() + n * C * H * W);
          }
        }
      });
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, int stride,
                        int padding) {
  const auto x = dims4(input, "conv2d_transpose");
  const auto k = dims4(kernel, "conv2d_transpose kernel");
  if (stride < 1) throw InvalidArgument("conv2d_transpose: stride must be >= 1");
  if (padding < 0) throw InvalidArgument("conv2d_transpose: padding must be >= 0");
  if (k.n != x.c)
    throw InvalidArgument("conv2d_transpose: input channels " + shape_str(input.shape()) +
                          " do not match kernel " + shape_str(kernel.shape()));
  const int C = static_cast<int>(x.c), H = static_cast<int>(x.h), W = static_cast<int>(x.w);
  const int F = static_cast<int>(k.c), kh = static_cast<int>(k.h), kw = static_cast<int>(k.w);
  const int Ho = (H - 1) * stride - 2 * padding + kh;
  const int Wo = (W - 1) * stride - 2 * padding + kw;
  if (Ho < 1 || Wo < 1)
    throw InvalidArgument("conv2d_transpose: output collapses for input " +
                          shape_str(input.shape()) + " and kernel " +
                          shape_str(kernel.shape()));

  const Eigen::Index N = x.n;
  const Eigen::Index out_per_n = static_cast<Eigen::Index>(F) * Ho * Wo;
  const Eigen::Index fkk = static_cast<Eigen::Index>(F) * kh * kw;
  Eigen::ArrayXd out_data = Eigen::ArrayXd::Zero(N * out_per_n);

  CMapRM Kp(kernel.value().data(), C, fkk);
  for (Eigen::Index n = 0; n < N; ++n) {
    CMapRM Xn(input.value().data() + n * C * H * W, C, static_cast<Eigen::Index>(H) * W);
    MatRM cols = Kp.transpose() * Xn;  // [FKK, HW]
    col2im_add(cols, F, Ho, Wo, kh, kw, stride, padding, H, W,
               out_data.data() + n * out_per_n);
  }

  auto out = make_node({N, F, Ho, Wo}, std::move(out_data), "conv2d_transpose");
  Node* xn = input.handle().get();
  Node* kn = kernel.handle().get();
  Node* on = out.get();
  return finish(out, {input, kernel},
                [xn, kn, on, C, H, W, F, kh, kw, stride, padding, Ho, Wo, N]() {
                  const Eigen::Index fkk = static_cast<Eigen::Index>(F) * kh * kw;
                  const Eigen::Index out_per_n = static_cast<Eigen::Index>(F) * Ho * Wo;
                  CMapRM Kp(kn->value.data(), C, fkk);
                  if (kn->requires_grad) kn->ensure_grad();
                  if (xn->requires_grad) xn->ensure_grad();
                  MatRM dcols;
                  for (Eigen::Index n = 0; n < N; ++n) {
                    im2col(on->grad.data() + n * out_per_n, F, Ho, Wo, kh, kw, stride,
                           padding, H, W, dcols);  // [FKK, HW]
                    if (xn->requires_grad) {
                      MapRM dX(xn->grad.data() + n * C * H * W, C,
                               static_cast<Eigen::Index>(H) * W);
                      dX.noalias() += Kp * dcols;
                    }
                    if (kn->requires_grad) {
                      CMapRM Xn(xn->value.data() + n * C * H * W, C,
                                static_cast<Eigen::Index>(H) * W);
                      MapRM dK(kn->grad.data(), C, fkk);
                      dK.noalias() += Xn * dcols.transpose();
                    }
                  }
                });
}

// --- pointwise ---------------------------------------------------------------

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw InvalidArgument("leaky_relu: slope must be in (0, 1)");
  Eigen::ArrayXd v = (x.value() > 0.0).select(x.value(), slope * x.value());
  auto out = make_node(x.shape(), std::move(v), "leaky_relu");
  Node* xn = x.handle().get();
  Node* on = out.get();
  return finish(out, {x}, [xn, on, slope]() {
    xn->ensure_grad();
    xn->grad += (xn->value > 0.0).select(on->grad, slope * on->grad);
  });
}

Tensor sigmoid(const Tensor& x) {
  Eigen::ArrayXd v = 1.0 / (1.0 + (-x.value()).exp());
  auto out = make_node(x.shape(), std::move(v), "sigmoid");
  Node* xn = x.handle().get();
  Node* on = out.get();
  return finish(out, {x}, [xn, on]() {
    xn->ensure_grad();
    xn->grad += on->grad * on->value * (1.0 - on->value);
  });
}

Tensor tanh_op(const Tensor& x) {
  Eigen::ArrayXd v = x.value().tanh();
  auto out = make_node(x.shape(), std::move(v), "tanh");
  Node* xn = x.handle().get();
  Node* on = out.get();
  return finish(out, {x}, [xn, on]() {
    xn->ensure_grad();
    xn->grad += on->grad * (1.0 - on->value.square());
  });
}

Tensor instance_norm(const Tensor& x, double eps) {
  if (eps <= 0.0) throw InvalidArgument("instance_norm: eps must be > 0");
  const auto d = dims4(x, "instance_norm");
  const Eigen::Index groups = d.n * d.c;
  const Eigen::Index m = d.h * d.w;
  if (m < 1) throw InvalidArgument("instance_norm: empty spatial extent");

  Eigen::ArrayXd v(x.size());
  auto inv_std = std::make_shared<Eigen::ArrayXd>(groups);
  for (Eigen::Index g = 0; g < groups; ++g) {
    auto seg = x.value().segment(g * m, m);
    const double mean = seg.mean();
    const double var = (seg - mean).square().sum() / static_cast<double>(m);
    const double r = 1.0 / std::sqrt(var + eps);
    (*inv_std)[g] = r;
    v.segment(g * m, m) = (seg - mean) * r;
  }

  auto out = make_node(x.shape(), std::move(v), "instance_norm");
  Node* xn = x.handle().get();
  Node* on = out.get();
  return finish(out, {x}, [xn, on, inv_std, groups, m]() {
    xn->ensure_grad();
    for (Eigen::Index g = 0; g < groups; ++g) {
      auto dy = on->grad.segment(g * m, m);
      auto y = on->value.segment(g * m, m);
      const double mean_dy = dy.mean();
      const double mean_dyy = (dy * y).mean();
      xn->grad.segment(g * m, m) += (*inv_std)[g] * (dy - mean_dy - y * mean_dyy);
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const auto da = dims4(a, "concat_channels");
  const auto db = dims4(b, "concat_channels");
  if (da.n != db.n || da.h != db.h || da.w != db.w)
    throw InvalidArgument("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  const Eigen::Index plane = da.h * da.w;
  const Eigen::Index ca = da.c * plane, cb = db.c * plane;
  Eigen::ArrayXd v(a.size() + b.size());
  for (Eigen::Index n = 0; n < da.n; ++n) {
    v.segment(n * (ca + cb), ca) = a.value().segment(n * ca, ca);
    v.segment(n * (ca + cb) + ca, cb) = b.value().segment(n * cb, cb);
  }
  auto out = make_node({da.n, da.c + db.c, da.h, da.w}, std::move(v), "concat_channels");
  Node* an = a.handle().get();
  Node* bn = b.handle().get();
  Node* on = out.get();
  const Eigen::Index N = da.n;
  return finish(out, {a, b}, [an, bn, on, ca, cb, N]() {
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (Eigen::Index n = 0; n < N; ++n) {
      if (an->requires_grad)
        an->grad.segment(n * ca, ca) += on->grad.segment(n * (ca + cb), ca);
      if (bn->requires_grad)
        bn->grad.segment(n * cb, cb) += on->grad.segment(n * (ca + cb) + ca, cb);
    }
  });
}

// --- arithmetic ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto out = make_node(a.shape(), a.value() + b.value(), "add");
  Node *an = a.handle().get(), *bn = b.handle().get(), *on = out.get();
  return finish(out, {a, b}, [an, bn, on]() {
    if (an->requires_grad) { an->ensure_grad(); an->grad += on->grad; }
    if (bn->requires_grad) { bn->ensure_grad(); bn->grad += on->grad; }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto out = make_node(a.shape(), a.value() - b.value(), "sub");
  Node *an = a.handle().get(), *bn = b.handle().get(), *on = out.get();
  return finish(out, {a, b}, [an, bn, on]() {
    if (an->requires_grad) { an->ensure_grad(); an->grad += on->grad; }
    if (bn->requires_grad) { bn->ensure_grad(); bn->grad -= on->grad; }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto out = make_node(a.shape(), a.value() * b.value(), "mul");
  Node *an = a.handle().get(), *bn = b.handle().get(), *on = out.get();
  return finish(out, {a, b}, [an, bn, on]() {
    if (an->requires_grad) { an->ensure_grad(); an->grad += on->grad * bn->value; }
    if (bn->requires_grad) { bn->ensure_grad(); bn->grad += on->grad * an->value; }
  });
}

Tensor div_op(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  auto out = make_node(a.shape(), a.value() / b.value(), "div");
  Node *an = a.handle().get(), *bn = b.handle().get(), *on = out.get();
  return finish(out, {a, b}, [an, bn, on]() {
    if (an->requires_grad) { an->ensure_grad(); an->grad += on->grad / bn->value; }
    if (bn->requires_grad) {
      bn->ensure_grad();
      bn->grad -= on->grad * on->value / bn->value;
    }
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  auto out = make_node(x.shape(), x.value() + c, "add_scalar");
  Node *xn = x.handle().get(), *on = out.get();
  return finish(out, {x}, [xn, on]() {
    xn->ensure_grad();
    xn->grad += on->grad;
  });
}

Tensor mul_scalar(const Tensor& x, double c) {
  auto out = make_node(x.shape(), x.value() * c, "mul_scalar");
  Node *xn = x.handle().get(), *on = out.get();
  return finish(out, {x}, [xn, on, c]() {
    xn->ensure_grad();
    xn->grad += c * on->grad;
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  const auto d = dims4(x, "add_channel_bias");
  if (bias.shape().size() != 1 || bias.shape()[0] != d.c)
    throw InvalidArgument("add_channel_bias: bias " + shape_str(bias.shape()) +
                          " does not match channels of " + shape_str(x.shape()));
  const Eigen::Index plane = d.h * d.w;
  Eigen::ArrayXd v = x.value();
  for (Eigen::Index n = 0; n < d.n; ++n)
    for (Eigen::Index c = 0; c < d.c; ++c)
      v.segment((n * d.c + c) * plane, plane) += bias.value()[c];
  auto out = make_node(x.shape(), std::move(v), "add_channel_bias");
  Node *xn = x.handle().get(), *bn = bias.handle().get(), *on = out.get();
  const Eigen::Index N = d.n, C = d.c;
  return finish(out, {x, bias}, [xn, bn, on, N, C, plane]() {
    if (xn->requires_grad) { xn->ensure_grad(); xn->grad += on->grad; }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (Eigen::Index n = 0; n < N; ++n)
        for (Eigen::Index c = 0; c < C; ++c)
          bn->grad[c] += on->grad.segment((n * C + c) * plane, plane).sum();
    }
  });
}

// --- reductions and losses -----------------------------------------------------

Tensor mean_all(const Tensor& x) {
  Eigen::ArrayXd v(1);
  v[0] = x.value().mean();
  auto out = make_node({}, std::move(v), "mean");
  Node *xn = x.handle().get(), *on = out.get();
  return finish(out, {x}, [xn, on]() {
    xn->ensure_grad();
    xn->grad += on->grad[0] / static_cast<double>(xn->value.size());
  });
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_loss");
  Eigen::ArrayXd v(1);
  v[0] = (a.value() - b.value()).abs().mean();
  auto out = make_node({}, std::move(v), "l1_loss");
  Node *an = a.handle().get(), *bn = b.handle().get(), *on = out.get();
  return finish(out, {a, b}, [an, bn, on]() {
    const double g = on->grad[0] / static_cast<double>(an->value.size());
    const Eigen::ArrayXd d = an->value - bn->value;
    // sign with subgradient 0 at the kink
    const Eigen::ArrayXd s = (d > 0.0).cast<double>() - (d < 0.0).cast<double>();
    if (an->requires_grad) { an->ensure_grad(); an->grad += g * s; }
    if (bn->requires_grad) { bn->ensure_grad(); bn->grad -= g * s; }
  });
}

Tensor bce_loss(const Tensor& p, const Tensor& target, double eps) {
  require_same_shape(p, target, "bce_loss");
  if (!(eps > 0.0 && eps < 0.5)) throw InvalidArgument("bce_loss: eps must be in (0, 0.5)");
  const Eigen::ArrayXd pc = p.value().max(eps).min(1.0 - eps);
  Eigen::ArrayXd v(1);
  v[0] = (-(target.value() * pc.log() + (1.0 - target.value()) * (1.0 - pc).log())).mean();
  auto out = make_node({}, std::move(v), "bce_loss");
  Node *pn = p.handle().get(), *tn = target.handle().get(), *on = out.get();
  return finish(out, {p, target}, [pn, tn, on, eps]() {
    const double g = on->grad[0] / static_cast<double>(pn->value.size());
    const Eigen::ArrayXd pc = pn->value.max(eps).min(1.0 - eps);
    if (pn->requires_grad) {
      pn->ensure_grad();
      // Clamped entries are flat in p.
      const Eigen::ArrayXd inside =
          ((pn->value > eps) && (pn->value < 1.0 - eps)).cast<double>();
      pn->grad += g * inside * (-tn->value / pc + (1.0 - tn->value) / (1.0 - pc));
    }
    if (tn->requires_grad) {
      tn->ensure_grad();
      tn->grad += g * ((1.0 - pc).log() - pc.log());
    }
  });
}

// --- backward ------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw InvalidArgument("backward: loss must be scalar, got shape " +
                          shape_str(loss.shape()));
  auto root = loss.handle();
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Reachable subgraph, then exact reverse creation (= topological) order.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  // Interior gradients are recomputed per sweep; leaf gradients accumulate.
  for (Node* n : nodes)
    if (n->backward_fn) n->grad.resize(0);

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : nodes) {
    if (!n->backward_fn) continue;
    if (n->grad.size() == 0) continue;  // no contribution reached this node
    n->backward_fn();
  }
}

void zero_grad(const std::vector<Tensor>& params) {
  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
}

// --- Adam ------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, const AdamConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.learning_rate > 0.0)) throw InvalidArgument("Adam: learning_rate must be > 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw InvalidArgument("Adam: betas must be in [0, 1)");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Eigen::ArrayXd::Zero(p.size()));
    v_.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& node = params_[i].node();
    node.ensure_grad();
    if (node.grad.size() != node.value.size())
      throw InvalidArgument("Adam::step: gradient shape mismatch");
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * node.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * node.grad.square();
    node.value -= cfg_.learning_rate * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + cfg_.eps);
    if (!node.value.allFinite()) throw NumericError("Adam::step produced non-finite parameters");
  }
}

}  // namespace cdp::ad
