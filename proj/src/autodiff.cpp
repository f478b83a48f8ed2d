#include "relight/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "relight/error.hpp"
#include "relight/parallel.hpp"

namespace relight {

// ---- Tape -----------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + op + " " + shape_string(value.shape()));
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw InvalidArgument(std::string(op) + ": input belongs to another tape");
    node.requires_grad = node.requires_grad || in.requires_grad();
  }
  if (node.requires_grad) {
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) node.inputs.push_back(in.id());
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (&loss.tape() != this) throw InvalidArgument("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw InvalidArgument("backward: loss must be scalar, got " + shape_string(loss.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor<T>();
  auto& root = nodes_[static_cast<std::size_t>(loss.id())];
  root.grad = Tensor<T>(root.value.shape(), T(1));

  std::vector<Tensor<T>*> slots;
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.empty() || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      Node& in = nodes_[static_cast<std::size_t>(node.inputs[k])];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad = Tensor<T>(in.value.shape());
      slots[k] = &in.grad;
    }
    node.backward(node.grad, slots);
    if (!node.grad.all_finite()) {
      throw NumericError(std::string("non-finite gradient flowing out of ") + node.op);
    }
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(const Var<T>& v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (node.grad.empty()) return Tensor<T>(node.value.shape());
  return node.grad;
}

template class Tape<float>;
template class Tape<double>;

namespace {

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

template <typename T>
void require_rank3(const char* op, const Tensor<T>& t) {
  if (t.rank() != 3) throw InvalidArgument(std::string(op) + ": expected H x W x C, got " + shape_string(t.shape()));
}

void require_stride(const char* op, int stride) {
  if (stride != 1 && stride != 2) {
    throw InvalidArgument(std::string(op) + ": stride must be 1 or 2, got " + std::to_string(stride));
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ---- Elementwise ----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record("add", std::move(out), {a, b}, [](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    for (auto* slot : gi) {
      if (!slot) continue;
      for (std::int64_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    if (gi[0]) for (std::int64_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1]) for (std::int64_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (gi[0]) for (std::int64_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
    if (gi[1]) for (std::int64_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  Tensor<T> out = a.value();
  const T k = static_cast<T>(s);
  for (auto& v : out.storage()) v *= k;
  return a.tape().record("scale", std::move(out), {a}, [k](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    for (std::int64_t i = 0; i < g.size(); ++i) (*gi[0])[i] += k * g[i];
  });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = std::abs(v);
  return a.tape().record("abs", std::move(out), {a}, [a](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    const auto& av = a.value();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const T s = av[i] > 0 ? T(1) : (av[i] < 0 ? T(-1) : T(0));
      (*gi[0])[i] += s * g[i];
    }
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v * v;
  return a.tape().record("square", std::move(out), {a}, [a](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    const auto& av = a.value();
    for (std::int64_t i = 0; i < g.size(); ++i) (*gi[0])[i] += T(2) * av[i] * g[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  // Fixed left-to-right order in double keeps the reduction deterministic.
  double total = 0.0;
  for (T v : a.value().values()) total += static_cast<double>(v);
  return a.tape().record("sum", Tensor<T>::scalar(static_cast<T>(total)), {a},
                         [](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
                           const T s = g[0];
                           for (auto& v : gi[0]->storage()) v += s;
                         });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    for (std::int64_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

template <typename T>
Var<T> log1p_clamped(const Var<T>& a, double floor, std::int64_t* clamped) {
  Tensor<T> out = a.value();
  const T lo = static_cast<T>(floor);
  std::int64_t count = 0;
  for (auto& v : out.storage()) {
    if (v < lo) {
      v = lo;
      ++count;
    }
    v = std::log1p(v);
  }
  if (clamped) *clamped += count;
  return a.tape().record("log1p_clamped", std::move(out), {a},
                         [a, lo](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
                           const auto& av = a.value();
                           for (std::int64_t i = 0; i < g.size(); ++i) {
                             if (av[i] >= lo) (*gi[0])[i] += g[i] / (T(1) + av[i]);
                           }
                         });
}

// ---- Activations ----------------------------------------------------------

template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& alpha) {
  const auto& xv = x.value();
  const int channels = xv.shape().back();
  if (alpha.value().size() != channels) {
    throw InvalidArgument("prelu: expected " + std::to_string(channels) + " slopes, got " +
                          shape_string(alpha.shape()));
  }
  Tensor<T> out = xv;
  const auto& av = alpha.value();
  for (std::int64_t i = 0; i < out.size(); ++i) {
    if (out[i] <= 0) out[i] *= av[i % channels];
  }
  return x.tape().record("prelu", std::move(out), {x, alpha},
                         [x, alpha, channels](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
                           const auto& xv = x.value();
                           const auto& av = alpha.value();
                           for (std::int64_t i = 0; i < g.size(); ++i) {
                             const int c = static_cast<int>(i % channels);
                             if (xv[i] > 0) {
                               if (gi[0]) (*gi[0])[i] += g[i];
                             } else {
                               if (gi[0]) (*gi[0])[i] += av[c] * g[i];
                               if (gi[1]) (*gi[1])[c] += xv[i] * g[i];
                             }
                           }
                         });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = stable_softplus(v);
  return x.tape().record("softplus", std::move(out), {x}, [x](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    const auto& xv = x.value();
    for (std::int64_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * stable_sigmoid(xv[i]);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = stable_sigmoid(v);
  return x.tape().record("sigmoid", std::move(out), {x}, [x](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
    const auto& xv = x.value();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const T s = stable_sigmoid(xv[i]);
      (*gi[0])[i] += g[i] * s * (T(1) - s);
    }
  });
}

// ---- Convolutions ---------------------------------------------------------

namespace kernels {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         int stride) {
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  const int py = kh / 2, px = kw / 2;
  const int oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  Tensor<T> out({oh, ow, cout});
  const T* in = input.data();
  const T* k = kernel.data();
  T* o = out.data();
  parallel_for(oh, [&](std::int64_t oy_) {
    const int oy = static_cast<int>(oy_);
    for (int ox = 0; ox < ow; ++ox) {
      T* dst = o + (static_cast<std::int64_t>(oy) * ow + ox) * cout;
      if (!bias.empty()) std::copy(bias.data(), bias.data() + cout, dst);
      for (int dy = 0; dy < kh; ++dy) {
        const int iy = oy * stride + dy - py;
        if (iy < 0 || iy >= h) continue;
        for (int dx = 0; dx < kw; ++dx) {
          const int ix = ox * stride + dx - px;
          if (ix < 0 || ix >= w) continue;
          const T* src = in + (static_cast<std::int64_t>(iy) * w + ix) * cin;
          const T* kk = k + (static_cast<std::int64_t>(dy) * kw + dx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T xv = src[ci];
            const T* krow = kk + static_cast<std::int64_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) dst[co] += xv * krow[co];
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv2d_adjoint(const Tensor<T>& grad, const Tensor<T>& kernel, int stride, int out_h,
                         int out_w) {
  const int gh = grad.dim(0), gw = grad.dim(1), gc = grad.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), cin = kernel.dim(2);
  const int py = kh / 2, px = kw / 2;
  Tensor<T> out({out_h, out_w, cin});
  const T* g = grad.data();
  const T* k = kernel.data();
  T* o = out.data();
  // Gather form: every output pixel collects from the grad pixels whose
  // receptive field covers it, so rows can be processed independently.
  parallel_for(out_h, [&](std::int64_t iy_) {
    const int iy = static_cast<int>(iy_);
    for (int ix = 0; ix < out_w; ++ix) {
      T* dst = o + (static_cast<std::int64_t>(iy) * out_w + ix) * cin;
      for (int dy = 0; dy < kh; ++dy) {
        const int ty = iy + py - dy;
        if (ty < 0 || ty % stride != 0) continue;
        const int oy = ty / stride;
        if (oy >= gh) continue;
        for (int dx = 0; dx < kw; ++dx) {
          const int tx = ix + px - dx;
          if (tx < 0 || tx % stride != 0) continue;
          const int ox = tx / stride;
          if (ox >= gw) continue;
          const T* src = g + (static_cast<std::int64_t>(oy) * gw + ox) * gc;
          const T* kk = k + (static_cast<std::int64_t>(dy) * kw + dx) * cin * gc;
          for (int ci = 0; ci < cin; ++ci) {
            const T* krow = kk + static_cast<std::int64_t>(ci) * gc;
            T acc = 0;
            for (int co = 0; co < gc; ++co) acc += krow[co] * src[co];
            dst[ci] += acc;
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> roll_columns(const Tensor<T>& x, double shift_pixels) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  double shift = std::fmod(shift_pixels, static_cast<double>(w));
  if (shift < 0) shift += w;
  if (std::abs(shift - std::round(shift)) < 1e-9) shift = std::round(shift);
  if (shift >= w) shift -= w;
  const int whole = static_cast<int>(std::floor(shift));
  const T frac = static_cast<T>(shift - whole);
  Tensor<T> out(x.shape());
  for (int y = 0; y < h; ++y) {
    for (int col = 0; col < w; ++col) {
      const int a = ((col - whole) % w + w) % w;
      const int b = ((col - whole - 1) % w + w) % w;
      for (int ch = 0; ch < c; ++ch) {
        out.at(y, col, ch) = frac == T(0) ? x.at(y, a, ch)
                                          : (T(1) - frac) * x.at(y, a, ch) + frac * x.at(y, b, ch);
      }
    }
  }
  return out;
}

}  // namespace kernels

namespace {

// d(loss)/d(kernel) for a conv whose input is `input` and output grad `grad`.
// Result: kh x kw x Cin(input) x Cout(grad).
template <typename T>
void conv2d_kernel_grad(const Tensor<T>& input, const Tensor<T>& grad, int stride, Tensor<T>& dk) {
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int gh = grad.dim(0), gw = grad.dim(1), cout = grad.dim(2);
  const int kh = dk.dim(0), kw = dk.dim(1);
  const int py = kh / 2, px = kw / 2;
  const T* in = input.data();
  const T* g = grad.data();
  T* d = dk.data();
  parallel_for(static_cast<std::int64_t>(kh) * kw, [&](std::int64_t tap) {
    const int dy = static_cast<int>(tap / kw), dx = static_cast<int>(tap % kw);
    T* dst = d + tap * cin * cout;
    for (int oy = 0; oy < gh; ++oy) {
      const int iy = oy * stride + dy - py;
      if (iy < 0 || iy >= h) continue;
      for (int ox = 0; ox < gw; ++ox) {
        const int ix = ox * stride + dx - px;
        if (ix < 0 || ix >= w) continue;
        const T* src = in + (static_cast<std::int64_t>(iy) * w + ix) * cin;
        const T* gg = g + (static_cast<std::int64_t>(oy) * gw + ox) * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const T xv = src[ci];
          T* row = dst + static_cast<std::int64_t>(ci) * cout;
          for (int co = 0; co < cout; ++co) row[co] += xv * gg[co];
        }
      }
    }
  });
}

template <typename T>
void bias_grad(const Tensor<T>& grad, Tensor<T>& db) {
  const int c = grad.shape().back();
  const std::int64_t pixels = grad.size() / c;
  for (std::int64_t p = 0; p < pixels; ++p) {
    for (int k = 0; k < c; ++k) db[k] += grad[p * c + k];
  }
}

template <typename T>
void check_conv_kernel(const char* op, const Tensor<T>& kernel, const Tensor<T>& bias, int in_channels,
                       int in_axis, int out_axis) {
  if (kernel.rank() != 4) throw InvalidArgument(std::string(op) + ": kernel must be rank 4");
  if (kernel.dim(0) % 2 == 0 || kernel.dim(1) % 2 == 0) {
    throw InvalidArgument(std::string(op) + ": kernel extents must be odd, got " + shape_string(kernel.shape()));
  }
  if (kernel.dim(in_axis) != in_channels) {
    throw InvalidArgument(std::string(op) + ": channel mismatch, input has " + std::to_string(in_channels) +
                          " channels but kernel is " + shape_string(kernel.shape()));
  }
  if (bias.size() != kernel.dim(out_axis)) {
    throw InvalidArgument(std::string(op) + ": bias length " + std::to_string(bias.size()) +
                          " does not match kernel " + shape_string(kernel.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride) {
  require_rank3("conv2d", input.value());
  require_stride("conv2d", stride);
  check_conv_kernel("conv2d", kernel.value(), bias.value(), input.value().dim(2), 2, 3);
  Tensor<T> out = kernels::conv2d_forward(input.value(), kernel.value(), bias.value(), stride);
  return input.tape().record(
      "conv2d", std::move(out), {input, kernel, bias},
      [input, kernel, stride](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
        const auto& x = input.value();
        const auto& k = kernel.value();
        if (gi[0]) {
          Tensor<T> dx = kernels::conv2d_adjoint(g, k, stride, x.dim(0), x.dim(1));
          for (std::int64_t i = 0; i < dx.size(); ++i) (*gi[0])[i] += dx[i];
        }
        if (gi[1]) conv2d_kernel_grad(x, g, stride, *gi[1]);
        if (gi[2]) bias_grad(g, *gi[2]);
      });
}

template <typename T>
Var<T> conv2d_transpose(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride) {
  require_rank3("conv2d_transpose", input.value());
  require_stride("conv2d_transpose", stride);
  check_conv_kernel("conv2d_transpose", kernel.value(), bias.value(), input.value().dim(2), 3, 2);
  const auto& x = input.value();
  Tensor<T> out = kernels::conv2d_adjoint(x, kernel.value(), stride, x.dim(0) * stride, x.dim(1) * stride);
  const auto& b = bias.value();
  const int c = out.dim(2);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return input.tape().record(
      "conv2d_transpose", std::move(out), {input, kernel, bias},
      [input, kernel, stride](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
        const auto& k = kernel.value();
        if (gi[0]) {
          Tensor<T> dx = kernels::conv2d_forward(g, k, Tensor<T>(), stride);
          for (std::int64_t i = 0; i < dx.size(); ++i) (*gi[0])[i] += dx[i];
        }
        if (gi[1]) conv2d_kernel_grad(g, input.value(), stride, *gi[1]);
        if (gi[2]) bias_grad(g, *gi[2]);
      });
}

// ---- Normalization --------------------------------------------------------

template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gamma, const Var<T>& beta, double eps) {
  const auto& xv = x.value();
  require_rank3("group_norm", xv);
  const int c = xv.dim(2);
  if (groups <= 0 || c % groups != 0) {
    throw InvalidArgument("group_norm: " + std::to_string(c) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
  }
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw InvalidArgument("group_norm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  const int per_group = c / groups;
  const std::int64_t pixels = xv.size() / c;
  const double count = static_cast<double>(pixels * per_group);

  auto normalized = std::make_shared<Tensor<T>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  for (int grp = 0; grp < groups; ++grp) {
    const int c0 = grp * per_group;
    double mean = 0.0;
    for (std::int64_t p = 0; p < pixels; ++p)
      for (int k = 0; k < per_group; ++k) mean += xv[p * c + c0 + k];
    mean /= count;
    double var = 0.0;
    for (std::int64_t p = 0; p < pixels; ++p)
      for (int k = 0; k < per_group; ++k) {
        const double d = xv[p * c + c0 + k] - mean;
        var += d * d;
      }
    var /= count;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(grp)] = static_cast<T>(is);
    for (std::int64_t p = 0; p < pixels; ++p)
      for (int k = 0; k < per_group; ++k) {
        const std::int64_t i = p * c + c0 + k;
        (*normalized)[i] = static_cast<T>((xv[i] - mean) * is);
      }
  }
  Tensor<T> out(xv.shape());
  const auto& gm = gamma.value();
  const auto& bt = beta.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = gm[i % c] * (*normalized)[i] + bt[i % c];

  return x.tape().record(
      "group_norm", std::move(out), {x, gamma, beta},
      [gamma, normalized, inv_std, groups, per_group, c, pixels, count](const Tensor<T>& g,
                                                                         std::span<Tensor<T>*> gi) {
        const auto& xhat = *normalized;
        const auto& gm = gamma.value();
        if (gi[1] || gi[2]) {
          for (std::int64_t i = 0; i < g.size(); ++i) {
            const int ch = static_cast<int>(i % c);
            if (gi[1]) (*gi[1])[ch] += g[i] * xhat[i];
            if (gi[2]) (*gi[2])[ch] += g[i];
          }
        }
        if (!gi[0]) return;
        for (int grp = 0; grp < groups; ++grp) {
          const int c0 = grp * per_group;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::int64_t p = 0; p < pixels; ++p)
            for (int k = 0; k < per_group; ++k) {
              const std::int64_t i = p * c + c0 + k;
              const double d = static_cast<double>(g[i]) * gm[c0 + k];
              mean_d += d;
              mean_dx += d * xhat[i];
            }
          mean_d /= count;
          mean_dx /= count;
          const double is = (*inv_std)[static_cast<std::size_t>(grp)];
          for (std::int64_t p = 0; p < pixels; ++p)
            for (int k = 0; k < per_group; ++k) {
              const std::int64_t i = p * c + c0 + k;
              const double d = static_cast<double>(g[i]) * gm[c0 + k];
              (*gi[0])[i] += static_cast<T>(is * (d - mean_d - xhat[i] * mean_dx));
            }
        }
      });
}

// ---- Structural -----------------------------------------------------------

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank3("concat_channels", av);
  require_rank3("concat_channels", bv);
  if (av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1)) {
    throw InvalidArgument("concat_channels: spatial mismatch " + shape_string(av.shape()) + " vs " +
                          shape_string(bv.shape()));
  }
  const int ca = av.dim(2), cb = bv.dim(2), cc = ca + cb;
  const std::int64_t pixels = av.size() / ca;
  Tensor<T> out({av.dim(0), av.dim(1), cc});
  for (std::int64_t p = 0; p < pixels; ++p) {
    std::copy_n(av.data() + p * ca, ca, out.data() + p * cc);
    std::copy_n(bv.data() + p * cb, cb, out.data() + p * cc + ca);
  }
  return a.tape().record("concat_channels", std::move(out), {a, b},
                         [ca, cb, cc, pixels](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
                           for (std::int64_t p = 0; p < pixels; ++p) {
                             if (gi[0])
                               for (int k = 0; k < ca; ++k) (*gi[0])[p * ca + k] += g[p * cc + k];
                             if (gi[1])
                               for (int k = 0; k < cb; ++k) (*gi[1])[p * cb + k] += g[p * cc + ca + k];
                           }
                         });
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int begin, int end) {
  const auto& av = a.value();
  require_rank3("slice_channels", av);
  const int c = av.dim(2);
  if (begin < 0 || end > c || begin >= end) {
    throw InvalidArgument("slice_channels: bad range [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") for " + std::to_string(c) + " channels");
  }
  const int n = end - begin;
  const std::int64_t pixels = av.size() / c;
  Tensor<T> out({av.dim(0), av.dim(1), n});
  for (std::int64_t p = 0; p < pixels; ++p) std::copy_n(av.data() + p * c + begin, n, out.data() + p * n);
  return a.tape().record("slice_channels", std::move(out), {a},
                         [c, n, begin, pixels](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
                           for (std::int64_t p = 0; p < pixels; ++p)
                             for (int k = 0; k < n; ++k) (*gi[0])[p * c + begin + k] += g[p * n + k];
                         });
}

template <typename T>
Var<T> broadcast_spatial(const Var<T>& a, int height, int width) {
  const auto& av = a.value();
  if (av.rank() != 3 || av.dim(0) != 1 || av.dim(1) != 1) {
    throw InvalidArgument("broadcast_spatial: expected 1 x 1 x C, got " + shape_string(av.shape()));
  }
  const int c = av.dim(2);
  Tensor<T> out({height, width, c});
  const std::int64_t pixels = static_cast<std::int64_t>(height) * width;
  for (std::int64_t p = 0; p < pixels; ++p) std::copy_n(av.data(), c, out.data() + p * c);
  return a.tape().record("broadcast_spatial", std::move(out), {a},
                         [c, pixels](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
                           for (std::int64_t p = 0; p < pixels; ++p)
                             for (int k = 0; k < c; ++k) (*gi[0])[k] += g[p * c + k];
                         });
}

template <typename T>
Var<T> weighted_average(const Var<T>& values, const Var<T>& confidence, int groups) {
  const auto& v = values.value();
  const auto& cf = confidence.value();
  require_rank3("weighted_average", v);
  require_rank3("weighted_average", cf);
  if (v.dim(0) != cf.dim(0) || v.dim(1) != cf.dim(1)) {
    throw InvalidArgument("weighted_average: spatial mismatch");
  }
  if (groups <= 0 || v.dim(2) % groups != 0) throw InvalidArgument("weighted_average: bad group count");
  const int pc = cf.dim(2);
  if (pc != groups && pc != 1) {
    throw InvalidArgument("weighted_average: confidence needs 1 or " + std::to_string(groups) + " channels");
  }
  for (T c : cf.values()) {
    if (!(c > 0)) throw NumericError("weighted_average: confidence must be strictly positive");
  }
  const int per = v.dim(2) / groups;
  const int vc = v.dim(2);
  const std::int64_t locations = v.size() / vc;

  auto denom = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups), 0.0);
  std::vector<double> num(static_cast<std::size_t>(groups) * per, 0.0);
  for (std::int64_t l = 0; l < locations; ++l) {
    for (int p = 0; p < groups; ++p) {
      const double c = cf[l * pc + (pc == 1 ? 0 : p)];
      (*denom)[static_cast<std::size_t>(p)] += c;
      for (int k = 0; k < per; ++k) num[static_cast<std::size_t>(p) * per + k] += c * v[l * vc + p * per + k];
    }
  }
  Tensor<T> out({groups, per});
  for (int p = 0; p < groups; ++p)
    for (int k = 0; k < per; ++k)
      out[p * per + k] = static_cast<T>(num[static_cast<std::size_t>(p) * per + k] / (*denom)[static_cast<std::size_t>(p)]);

  auto result = std::make_shared<Tensor<T>>(out);
  return values.tape().record(
      "weighted_average", std::move(out), {values, confidence},
      [values, confidence, denom, result, groups, per, pc, vc, locations](const Tensor<T>& g,
                                                                          std::span<Tensor<T>*> gi) {
        const auto& v = values.value();
        const auto& cf = confidence.value();
        const auto& avg = *result;
        for (std::int64_t l = 0; l < locations; ++l) {
          for (int p = 0; p < groups; ++p) {
            const int ci = pc == 1 ? 0 : p;
            const double d = (*denom)[static_cast<std::size_t>(p)];
            const double c = cf[l * pc + ci];
            double dc = 0.0;
            for (int k = 0; k < per; ++k) {
              const std::int64_t vi = l * vc + p * per + k;
              const double gk = g[p * per + k];
              if (gi[0]) (*gi[0])[vi] += static_cast<T>(gk * c / d);
              dc += gk * (static_cast<double>(v[vi]) - avg[p * per + k]) / d;
            }
            if (gi[1]) (*gi[1])[l * pc + ci] += static_cast<T>(dc);
          }
        }
      });
}

template <typename T>
Var<T> roll_columns(const Var<T>& x, double shift_pixels) {
  require_rank3("roll_columns", x.value());
  const int w = x.value().dim(1);
  Tensor<T> out = kernels::roll_columns(x.value(), shift_pixels);
  return x.tape().record("roll_columns", std::move(out), {x},
                         [shift_pixels, w](const Tensor<T>& g, std::span<Tensor<T>*> gi) {
                           // The transpose of a forward shift by s with linear
                           // weights (1-f, f) at offsets (s0, s0+1).
                           double shift = std::fmod(shift_pixels, static_cast<double>(w));
                           if (shift < 0) shift += w;
                           if (std::abs(shift - std::round(shift)) < 1e-9) shift = std::round(shift);
                           if (shift >= w) shift -= w;
                           const int whole = static_cast<int>(std::floor(shift));
                           const T frac = static_cast<T>(shift - whole);
                           const int h = g.dim(0), c = g.dim(2);
                           auto& dx = *gi[0];
                           for (int y = 0; y < h; ++y)
                             for (int col = 0; col < w; ++col) {
                               const int a = ((col - whole) % w + w) % w;
                               const int b = ((col - whole - 1) % w + w) % w;
                               for (int ch = 0; ch < c; ++ch) {
                                 dx.at(y, a, ch) += (T(1) - frac) * g.at(y, col, ch);
                                 if (frac != T(0)) dx.at(y, b, ch) += frac * g.at(y, col, ch);
                               }
                             }
                         });
}

#define RELIGHT_INSTANTIATE(T)                                                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> scale(const Var<T>&, double);                                                      \
  template Var<T> abs(const Var<T>&);                                                                \
  template Var<T> square(const Var<T>&);                                                             \
  template Var<T> sum(const Var<T>&);                                                                \
  template Var<T> reshape(const Var<T>&, Shape);                                                     \
  template Var<T> log1p_clamped(const Var<T>&, double, std::int64_t*);                               \
  template Var<T> prelu(const Var<T>&, const Var<T>&);                                               \
  template Var<T> softplus(const Var<T>&);                                                           \
  template Var<T> sigmoid(const Var<T>&);                                                            \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int);                          \
  template Var<T> conv2d_transpose(const Var<T>&, const Var<T>&, const Var<T>&, int);                \
  template Var<T> group_norm(const Var<T>&, int, const Var<T>&, const Var<T>&, double);              \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                     \
  template Var<T> slice_channels(const Var<T>&, int, int);                                           \
  template Var<T> broadcast_spatial(const Var<T>&, int, int);                                        \
  template Var<T> weighted_average(const Var<T>&, const Var<T>&, int);                               \
  template Var<T> roll_columns(const Var<T>&, double);                                               \
  template Tensor<T> kernels::conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int); \
  template Tensor<T> kernels::conv2d_adjoint(const Tensor<T>&, const Tensor<T>&, int, int, int);     \
  template Tensor<T> kernels::roll_columns(const Tensor<T>&, double);

RELIGHT_INSTANTIATE(float)
RELIGHT_INSTANTIATE(double)

#undef RELIGHT_INSTANTIATE

}  // namespace relight
