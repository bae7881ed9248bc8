#ifndef LIDARSEG_AUTODIFF_HPP
#define LIDARSEG_AUTODIFF_HPP

// Minimal n-dimensional array engine with reverse-mode differentiation.
// Scalars are float or double; forward results are bitwise deterministic for
// a fixed input because every reduction runs sequentially in row-major order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <type_traits>
#include <string>
#include <vector>

#include "lidarseg/error.hpp"

namespace lidarseg::ad {

enum class Mode { kTrain, kEval };

template <class S>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated iff tracked
  bool tracked = false;

  std::size_t size() const { return value.size(); }
  std::size_t rank() const { return shape.size(); }

  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

template <class S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

template <class S>
TensorPtr<S> make_tensor(std::vector<std::size_t> shape, bool tracked = false) {
  auto t = std::make_shared<Tensor<S>>();
  t->shape = std::move(shape);
  t->value.assign(shape_size(t->shape), S(0));
  t->tracked = tracked;
  if (tracked) t->grad.assign(t->value.size(), S(0));
  return t;
}

template <class S>
TensorPtr<S> make_tensor(std::vector<std::size_t> shape, std::vector<S> value,
                         bool tracked = false) {
  auto t = std::make_shared<Tensor<S>>();
  t->shape = std::move(shape);
  if (value.size() != shape_size(t->shape))
    throw Error(ErrorCode::ShapeMismatch, "tensor data does not match shape");
  t->value = std::move(value);
  t->tracked = tracked;
  if (tracked) t->grad.assign(t->value.size(), S(0));
  return t;
}

/// Records one node per op, in execution order: the op's output tensor plus
/// the closure that pushes its gradient to the inputs.
template <class S>
class Tape {
 public:
  void record(TensorPtr<S> out, std::function<void()> fn) {
    nodes_.push_back({std::move(out), std::move(fn)});
  }

  /// Replays the tape in reverse from d(loss)/d(loss) = 1. Intermediate
  /// gradients are reset first, so leaf gradients accumulate exactly one
  /// full gradient of the loss per call.
  void backward(const TensorPtr<S>& loss) {
    if (!loss || loss->size() != 1)
      throw Error(ErrorCode::NonScalarLoss, "backward needs a scalar loss");
    if (!loss->tracked)
      throw Error(ErrorCode::NonScalarLoss, "loss is not tracked on this tape");
    for (auto& node : nodes_) node.out->zero_grad();
    loss->grad[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorPtr<S> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <class S>
bool any_tracked(std::initializer_list<const TensorPtr<S>*> ts) {
  for (auto* t : ts) {
    if (*t && (*t)->tracked) return true;
  }
  return false;
}

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

/// Dot product with a fixed 8-lane tree reduction: deterministic (the
/// summation order never depends on data or thread count) and wide enough
/// for the compiler to vectorize.
template <class S>
S dot(const S* a, const S* b, std::size_t n) {
  S lane[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
  S tail = S(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((lane[0] + lane[4]) + (lane[1] + lane[5])) +
          ((lane[2] + lane[6]) + (lane[3] + lane[7]))) +
         tail;
}

/// Plain sum with the same fixed lane layout.
template <class S>
S sum(const S* a, std::size_t n) {
  S lane[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lane[l] += a[i + l];
  S tail = S(0);
  for (; i < n; ++i) tail += a[i];
  return (((lane[0] + lane[4]) + (lane[1] + lane[5])) +
          ((lane[2] + lane[6]) + (lane[3] + lane[7]))) +
         tail;
}

/// o[v] += w0*in[v-1] + w1*in[v] + w2*in[v+1], zero-padded at both ends.
template <class S>
void shifted_triple_row(S* o, const S* in, S w0, S w1, S w2, std::size_t width) {
  if (width == 0) return;
  if (width == 1) {
    o[0] += w1 * in[0];
    return;
  }
  o[0] += w1 * in[0] + w2 * in[1];
  for (std::size_t v = 1; v + 1 < width; ++v)
    o[v] += w0 * in[v - 1] + w1 * in[v] + w2 * in[v + 1];
  o[width - 1] += w0 * in[width - 2] + w1 * in[width - 1];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense layers

/// y = x W + b with x: M x K, W: K x N, b: N (optional). Equivalent to a 1x1
/// convolution applied per row.
template <class S>
TensorPtr<S> linear(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& w,
                    const std::type_identity_t<TensorPtr<S>>& b) {
  detail::require(x->rank() == 2 && w->rank() == 2, ErrorCode::ShapeMismatch,
                  "linear expects 2-d input and weight");
  const std::size_t rows = x->shape[0], inner = x->shape[1];
  const std::size_t cols = w->shape[1];
  detail::require(w->shape[0] == inner, ErrorCode::ShapeMismatch,
                  "linear: inner dimensions disagree");
  if (b) {
    detail::require(b->rank() == 1 && b->shape[0] == cols, ErrorCode::ShapeMismatch,
                    "linear: bias must have one entry per output column");
  }

  auto out = make_tensor<S>({rows, cols});
  out->tracked = detail::any_tracked<S>({&x, &w, &b});
  if (out->tracked) out->grad.assign(out->size(), S(0));

  for (std::size_t i = 0; i < rows; ++i) {
    S* orow = &out->value[i * cols];
    if (b) {
      for (std::size_t j = 0; j < cols; ++j) orow[j] = b->value[j];
    }
    const S* xrow = &x->value[i * inner];
    for (std::size_t k = 0; k < inner; ++k) {
      const S xv = xrow[k];
      const S* wrow = &w->value[k * cols];
      for (std::size_t j = 0; j < cols; ++j) orow[j] += xv * wrow[j];
    }
  }

  if (out->tracked) {
    tape.record(out, [x, w, b, out, rows, inner, cols]() {
      for (std::size_t i = 0; i < rows; ++i) {
        const S* grow = &out->grad[i * cols];
        const S* xrow = &x->value[i * inner];
        if (x->tracked) {
          S* gx = &x->grad[i * inner];
          for (std::size_t k = 0; k < inner; ++k)
            gx[k] += detail::dot(grow, &w->value[k * cols], cols);
        }
        if (w->tracked) {
          for (std::size_t k = 0; k < inner; ++k) {
            S* gw = &w->grad[k * cols];
            const S xv = xrow[k];
            for (std::size_t j = 0; j < cols; ++j) gw[j] += xv * grow[j];
          }
        }
        if (b && b->tracked) {
          for (std::size_t j = 0; j < cols; ++j) b->grad[j] += grow[j];
        }
      }
    });
  }
  return out;
}

/// Zero-padded "same" convolution. x: B x Ci x H x W, w: Co x Ci x k x k with
/// odd k, b: Co (optional).
template <class S>
TensorPtr<S> conv2d(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& w,
                    const std::type_identity_t<TensorPtr<S>>& b) {
  detail::require(x->rank() == 4 && w->rank() == 4, ErrorCode::ShapeMismatch,
                  "conv2d expects 4-d input and weight");
  const std::size_t batch = x->shape[0], cin = x->shape[1];
  const std::size_t height = x->shape[2], width = x->shape[3];
  const std::size_t cout = w->shape[0], k = w->shape[2];
  detail::require(w->shape[1] == cin && w->shape[3] == k && k % 2 == 1,
                  ErrorCode::ShapeMismatch, "conv2d: weight must be Co x Ci x k x k, k odd");
  if (b)
    detail::require(b->rank() == 1 && b->shape[0] == cout, ErrorCode::ShapeMismatch,
                    "conv2d: bias must have Co entries");
  const long pad = static_cast<long>(k / 2);

  auto out = make_tensor<S>({batch, cout, height, width});
  out->tracked = detail::any_tracked<S>({&x, &w, &b});
  if (out->tracked) out->grad.assign(out->size(), S(0));

  const std::size_t plane = height * width;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      S* oplane = &out->value[(n * cout + co) * plane];
      if (b) {
        const S bv = b->value[co];
        for (std::size_t i = 0; i < plane; ++i) oplane[i] = bv;
      }
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* iplane = &x->value[(n * cin + ci) * plane];
        const S* wk = &w->value[((co * cin + ci) * k) * k];
        if (k == 3) {
          for (std::size_t ho = 0; ho < height; ++ho) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const long hi = static_cast<long>(ho) + static_cast<long>(ky) - 1;
              if (hi < 0 || hi >= static_cast<long>(height)) continue;
              detail::shifted_triple_row(oplane + ho * width, iplane + hi * width,
                                         wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2], width);
            }
          }
        } else {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long dy = static_cast<long>(ky) - pad;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long dx = static_cast<long>(kx) - pad;
              const S wv = wk[ky * k + kx];
              const long h0 = std::max<long>(0, -dy);
              const long h1 = std::min<long>(height, static_cast<long>(height) - dy);
              const long x0 = std::max<long>(0, -dx);
              const long x1 = std::min<long>(width, static_cast<long>(width) - dx);
              for (long h = h0; h < h1; ++h) {
                S* orow = oplane + h * width;
                const S* irow = iplane + (h + dy) * width + dx;
                for (long v = x0; v < x1; ++v) orow[v] += wv * irow[v];
              }
            }
          }
        }
      }
    }
  }

  if (out->tracked) {
    tape.record(out, [x, w, b, out, batch, cin, cout, height, width, k, pad, plane]() {
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
          const S* gplane = &out->grad[(n * cout + co) * plane];
          if (b && b->tracked) b->grad[co] += detail::sum(gplane, plane);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const S* iplane = &x->value[(n * cin + ci) * plane];
            S* gx = x->tracked ? &x->grad[(n * cin + ci) * plane] : nullptr;
            const S* wk = &w->value[((co * cin + ci) * k) * k];
            S* gw = w->tracked ? &w->grad[((co * cin + ci) * k) * k] : nullptr;
            if (gx && k == 3) {
              // d(in)[hi] gathers the kernel-flipped triple of each grad row.
              for (std::size_t hi = 0; hi < height; ++hi) {
                for (std::size_t ky = 0; ky < 3; ++ky) {
                  const long ho = static_cast<long>(hi) - static_cast<long>(ky) + 1;
                  if (ho < 0 || ho >= static_cast<long>(height)) continue;
                  detail::shifted_triple_row(gx + hi * width, gplane + ho * width,
                                             wk[ky * 3 + 2], wk[ky * 3 + 1], wk[ky * 3],
                                             width);
                }
              }
            }
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long dy = static_cast<long>(ky) - pad;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long dx = static_cast<long>(kx) - pad;
                const long h0 = std::max<long>(0, -dy);
                const long h1 = std::min<long>(height, static_cast<long>(height) - dy);
                const long x0 = std::max<long>(0, -dx);
                const long x1 = std::min<long>(width, static_cast<long>(width) - dx);
                if (gx && k != 3) {
                  const S wv = wk[ky * k + kx];
                  for (long h = h0; h < h1; ++h) {
                    const S* grow = gplane + h * width;
                    S* xrow = gx + (h + dy) * width + dx;
                    for (long v = x0; v < x1; ++v) xrow[v] += wv * grow[v];
                  }
                }
                if (gw) {
                  S acc = S(0);
                  for (long h = h0; h < h1; ++h) {
                    const S* grow = gplane + h * width;
                    const S* irow = iplane + (h + dy) * width + dx;
                    acc += detail::dot(grow + x0, irow + x0,
                                       static_cast<std::size_t>(x1 - x0));
                  }
                  gw[ky * k + kx] += acc;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// max(x, 0) elementwise; the subgradient at 0 is 0.
template <class S>
TensorPtr<S> relu(Tape<S>& tape, const TensorPtr<S>& x) {
  auto out = make_tensor<S>(x->shape);
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(out->size(), S(0));
  for (std::size_t i = 0; i < x->size(); ++i)
    out->value[i] = x->value[i] > S(0) ? x->value[i] : S(0);
  if (out->tracked) {
    tape.record(out, [x, out]() {
      for (std::size_t i = 0; i < x->size(); ++i)
        if (x->value[i] > S(0)) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

/// Elementwise square.
template <class S>
TensorPtr<S> square(Tape<S>& tape, const TensorPtr<S>& x) {
  auto out = make_tensor<S>(x->shape);
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(out->size(), S(0));
  for (std::size_t i = 0; i < x->size(); ++i) out->value[i] = x->value[i] * x->value[i];
  if (out->tracked) {
    tape.record(out, [x, out]() {
      for (std::size_t i = 0; i < x->size(); ++i)
        x->grad[i] += S(2) * x->value[i] * out->grad[i];
    });
  }
  return out;
}

/// 2x2 max-pooling with stride 2 on B x C x H x W. Gradient routes to the
/// argmax cell; ties break toward the first cell in row-major order.
template <class S>
TensorPtr<S> maxpool2x2(Tape<S>& tape, const TensorPtr<S>& x) {
  detail::require(x->rank() == 4, ErrorCode::ShapeMismatch, "maxpool2x2 expects 4-d input");
  const std::size_t batch = x->shape[0], chans = x->shape[1];
  const std::size_t height = x->shape[2], width = x->shape[3];
  detail::require(height % 2 == 0 && width % 2 == 0, ErrorCode::OddSpatialDim,
                  "maxpool2x2 needs even spatial dimensions");
  const std::size_t oh = height / 2, ow = width / 2;

  auto out = make_tensor<S>({batch, chans, oh, ow});
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(out->size(), S(0));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());

  const std::size_t plane = height * width;
  const std::size_t oplane = oh * ow;
  for (std::size_t nc = 0; nc < batch * chans; ++nc) {
    const S* in = &x->value[nc * plane];
    S* o = &out->value[nc * oplane];
    std::size_t* am = &(*argmax)[nc * oplane];
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * width + 2 * j;
        S best_val = in[best];
        const std::size_t cells[3] = {best + 1, best + width, best + width + 1};
        for (std::size_t c : cells) {
          if (in[c] > best_val) {
            best_val = in[c];
            best = c;
          }
        }
        o[i * ow + j] = best_val;
        am[i * ow + j] = nc * plane + best;
      }
    }
  }

  if (out->tracked) {
    tape.record(out, [x, out, argmax]() {
      for (std::size_t i = 0; i < out->size(); ++i)
        x->grad[(*argmax)[i]] += out->grad[i];
    });
  }
  return out;
}

/// Transposed convolution, kernel 2x2, stride 2: doubles H and W.
/// x: B x Ci x H x W, w: Ci x Co x 2 x 2, b: Co (optional).
template <class S>
TensorPtr<S> upconv2x2(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& w,
                       const std::type_identity_t<TensorPtr<S>>& b) {
  detail::require(x->rank() == 4 && w->rank() == 4, ErrorCode::ShapeMismatch,
                  "upconv2x2 expects 4-d input and weight");
  const std::size_t batch = x->shape[0], cin = x->shape[1];
  const std::size_t height = x->shape[2], width = x->shape[3];
  detail::require(w->shape[0] == cin && w->shape[2] == 2 && w->shape[3] == 2,
                  ErrorCode::ShapeMismatch, "upconv2x2: weight must be Ci x Co x 2 x 2");
  const std::size_t cout = w->shape[1];
  if (b)
    detail::require(b->rank() == 1 && b->shape[0] == cout, ErrorCode::ShapeMismatch,
                    "upconv2x2: bias must have Co entries");
  const std::size_t oh = height * 2, ow = width * 2;

  auto out = make_tensor<S>({batch, cout, oh, ow});
  out->tracked = detail::any_tracked<S>({&x, &w, &b});
  if (out->tracked) out->grad.assign(out->size(), S(0));

  const std::size_t iplane = height * width;
  const std::size_t oplane = oh * ow;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      S* o = &out->value[(n * cout + co) * oplane];
      if (b) {
        const S bv = b->value[co];
        for (std::size_t i = 0; i < oplane; ++i) o[i] = bv;
      }
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* in = &x->value[(n * cin + ci) * iplane];
        const S* wk = &w->value[(ci * cout + co) * 4];
        for (std::size_t h = 0; h < height; ++h) {
          S* orow0 = o + (2 * h) * ow;
          S* orow1 = orow0 + ow;
          const S* irow = in + h * width;
          for (std::size_t v = 0; v < width; ++v) {
            const S xv = irow[v];
            orow0[2 * v] += xv * wk[0];
            orow0[2 * v + 1] += xv * wk[1];
            orow1[2 * v] += xv * wk[2];
            orow1[2 * v + 1] += xv * wk[3];
          }
        }
      }
    }
  }

  if (out->tracked) {
    tape.record(out, [x, w, b, out, batch, cin, cout, height, width, iplane, oplane, ow]() {
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
          const S* g = &out->grad[(n * cout + co) * oplane];
          if (b && b->tracked) b->grad[co] += detail::sum(g, oplane);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const S* in = &x->value[(n * cin + ci) * iplane];
            S* gx = x->tracked ? &x->grad[(n * cin + ci) * iplane] : nullptr;
            const S* wk = &w->value[(ci * cout + co) * 4];
            S* gw = w->tracked ? &w->grad[(ci * cout + co) * 4] : nullptr;
            S acc0 = S(0), acc1 = S(0), acc2 = S(0), acc3 = S(0);
            for (std::size_t h = 0; h < height; ++h) {
              const S* grow0 = g + (2 * h) * ow;
              const S* grow1 = grow0 + ow;
              const S* irow = in + h * width;
              S* gxrow = gx ? gx + h * width : nullptr;
              for (std::size_t v = 0; v < width; ++v) {
                const S g0 = grow0[2 * v], g1 = grow0[2 * v + 1];
                const S g2 = grow1[2 * v], g3 = grow1[2 * v + 1];
                if (gxrow)
                  gxrow[v] += wk[0] * g0 + wk[1] * g1 + wk[2] * g2 + wk[3] * g3;
                if (gw) {
                  const S xv = irow[v];
                  acc0 += xv * g0;
                  acc1 += xv * g1;
                  acc2 += xv * g2;
                  acc3 += xv * g3;
                }
              }
            }
            if (gw) {
              gw[0] += acc0;
              gw[1] += acc1;
              gw[2] += acc2;
              gw[3] += acc3;
            }
          }
        }
      }
    });
  }
  return out;
}

/// Concatenates a and b along `axis`; all other dimensions must agree.
template <class S>
TensorPtr<S> concat(Tape<S>& tape, const TensorPtr<S>& a, const TensorPtr<S>& b,
                    std::size_t axis) {
  detail::require(a->rank() == b->rank() && axis < a->rank(), ErrorCode::ShapeMismatch,
                  "concat: rank mismatch");
  for (std::size_t d = 0; d < a->rank(); ++d) {
    if (d != axis)
      detail::require(a->shape[d] == b->shape[d], ErrorCode::ShapeMismatch,
                      "concat: non-axis dimensions disagree");
  }
  std::vector<std::size_t> oshape = a->shape;
  oshape[axis] += b->shape[axis];

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a->shape[d];
  for (std::size_t d = axis + 1; d < a->rank(); ++d) inner *= a->shape[d];
  const std::size_t a_block = a->shape[axis] * inner;
  const std::size_t b_block = b->shape[axis] * inner;

  auto out = make_tensor<S>(oshape);
  out->tracked = detail::any_tracked<S>({&a, &b});
  if (out->tracked) out->grad.assign(out->size(), S(0));

  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(&a->value[o * a_block], a_block, &out->value[o * (a_block + b_block)]);
    std::copy_n(&b->value[o * b_block], b_block,
                &out->value[o * (a_block + b_block) + a_block]);
  }

  if (out->tracked) {
    tape.record(out, [a, b, out, outer, a_block, b_block]() {
      for (std::size_t o = 0; o < outer; ++o) {
        const S* g = &out->grad[o * (a_block + b_block)];
        if (a->tracked) {
          S* ga = &a->grad[o * a_block];
          for (std::size_t i = 0; i < a_block; ++i) ga[i] += g[i];
        }
        if (b->tracked) {
          S* gb = &b->grad[o * b_block];
          for (std::size_t i = 0; i < b_block; ++i) gb[i] += g[i + a_block];
        }
      }
    });
  }
  return out;
}

/// Batch normalization over the channel axis (axis 1 for both M x C and
/// B x C x H x W layouts). Train mode normalizes with batch statistics and
/// updates the running buffers in place; eval mode reads the running buffers.
template <class S>
TensorPtr<S> batchnorm(Tape<S>& tape, const TensorPtr<S>& x, const TensorPtr<S>& gamma,
                       const TensorPtr<S>& beta, const TensorPtr<S>& running_mean,
                       const TensorPtr<S>& running_var, S momentum, Mode mode,
                       S eps = S(1e-5)) {
  detail::require(x->rank() == 2 || x->rank() == 4, ErrorCode::ShapeMismatch,
                  "batchnorm expects M x C or B x C x H x W input");
  const std::size_t chans = x->shape[1];
  detail::require(gamma->size() == chans && beta->size() == chans &&
                      running_mean->size() == chans && running_var->size() == chans,
                  ErrorCode::ShapeMismatch, "batchnorm: per-channel parameter size mismatch");
  const std::size_t count = x->size() / chans;  // reduction count per channel
  detail::require(count > 0, ErrorCode::ShapeMismatch, "batchnorm on empty tensor");

  // Per-channel element walk shared by the 2-d and 4-d layouts.
  const bool flat = x->rank() == 2;
  const std::size_t batch = flat ? x->shape[0] : x->shape[0];
  const std::size_t plane = flat ? 1 : x->shape[2] * x->shape[3];
  auto for_channel = [&](std::size_t c, auto&& fn) {
    if (flat) {
      for (std::size_t m = 0; m < batch; ++m) fn(m * chans + c);
    } else {
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t base = (n * chans + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) fn(base + i);
      }
    }
  };

  auto mean = std::make_shared<std::vector<S>>(chans, S(0));
  auto inv_std = std::make_shared<std::vector<S>>(chans, S(0));

  if (mode == Mode::kTrain) {
    for (std::size_t c = 0; c < chans; ++c) {
      S sum = S(0);
      for_channel(c, [&](std::size_t i) { sum += x->value[i]; });
      const S mu = sum / static_cast<S>(count);
      S var_sum = S(0);
      for_channel(c, [&](std::size_t i) {
        const S d = x->value[i] - mu;
        var_sum += d * d;
      });
      const S var = var_sum / static_cast<S>(count);  // biased
      (*mean)[c] = mu;
      (*inv_std)[c] = S(1) / std::sqrt(var + eps);
      running_mean->value[c] = momentum * running_mean->value[c] + (S(1) - momentum) * mu;
      running_var->value[c] = momentum * running_var->value[c] + (S(1) - momentum) * var;
    }
  } else {
    for (std::size_t c = 0; c < chans; ++c) {
      (*mean)[c] = running_mean->value[c];
      (*inv_std)[c] = S(1) / std::sqrt(running_var->value[c] + eps);
    }
  }

  auto out = make_tensor<S>(x->shape);
  out->tracked = detail::any_tracked<S>({&x, &gamma, &beta});
  if (out->tracked) out->grad.assign(out->size(), S(0));
  for (std::size_t c = 0; c < chans; ++c) {
    const S mu = (*mean)[c], istd = (*inv_std)[c];
    const S g = gamma->value[c], bv = beta->value[c];
    for_channel(c, [&](std::size_t i) {
      out->value[i] = (x->value[i] - mu) * istd * g + bv;
    });
  }

  if (out->tracked) {
    const bool train = mode == Mode::kTrain;
    tape.record(out, [x, gamma, beta, out, mean, inv_std, chans, count, batch, plane, flat,
                 train]() {
      auto for_channel = [&](std::size_t c, auto&& fn) {
        if (flat) {
          for (std::size_t m = 0; m < batch; ++m) fn(m * chans + c);
        } else {
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * chans + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) fn(base + i);
          }
        }
      };
      for (std::size_t c = 0; c < chans; ++c) {
        const S mu = (*mean)[c], istd = (*inv_std)[c];
        const S g = gamma->value[c];
        S sum_dy = S(0), sum_dy_xhat = S(0);
        for_channel(c, [&](std::size_t i) {
          const S dy = out->grad[i];
          sum_dy += dy;
          sum_dy_xhat += dy * (x->value[i] - mu) * istd;
        });
        if (gamma->tracked) gamma->grad[c] += sum_dy_xhat;
        if (beta->tracked) beta->grad[c] += sum_dy;
        if (x->tracked) {
          if (train) {
            const S inv_count = S(1) / static_cast<S>(count);
            for_channel(c, [&](std::size_t i) {
              const S xhat = (x->value[i] - mu) * istd;
              x->grad[i] += g * istd *
                            (out->grad[i] - sum_dy * inv_count - xhat * sum_dy_xhat * inv_count);
            });
          } else {
            for_channel(c, [&](std::size_t i) { x->grad[i] += g * istd * out->grad[i]; });
          }
        }
      }
    });
  }
  return out;
}

/// Elementwise max across the set axis (second to last): ... x S x F becomes
/// ... x F. Gradient routes to the argmax; ties break toward the lowest slot.
template <class S>
TensorPtr<S> max_over_set(Tape<S>& tape, const TensorPtr<S>& x) {
  detail::require(x->rank() >= 2, ErrorCode::ShapeMismatch,
                  "max_over_set expects rank >= 2");
  const std::size_t feat = x->shape[x->rank() - 1];
  const std::size_t set = x->shape[x->rank() - 2];
  detail::require(set >= 1, ErrorCode::ShapeMismatch, "max_over_set: empty set axis");
  std::size_t outer = 1;
  for (std::size_t d = 0; d + 2 < x->rank(); ++d) outer *= x->shape[d];

  std::vector<std::size_t> oshape(x->shape.begin(), x->shape.end() - 2);
  oshape.push_back(feat);
  auto out = make_tensor<S>(oshape);
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(out->size(), S(0));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());

  for (std::size_t o = 0; o < outer; ++o) {
    const S* block = &x->value[o * set * feat];
    S* orow = &out->value[o * feat];
    std::size_t* am = &(*argmax)[o * feat];
    for (std::size_t f = 0; f < feat; ++f) {
      S best = block[f];
      std::size_t best_s = 0;
      for (std::size_t s = 1; s < set; ++s) {
        if (block[s * feat + f] > best) {
          best = block[s * feat + f];
          best_s = s;
        }
      }
      orow[f] = best;
      am[f] = o * set * feat + best_s * feat + f;
    }
  }

  if (out->tracked) {
    tape.record(out, [x, out, argmax]() {
      for (std::size_t i = 0; i < out->size(); ++i)
        x->grad[(*argmax)[i]] += out->grad[i];
    });
  }
  return out;
}

/// Pixel-wise softmax over the channel axis (axis 0 for K x H x W, axis 1 for
/// B x K x H x W), computed with per-pixel max subtraction.
template <class S>
TensorPtr<S> softmax_channels(Tape<S>& tape, const TensorPtr<S>& x) {
  detail::require(x->rank() == 3 || x->rank() == 4, ErrorCode::ShapeMismatch,
                  "softmax_channels expects K x H x W or B x K x H x W");
  const bool batched = x->rank() == 4;
  const std::size_t batch = batched ? x->shape[0] : 1;
  const std::size_t classes = batched ? x->shape[1] : x->shape[0];
  const std::size_t plane = batched ? x->shape[2] * x->shape[3] : x->shape[1] * x->shape[2];

  auto out = make_tensor<S>(x->shape);
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(out->size(), S(0));

  for (std::size_t n = 0; n < batch; ++n) {
    const S* in = &x->value[n * classes * plane];
    S* o = &out->value[n * classes * plane];
    for (std::size_t p = 0; p < plane; ++p) {
      S max_v = in[p];
      for (std::size_t c = 1; c < classes; ++c) max_v = std::max(max_v, in[c * plane + p]);
      S denom = S(0);
      for (std::size_t c = 0; c < classes; ++c) {
        const S e = std::exp(in[c * plane + p] - max_v);
        o[c * plane + p] = e;
        denom += e;
      }
      const S inv = S(1) / denom;
      for (std::size_t c = 0; c < classes; ++c) o[c * plane + p] *= inv;
    }
  }

  if (out->tracked) {
    tape.record(out, [x, out, batch, classes, plane]() {
      for (std::size_t n = 0; n < batch; ++n) {
        const S* p = &out->value[n * classes * plane];
        const S* g = &out->grad[n * classes * plane];
        S* gx = &x->grad[n * classes * plane];
        for (std::size_t px = 0; px < plane; ++px) {
          S dot = S(0);
          for (std::size_t c = 0; c < classes; ++c)
            dot += p[c * plane + px] * g[c * plane + px];
          for (std::size_t c = 0; c < classes; ++c)
            gx[c * plane + px] += p[c * plane + px] * (g[c * plane + px] - dot);
        }
      }
    });
  }
  return out;
}

/// Copy with a new shape of equal size.
template <class S>
TensorPtr<S> reshape(Tape<S>& tape, const TensorPtr<S>& x,
                     std::vector<std::size_t> new_shape) {
  detail::require(shape_size(new_shape) == x->size(), ErrorCode::ShapeMismatch,
                  "reshape size mismatch");
  auto out = make_tensor<S>(std::move(new_shape), x->value);
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(out->size(), S(0));
  if (out->tracked) {
    tape.record(out, [x, out]() {
      for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

/// Axis permutation: out[idx] = x[idx o perm].
template <class S>
TensorPtr<S> permute(Tape<S>& tape, const TensorPtr<S>& x,
                     const std::vector<std::size_t>& perm) {
  detail::require(perm.size() == x->rank() && x->rank() >= 1, ErrorCode::ShapeMismatch,
                  "permute: axis list must match rank");
  const std::size_t rank = x->rank();
  std::vector<std::size_t> oshape(rank);
  for (std::size_t d = 0; d < rank; ++d) oshape[d] = x->shape[perm[d]];

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank - 1; d > 0; --d)
    in_strides[d - 1] = in_strides[d] * x->shape[d];

  // Stride of output axis d in the input layout.
  std::vector<std::size_t> walk(rank);
  for (std::size_t d = 0; d < rank; ++d) walk[d] = in_strides[perm[d]];

  auto out = make_tensor<S>(oshape);
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(out->size(), S(0));
  auto mapping = std::make_shared<std::vector<std::size_t>>(x->size());

  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < out->size(); ++o) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * walk[d];
    out->value[o] = x->value[src];
    (*mapping)[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < oshape[d]) break;
      idx[d] = 0;
    }
  }

  if (out->tracked) {
    tape.record(out, [x, out, mapping]() {
      for (std::size_t o = 0; o < out->size(); ++o)
        x->grad[(*mapping)[o]] += out->grad[o];
    });
  }
  return out;
}

/// Scalar sum of all elements.
template <class S>
TensorPtr<S> reduce_sum(Tape<S>& tape, const TensorPtr<S>& x) {
  auto out = make_tensor<S>({1});
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(1, S(0));
  S acc = S(0);
  for (std::size_t i = 0; i < x->size(); ++i) acc += x->value[i];
  out->value[0] = acc;
  if (out->tracked) {
    tape.record(out, [x, out]() {
      const S g = out->grad[0];
      for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += g;
    });
  }
  return out;
}

/// Scalar dot product with fixed coefficients; the test harness uses it to
/// reduce arbitrary outputs to a differentiable scalar.
template <class S>
TensorPtr<S> weighted_sum(Tape<S>& tape, const TensorPtr<S>& x,
                          std::shared_ptr<std::vector<S>> coeffs) {
  detail::require(coeffs && coeffs->size() == x->size(), ErrorCode::ShapeMismatch,
                  "weighted_sum: coefficient count mismatch");
  auto out = make_tensor<S>({1});
  out->tracked = x->tracked;
  if (out->tracked) out->grad.assign(1, S(0));
  S acc = S(0);
  for (std::size_t i = 0; i < x->size(); ++i) acc += x->value[i] * (*coeffs)[i];
  out->value[0] = acc;
  if (out->tracked) {
    tape.record(out, [x, out, coeffs]() {
      const S g = out->grad[0];
      for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += g * (*coeffs)[i];
    });
  }
  return out;
}

/// Masked weighted focal loss over softmax probabilities.
///   E = sum over valid pixels of  -w(x) (1 - p_l(x))^gamma log(p_l(x))
/// probs: K x H x W or B x K x H x W; labels/mask/weights: one entry per pixel
/// in batch-row-major order. The sum runs over all pixels (no averaging).
template <class S>
TensorPtr<S> focal_loss(Tape<S>& tape, const TensorPtr<S>& probs,
                        const std::vector<int32_t>& labels,
                        const std::vector<uint8_t>& mask, const std::vector<S>& weights,
                        S gamma) {
  detail::require(probs->rank() == 3 || probs->rank() == 4, ErrorCode::ShapeMismatch,
                  "focal_loss expects K x H x W or B x K x H x W probabilities");
  const bool batched = probs->rank() == 4;
  const std::size_t batch = batched ? probs->shape[0] : 1;
  const std::size_t classes = batched ? probs->shape[1] : probs->shape[0];
  const std::size_t plane =
      batched ? probs->shape[2] * probs->shape[3] : probs->shape[1] * probs->shape[2];
  const std::size_t pixels = batch * plane;
  detail::require(labels.size() == pixels && mask.size() == pixels && weights.size() == pixels,
                  ErrorCode::ShapeMismatch, "focal_loss: per-pixel arrays do not match probs");

  // Keeps log and division finite if a probability underflows to zero, and
  // (1 - p) nonnegative when p rounds a hair above one.
  const S floor = std::numeric_limits<S>::min();
  auto clamp01_gap = [](S p) { return p >= S(1) ? S(0) : S(1) - p; };

  auto out = make_tensor<S>({1});
  out->tracked = probs->tracked;
  if (out->tracked) out->grad.assign(1, S(0));

  S total = S(0);
  for (std::size_t n = 0; n < batch; ++n) {
    const S* p = &probs->value[n * classes * plane];
    for (std::size_t px = 0; px < plane; ++px) {
      const std::size_t pixel = n * plane + px;
      if (!mask[pixel]) continue;
      const int32_t label = labels[pixel];
      detail::require(label >= 0 && static_cast<std::size_t>(label) < classes,
                      ErrorCode::ShapeMismatch, "focal_loss: label out of range");
      const S pl = p[static_cast<std::size_t>(label) * plane + px];
      if (!std::isfinite(pl))
        throw Error(ErrorCode::NonFiniteProbability,
                    "probability at pixel " + std::to_string(pixel));
      const S pc = std::max(pl, floor);
      const S focus = gamma == S(0) ? S(1) : std::pow(clamp01_gap(pl), gamma);
      total += -weights[pixel] * focus * std::log(pc);
    }
  }
  out->value[0] = total;

  if (out->tracked) {
    // The per-pixel arrays are copied so the tape never outlives its inputs.
    auto lab = std::make_shared<std::vector<int32_t>>(labels);
    auto msk = std::make_shared<std::vector<uint8_t>>(mask);
    auto wts = std::make_shared<std::vector<S>>(weights);
    tape.record(out, [probs, out, lab, msk, wts, gamma, batch, classes, plane, floor,
                 clamp01_gap]() {
      const S g = out->grad[0];
      for (std::size_t n = 0; n < batch; ++n) {
        const S* p = &probs->value[n * classes * plane];
        S* gp = &probs->grad[n * classes * plane];
        for (std::size_t px = 0; px < plane; ++px) {
          const std::size_t pixel = n * plane + px;
          if (!(*msk)[pixel]) continue;
          const std::size_t label = static_cast<std::size_t>((*lab)[pixel]);
          const S pl = p[label * plane + px];
          const S pc = std::max(pl, floor);
          const S gap = clamp01_gap(pl);
          // d/dp [-w (1-p)^g log p] = w g (1-p)^(g-1) log p - w (1-p)^g / p
          S deriv = -(*wts)[pixel] * std::pow(gap, gamma) / pc;
          if (gamma != S(0) && gap > S(0))
            deriv += (*wts)[pixel] * gamma * std::pow(gap, gamma - S(1)) * std::log(pc);
          gp[label * plane + px] += g * deriv;
        }
      }
    });
  }
  return out;
}

}  // namespace lidarseg::ad

#endif  // LIDARSEG_AUTODIFF_HPP
