#include "core/tape.hpp"

#include <algorithm>
#include <cmath>

namespace rfe {

namespace {

// out[m,n] += a[m,k] * b[k,n]; loops ordered for contiguous access.
void matmul_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m,n] += a[k,m]^T * b[k,n]
void matmul_at_acc(const double* a, const double* b, double* out, std::size_t k, std::size_t m,
                   std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m,k] += a[m,n] * b[k,n]^T
void matmul_bt_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
                   std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* orow = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      orow[p] += s;
    }
  }
}

double stable_sigmoid(double v) {
  if (v >= 0.0) {
    return 1.0 / (1.0 + std::exp(-v));
  }
  double e = std::exp(v);
  return e / (1.0 + e);
}

struct Conv2dDims {
  std::size_t ci, h, w, co, kh, kw, oh, ow;
};

Conv2dDims conv2d_dims(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 3 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected input [C,H,W] and kernel [Co,Ci,kh,kw], got " +
                         shape_str(input.shape) + " and " + shape_str(kernel.shape));
  }
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  Conv2dDims d;
  d.ci = input.shape[0];
  d.h = input.shape[1];
  d.w = input.shape[2];
  d.co = kernel.shape[0];
  d.kh = kernel.shape[2];
  d.kw = kernel.shape[3];
  if (kernel.shape[1] != d.ci) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.shape[1]) +
                         " input channels, input has " + std::to_string(d.ci));
  }
  std::size_t ph = d.h + 2 * static_cast<std::size_t>(padding);
  std::size_t pw = d.w + 2 * static_cast<std::size_t>(padding);
  if (d.kh > ph || d.kw > pw) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape) +
                         " larger than padded input " + shape_str(input.shape));
  }
  d.oh = (ph - d.kh) / static_cast<std::size_t>(stride) + 1;
  d.ow = (pw - d.kw) / static_cast<std::size_t>(stride) + 1;
  return d;
}

}  // namespace

Value Tape::emplace(Tensor v, bool requires_grad, std::function<void(Tape&)> backprop,
                    Parameter* leaf) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = requires_grad && grads_enabled_;
  if (n.requires_grad) n.grad = Tensor::zeros(n.value.shape);
  n.leaf = leaf;
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Value v) const { return nodes_.at(v.idx); }
Tape::Node& Tape::node(Value v) { return nodes_.at(v.idx); }

const Tensor& Tape::grad(Value v) const {
  const Node& n = node(v);
  if (!n.requires_grad) {
    throw InvalidArgument("node has no gradient (requires_grad is false)");
  }
  return n.grad;
}

Value Tape::constant(Tensor v) { return emplace(std::move(v), false); }

Value Tape::param(const Parameter& p) {
  Parameter* mp = const_cast<Parameter*>(&p);
  return emplace(p.value, p.trainable, nullptr, mp);
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(ta.shape) + " and " +
                         shape_str(tb.shape));
  }
  std::size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor out({m, n});
  matmul_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  bool rg = node(a).requires_grad || node(b).requires_grad;
  std::uint32_t ai = a.idx, bi = b.idx;
  return emplace(std::move(out), rg, [ai, bi, m, k, n](Tape& t) {
    const double* g = t.nodes_[t.cur_].grad.data.data();
    Node& an = t.nodes_[ai];
    Node& bn = t.nodes_[bi];
    if (an.requires_grad) {
      matmul_bt_acc(g, bn.value.data.data(), an.grad.data.data(), m, n, k);
    }
    if (bn.requires_grad) {
      matmul_at_acc(an.value.data.data(), g, bn.grad.data.data(), m, k, n);
    }
  });
}

Value Tape::add(Value a, Value b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  require_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  std::uint32_t ai = a.idx, bi = b.idx;
  return emplace(std::move(out), rg, [ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    for (std::uint32_t pi : {ai, bi}) {
      Node& pn = t.nodes_[pi];
      if (!pn.requires_grad) continue;
      for (std::size_t i = 0; i < g.size(); ++i) pn.grad[i] += g[i];
    }
  });
}

Value Tape::mul(Value a, Value b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  require_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  std::uint32_t ai = a.idx, bi = b.idx;
  return emplace(std::move(out), rg, [ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    Node& an = t.nodes_[ai];
    Node& bn = t.nodes_[bi];
    if (an.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] += g[i] * an.value[i];
    }
  });
}

Value Tape::relu(Value a) {
  Tensor out = node(a).value;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  std::uint32_t ai = a.idx;
  return emplace(std::move(out), node(a).requires_grad, [ai](Tape& t) {
    Node& self = t.nodes_[t.cur_];
    Node& an = t.nodes_[ai];
    if (!an.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an.value[i] > 0.0) an.grad[i] += self.grad[i];
    }
  });
}

Value Tape::sigmoid(Value a) {
  Tensor out = node(a).value;
  for (double& v : out.data) v = stable_sigmoid(v);
  std::uint32_t ai = a.idx;
  return emplace(std::move(out), node(a).requires_grad, [ai](Tape& t) {
    Node& self = t.nodes_[t.cur_];
    Node& an = t.nodes_[ai];
    if (!an.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double s = self.value[i];
      an.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Value Tape::scale(Value a, double c) {
  Tensor out = node(a).value;
  for (double& v : out.data) v *= c;
  std::uint32_t ai = a.idx;
  return emplace(std::move(out), node(a).requires_grad, [ai, c](Tape& t) {
    Node& self = t.nodes_[t.cur_];
    Node& an = t.nodes_[ai];
    if (!an.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * c;
  });
}

Value Tape::bias_add(Value m, Value bias) {
  const Tensor& tm = node(m).value;
  const Tensor& tb = node(bias).value;
  if (tb.rank() != 1) {
    throw DimensionError("bias_add: bias must be 1-D, got " + shape_str(tb.shape));
  }
  std::size_t n = tb.shape[0];
  std::size_t rows;
  if (tm.rank() == 2 && tm.shape[1] == n) {
    rows = tm.shape[0];
  } else if (tm.rank() == 1 && tm.shape[0] == n) {
    rows = 1;
  } else {
    throw DimensionError("bias_add: shape mismatch " + shape_str(tm.shape) + " vs " +
                         shape_str(tb.shape));
  }
  Tensor out = tm;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += tb[j];
  }
  bool rg = node(m).requires_grad || node(bias).requires_grad;
  std::uint32_t mi = m.idx, bi = bias.idx;
  return emplace(std::move(out), rg, [mi, bi, rows, n](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    Node& mn = t.nodes_[mi];
    Node& bn = t.nodes_[bi];
    if (mn.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) mn.grad[i] += g[i];
    }
    if (bn.requires_grad) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) bn.grad[j] += g[r * n + j];
      }
    }
  });
}

Value Tape::conv2d(Value input, Value kernel, int stride, int padding) {
  return conv2d(input, kernel, Value{UINT32_MAX}, stride, padding);
}

Value Tape::conv2d(Value input, Value kernel, Value bias, int stride, int padding) {
  bool has_bias = bias.idx != UINT32_MAX;
  const Tensor& x = node(input).value;
  const Tensor& k = node(kernel).value;
  Conv2dDims d = conv2d_dims(x, k, stride, padding);
  if (has_bias) {
    const Tensor& b = node(bias).value;
    if (b.rank() != 1 || b.shape[0] != d.co) {
      throw DimensionError("conv2d: bias must be [" + std::to_string(d.co) + "], got " +
                           shape_str(b.shape));
    }
  }
  std::size_t s = static_cast<std::size_t>(stride);
  long p = padding;
  Tensor out({d.co, d.oh, d.ow});
  for (std::size_t co = 0; co < d.co; ++co) {
    double bv = has_bias ? node(bias).value[co] : 0.0;
    for (std::size_t oy = 0; oy < d.oh; ++oy) {
      for (std::size_t ox = 0; ox < d.ow; ++ox) {
        double acc = bv;
        long y0 = static_cast<long>(oy * s) - p;
        long x0 = static_cast<long>(ox * s) - p;
        for (std::size_t ci = 0; ci < d.ci; ++ci) {
          for (std::size_t ky = 0; ky < d.kh; ++ky) {
            long iy = y0 + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              long ix = x0 + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
              acc += x[(ci * d.h + iy) * d.w + ix] *
                     k[((co * d.ci + ci) * d.kh + ky) * d.kw + kx];
            }
          }
        }
        out[(co * d.oh + oy) * d.ow + ox] = acc;
      }
    }
  }
  bool rg = node(input).requires_grad || node(kernel).requires_grad ||
            (has_bias && node(bias).requires_grad);
  std::uint32_t xi = input.idx, ki = kernel.idx, bi = has_bias ? bias.idx : 0;
  return emplace(std::move(out), rg, [xi, ki, bi, has_bias, d, s, p](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    Node& xn = t.nodes_[xi];
    Node& kn = t.nodes_[ki];
    bool gx = xn.requires_grad;
    bool gk = kn.requires_grad;
    bool gb = has_bias && t.nodes_[bi].requires_grad;
    for (std::size_t co = 0; co < d.co; ++co) {
      for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          double gv = g[(co * d.oh + oy) * d.ow + ox];
          if (gv == 0.0) continue;
          if (gb) t.nodes_[bi].grad[co] += gv;
          if (!gx && !gk) continue;
          long y0 = static_cast<long>(oy * s) - p;
          long x0 = static_cast<long>(ox * s) - p;
          for (std::size_t ci = 0; ci < d.ci; ++ci) {
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              long iy = y0 + static_cast<long>(ky);
              if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                long ix = x0 + static_cast<long>(kx);
                if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
                std::size_t xoff = (ci * d.h + iy) * d.w + ix;
                std::size_t koff = ((co * d.ci + ci) * d.kh + ky) * d.kw + kx;
                if (gx) xn.grad[xoff] += gv * kn.value[koff];
                if (gk) kn.grad[koff] += gv * xn.value[xoff];
              }
            }
          }
        }
      }
    }
  });
}

Value Tape::maxpool2d(Value input, int window, int stride) {
  const Tensor& x = node(input).value;
  if (x.rank() != 3) {
    throw DimensionError("maxpool2d: expected input [C,H,W], got " + shape_str(x.shape));
  }
  if (window < 1 || stride < 1) throw DimensionError("maxpool2d: window and stride must be >= 1");
  std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  std::size_t win = static_cast<std::size_t>(window);
  std::size_t s = static_cast<std::size_t>(stride);
  if (win > h || win > w) {
    throw DimensionError("maxpool2d: window " + std::to_string(win) + " exceeds input " +
                         shape_str(x.shape));
  }
  std::size_t oh = (h - win) / s + 1;
  std::size_t ow = (w - win) / s + 1;
  Tensor out({c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ci * h + oy * s) * w + ox * s;
        double bv = x[best];
        for (std::size_t ky = 0; ky < win; ++ky) {
          for (std::size_t kx = 0; kx < win; ++kx) {
            std::size_t off = (ci * h + oy * s + ky) * w + ox * s + kx;
            if (x[off] > bv) {  // strict: ties keep the first in row-major scan
              bv = x[off];
              best = off;
            }
          }
        }
        std::size_t o = (ci * oh + oy) * ow + ox;
        out[o] = bv;
        argmax[o] = best;
      }
    }
  }
  std::uint32_t xi = input.idx;
  return emplace(std::move(out), node(input).requires_grad,
                 [xi, argmax = std::move(argmax)](Tape& t) {
                   const Tensor& g = t.nodes_[t.cur_].grad;
                   Node& xn = t.nodes_[xi];
                   if (!xn.requires_grad) return;
                   for (std::size_t i = 0; i < g.size(); ++i) xn.grad[argmax[i]] += g[i];
                 });
}

Value Tape::global_avg_pool(Value input) {
  const Tensor& x = node(input).value;
  if (x.rank() != 3) {
    throw DimensionError("global_avg_pool: expected input [C,H,W], got " + shape_str(x.shape));
  }
  std::size_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
  Tensor out({c});
  for (std::size_t ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x[ci * hw + i];
    out[ci] = s / static_cast<double>(hw);
  }
  std::uint32_t xi = input.idx;
  return emplace(std::move(out), node(input).requires_grad, [xi, c, hw](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    Node& xn = t.nodes_[xi];
    if (!xn.requires_grad) return;
    double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t i = 0; i < hw; ++i) xn.grad[ci * hw + i] += g[ci] * inv;
    }
  });
}

Value Tape::reshape(Value a, Shape s) {
  const Tensor& ta = node(a).value;
  if (shape_numel(s) != ta.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(ta.shape) + " as " + shape_str(s));
  }
  Tensor out(std::move(s), ta.data);
  std::uint32_t ai = a.idx;
  return emplace(std::move(out), node(a).requires_grad, [ai](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    Node& an = t.nodes_[ai];
    if (!an.requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
  });
}

Value Tape::concat(Value a, Value b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  Tensor out;
  std::size_t rows, na, nb;
  if (ta.rank() == 1 && tb.rank() == 1) {
    rows = 1;
    na = ta.shape[0];
    nb = tb.shape[0];
    out = Tensor({na + nb});
  } else if (ta.rank() == 2 && tb.rank() == 2 && ta.shape[0] == tb.shape[0]) {
    rows = ta.shape[0];
    na = ta.shape[1];
    nb = tb.shape[1];
    out = Tensor({rows, na + nb});
  } else {
    throw DimensionError("concat: incompatible shapes " + shape_str(ta.shape) + " and " +
                         shape_str(tb.shape));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < na; ++j) out[r * (na + nb) + j] = ta[r * na + j];
    for (std::size_t j = 0; j < nb; ++j) out[r * (na + nb) + na + j] = tb[r * nb + j];
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  std::uint32_t ai = a.idx, bi = b.idx;
  return emplace(std::move(out), rg, [ai, bi, rows, na, nb](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    Node& an = t.nodes_[ai];
    Node& bn = t.nodes_[bi];
    for (std::size_t r = 0; r < rows; ++r) {
      if (an.requires_grad) {
        for (std::size_t j = 0; j < na; ++j) an.grad[r * na + j] += g[r * (na + nb) + j];
      }
      if (bn.requires_grad) {
        for (std::size_t j = 0; j < nb; ++j) bn.grad[r * nb + j] += g[r * (na + nb) + na + j];
      }
    }
  });
}

Value Tape::stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  std::size_t n = node(rows[0]).value.size();
  bool rg = false;
  for (Value v : rows) {
    const Tensor& tv = node(v).value;
    if (tv.rank() != 1 || tv.shape[0] != n) {
      throw DimensionError("stack_rows: expected 1-D rows of length " + std::to_string(n) +
                           ", got " + shape_str(tv.shape));
    }
    rg = rg || node(v).requires_grad;
  }
  Tensor out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor& tv = node(rows[r]).value;
    std::copy(tv.data.begin(), tv.data.end(), out.data.begin() + r * n);
  }
  std::vector<std::uint32_t> idx(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) idx[r] = rows[r].idx;
  return emplace(std::move(out), rg, [idx = std::move(idx), n](Tape& t) {
    const Tensor& g = t.nodes_[t.cur_].grad;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      Node& pn = t.nodes_[idx[r]];
      if (!pn.requires_grad) continue;
      for (std::size_t j = 0; j < n; ++j) pn.grad[j] += g[r * n + j];
    }
  });
}

Value Tape::mse_sum(Value a, Value b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  require_same_shape(ta, tb, "mse_sum");
  if (ta.rank() < 1 || ta.rank() > 2) {
    throw DimensionError("mse_sum: expected 1-D or 2-D tensors, got " + shape_str(ta.shape));
  }
  std::size_t batch = ta.rank() == 2 ? ta.shape[0] : 1;
  double inv_batch = 1.0 / static_cast<double>(batch);
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    double d = ta[i] - tb[i];
    acc += d * d;
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  std::uint32_t ai = a.idx, bi = b.idx;
  return emplace(Tensor::scalar(acc * inv_batch), rg, [ai, bi, inv_batch](Tape& t) {
    double g = t.nodes_[t.cur_].grad[0];
    Node& an = t.nodes_[ai];
    Node& bn = t.nodes_[bi];
    for (std::size_t i = 0; i < an.value.size(); ++i) {
      double d = 2.0 * inv_batch * (an.value[i] - bn.value[i]) * g;
      if (an.requires_grad) an.grad[i] += d;
      if (bn.requires_grad) bn.grad[i] -= d;
    }
  });
}

double Tape::ce_row(const double* logits, std::size_t m, std::size_t target,
                    const std::vector<std::uint8_t>& mask, std::vector<double>& probs) const {
  if (!mask.empty() && mask.size() != m) {
    throw DimensionError("cross_entropy: mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(m) + " logits");
  }
  if (target >= m) {
    throw InvalidArgument("cross_entropy: target " + std::to_string(target) + " out of range");
  }
  auto masked = [&](std::size_t i) { return !mask.empty() && mask[i] != 0; };
  if (masked(target)) {
    throw InvalidArgument("cross_entropy: target " + std::to_string(target) + " is masked");
  }
  std::size_t best = m;
  for (std::size_t i = 0; i < m; ++i) {
    if (masked(i)) continue;
    if (best == m || logits[i] > logits[best]) best = i;
  }
  if (best == m) throw InvalidArgument("cross_entropy: empty support, all units masked");
  // log-sum-exp via max shift; log1p keeps the loss accurate when one logit dominates.
  double mx = logits[best];
  double rest = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (masked(i) || i == best) continue;
    rest += std::exp(logits[i] - mx);
  }
  double lse = mx + std::log1p(rest);
  double denom = 1.0 + rest;
  probs.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (masked(i)) continue;
    probs[i] = std::exp(logits[i] - mx) / denom;
  }
  return lse - logits[target];
}

Value Tape::masked_softmax_cross_entropy(Value logits, std::size_t target,
                                         const std::vector<std::uint8_t>& mask) {
  const Tensor& z = node(logits).value;
  if (z.rank() != 1) {
    throw DimensionError("masked_softmax_cross_entropy: expected 1-D logits, got " +
                         shape_str(z.shape));
  }
  std::vector<double> probs;
  double loss = ce_row(z.data.data(), z.shape[0], target, mask, probs);
  std::uint32_t zi = logits.idx;
  return emplace(Tensor::scalar(loss), node(logits).requires_grad,
                 [zi, target, probs = std::move(probs)](Tape& t) {
                   double g = t.nodes_[t.cur_].grad[0];
                   Node& zn = t.nodes_[zi];
                   if (!zn.requires_grad) return;
                   // probs is exactly 0 at masked units and target is never
                   // masked, so masked positions receive exactly zero.
                   for (std::size_t i = 0; i < probs.size(); ++i) {
                     zn.grad[i] += g * (probs[i] - (i == target ? 1.0 : 0.0));
                   }
                 });
}

Value Tape::cross_entropy_mean(Value logits, const std::vector<std::size_t>& targets,
                               const std::vector<std::uint8_t>& mask) {
  const Tensor& z = node(logits).value;
  if (z.rank() != 2) {
    throw DimensionError("cross_entropy_mean: expected [B,M] logits, got " + shape_str(z.shape));
  }
  std::size_t batch = z.shape[0], m = z.shape[1];
  if (targets.size() != batch) {
    throw DimensionError("cross_entropy_mean: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(batch));
  }
  std::vector<double> probs(batch * m);
  std::vector<double> row;
  double loss = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    loss += ce_row(z.data.data() + r * m, m, targets[r], mask, row);
    std::copy(row.begin(), row.end(), probs.begin() + r * m);
  }
  loss /= static_cast<double>(batch);
  std::uint32_t zi = logits.idx;
  return emplace(Tensor::scalar(loss), node(logits).requires_grad,
                 [zi, targets, probs = std::move(probs), batch, m](Tape& t) {
                   double g = t.nodes_[t.cur_].grad[0] / static_cast<double>(batch);
                   Node& zn = t.nodes_[zi];
                   if (!zn.requires_grad) return;
                   for (std::size_t r = 0; r < batch; ++r) {
                     for (std::size_t i = 0; i < m; ++i) {
                       zn.grad[r * m + i] +=
                           g * (probs[r * m + i] - (i == targets[r] ? 1.0 : 0.0));
                     }
                   }
                 });
}

void Tape::backward(Value loss) {
  Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(ln.value.shape));
  }
  if (!ln.requires_grad) return;
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad.fill(0.0);
  }
  ln.grad[0] = 1.0;
  for (std::size_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backprop) {
      cur_ = static_cast<std::uint32_t>(i);
      n.backprop(*this);
    } else if (n.leaf && n.leaf->trainable) {
      for (std::size_t j = 0; j < n.grad.size(); ++j) n.leaf->grad[j] += n.grad[j];
    }
  }
}

}  // namespace rfe
