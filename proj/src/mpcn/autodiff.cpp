#include "mpcn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mpcn {

namespace {

void require_same_tape(const void* a, const void* b, const char* op) {
  if (a != b) throw UsageError(std::string(op) + ": operands belong to different tapes");
}

template <typename T>
void require_rank(const Tensor<T>& t, int64_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got shape " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

// --- Tape -------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return add_node(std::move(value), requires_grad, nullptr);
}

template <typename T>
Var<T> Tape<T>::add_node(Tensor<T> value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
  if (v.tape != this || v.id < 0 || v.id >= size())
    throw UsageError("tape: variable does not belong to this tape");
  return nodes_[static_cast<size_t>(v.id)].value;
}

template <typename T>
bool Tape<T>::requires_grad(Var<T> v) const {
  return nodes_[static_cast<size_t>(v.id)].requires_grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw UsageError("backward: loss is not on this tape");
  if (backward_done_) throw UsageError("backward: tape already swept; record a new forward pass");
  const Tensor<T>& lv = value(loss);
  if (lv.numel() != 1)
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  backward_done_ = true;
  grad_buffer(loss.id).at(0) = T(1);
  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

// --- op helpers ---------------------------------------------------------------

namespace {

// Accumulate contribution produced by `fn(grad_buffer)` into parent p if it
// requires grad.
template <typename T, typename Fn>
void accum_into(Tape<T>& tape, Var<T> p, Fn&& fn) {
  if (!tape.requires_grad(p)) return;
  fn(tape.grad_buffer(p.id));
}

}  // namespace

// --- matmul / transpose -------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a.tape, b.tape, "matmul");
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  if (av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  {
    const T* ap = av.data();
    const T* bp = bv.data();
    T* op = out.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t l = 0; l < k; ++l) {
        T x = ap[i * k + l];
        if (x == T(0)) continue;
        const T* brow = bp + l * n;
        T* orow = op + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += x * brow[j];
      }
  }
  out.check_finite("matmul");
  bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.add_node(std::move(out), rg, [a, b, av, bv, m, k, n](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    const T* gp = g.data();
    accum_into(t, a, [&](Tensor<T>& da) {
      T* dap = da.data();
      const T* bp = bv.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t l = 0; l < k; ++l) {
          const T* grow = gp + i * n;
          const T* brow = bp + l * n;
          T s = T(0);
          for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          dap[i * k + l] += s;
        }
    });
    accum_into(t, b, [&](Tensor<T>& db) {
      T* dbp = db.data();
      const T* ap = av.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t l = 0; l < k; ++l) {
          T x = ap[i * k + l];
          if (x == T(0)) continue;
          const T* grow = gp + i * n;
          T* dbrow = dbp + l * n;
          for (int64_t j = 0; j < n; ++j) dbrow[j] += x * grow[j];
        }
    });
  });
}

template <typename T>
Var<T> transpose2d(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  require_rank(xv, 2, "transpose2d");
  const int64_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at2(j, i) = xv.at2(i, j);
  return tape.add_node(std::move(out), tape.requires_grad(x), [x, m, n](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) dx.at2(i, j) += g.at2(j, i);
    });
  });
}

// --- elementwise ---------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a.tape, b.tape, "add");
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = av.at(i) + bv.at(i);
  out.check_finite("add");
  bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.add_node(std::move(out), rg, [a, b](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, a, [&](Tensor<T>& da) {
      for (int64_t i = 0; i < g.numel(); ++i) da.at(i) += g.at(i);
    });
    accum_into(t, b, [&](Tensor<T>& db) {
      for (int64_t i = 0; i < g.numel(); ++i) db.at(i) += g.at(i);
    });
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a.tape, b.tape, "sub");
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same_shape(av, bv, "sub");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = av.at(i) - bv.at(i);
  out.check_finite("sub");
  bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.add_node(std::move(out), rg, [a, b](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, a, [&](Tensor<T>& da) {
      for (int64_t i = 0; i < g.numel(); ++i) da.at(i) += g.at(i);
    });
    accum_into(t, b, [&](Tensor<T>& db) {
      for (int64_t i = 0; i < g.numel(); ++i) db.at(i) -= g.at(i);
    });
  });
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  require_same_tape(a.tape, b.tape, "hadamard");
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same_shape(av, bv, "hadamard");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = av.at(i) * bv.at(i);
  out.check_finite("hadamard");
  bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.add_node(std::move(out), rg, [a, b, av, bv](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, a, [&](Tensor<T>& da) {
      for (int64_t i = 0; i < g.numel(); ++i) da.at(i) += g.at(i) * bv.at(i);
    });
    accum_into(t, b, [&](Tensor<T>& db) {
      for (int64_t i = 0; i < g.numel(); ++i) db.at(i) += g.at(i) * av.at(i);
    });
  });
}

template <typename T>
Var<T> scale(Var<T> x, double c) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  const T tc = static_cast<T>(c);
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = xv.at(i) * tc;
  out.check_finite("scale");
  return tape.add_node(std::move(out), tape.requires_grad(x), [x, tc](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < g.numel(); ++i) dx.at(i) += g.at(i) * tc;
    });
  });
}

template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
  require_same_tape(x.tape, b.tape, "add_rowvec");
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& bv = tape.value(b);
  require_rank(xv, 2, "add_rowvec");
  require_rank(bv, 1, "add_rowvec");
  if (xv.dim(1) != bv.dim(0))
    throw DimensionError("add_rowvec: width mismatch " + shape_str(xv.shape()) + " vs " +
                         shape_str(bv.shape()));
  const int64_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = xv.at2(i, j) + bv.at(j);
  out.check_finite("add_rowvec");
  bool rg = tape.requires_grad(x) || tape.requires_grad(b);
  return tape.add_node(std::move(out), rg, [x, b, m, n](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < g.numel(); ++i) dx.at(i) += g.at(i);
    });
    accum_into(t, b, [&](Tensor<T>& db) {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) db.at(j) += g.at2(i, j);
    });
  });
}

template <typename T>
Var<T> mul_colvec(Var<T> x, Var<T> v) {
  require_same_tape(x.tape, v.tape, "mul_colvec");
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& vv = tape.value(v);
  require_rank(xv, 2, "mul_colvec");
  require_rank(vv, 1, "mul_colvec");
  if (xv.dim(0) != vv.dim(0))
    throw DimensionError("mul_colvec: height mismatch " + shape_str(xv.shape()) + " vs " +
                         shape_str(vv.shape()));
  const int64_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = xv.at2(i, j) * vv.at(i);
  out.check_finite("mul_colvec");
  bool rg = tape.requires_grad(x) || tape.requires_grad(v);
  return tape.add_node(std::move(out), rg, [x, v, xv, vv, m, n](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) dx.at2(i, j) += g.at2(i, j) * vv.at(i);
    });
    accum_into(t, v, [&](Tensor<T>& dv) {
      for (int64_t i = 0; i < m; ++i) {
        T s = T(0);
        for (int64_t j = 0; j < n; ++j) s += g.at2(i, j) * xv.at2(i, j);
        dv.at(i) += s;
      }
    });
  });
}

// --- activations ----------------------------------------------------------------

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    double z = static_cast<double>(xv.at(i));
    // split by sign to avoid exp overflow
    double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.at(i) = static_cast<T>(s);
  }
  out.check_finite("sigmoid");
  Tensor<T> saved = out;
  return tape.add_node(std::move(out), tape.requires_grad(x), [x, saved](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < g.numel(); ++i) {
        T s = saved.at(i);
        dx.at(i) += g.at(i) * s * (T(1) - s);
      }
    });
  });
}

template <typename T>
Var<T> tanh_op(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out.at(i) = static_cast<T>(std::tanh(static_cast<double>(xv.at(i))));
  out.check_finite("tanh");
  Tensor<T> saved = out;
  return tape.add_node(std::move(out), tape.requires_grad(x), [x, saved](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < g.numel(); ++i) {
        T s = saved.at(i);
        dx.at(i) += g.at(i) * (T(1) - s * s);
      }
    });
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = xv.at(i) > T(0) ? xv.at(i) : T(0);
  return tape.add_node(std::move(out), tape.requires_grad(x), [x, xv](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < g.numel(); ++i)
        if (xv.at(i) > T(0)) dx.at(i) += g.at(i);
    });
  });
}

// --- reductions ------------------------------------------------------------------

template <typename T>
Var<T> reduce(Var<T> x, int axis, Reduce kind) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  if (axis < 0 || axis >= xv.rank())
    throw UsageError("reduce: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(xv.shape()));
  if (xv.rank() == 1) {
    // whole-vector reduce to a scalar
    const int64_t n = xv.dim(0);
    Tensor<T> out({1});
    int64_t arg = 0;
    if (kind == Reduce::Max) {
      arg = argmax_lowest_t(xv.data(), n);
      out.at(0) = xv.at(arg);
    } else {
      T s = T(0);
      for (int64_t i = 0; i < n; ++i) s += xv.at(i);
      out.at(0) = kind == Reduce::Mean ? s / static_cast<T>(n) : s;
    }
    out.check_finite("reduce");
    return tape.add_node(std::move(out), tape.requires_grad(x),
                         [x, n, kind, arg](Tape<T>& t, int32_t self) {
                           const T g = t.node_grad(self).at(0);
                           accum_into(t, x, [&](Tensor<T>& dx) {
                             if (kind == Reduce::Max) {
                               dx.at(arg) += g;
                             } else {
                               T w = kind == Reduce::Mean ? g / static_cast<T>(n) : g;
                               for (int64_t i = 0; i < n; ++i) dx.at(i) += w;
                             }
                           });
                         });
  }
  require_rank(xv, 2, "reduce");
  const int64_t m = xv.dim(0), n = xv.dim(1);
  const int64_t out_len = axis == 0 ? n : m;
  const int64_t red_len = axis == 0 ? m : n;
  Tensor<T> out({out_len});
  std::vector<int64_t> argmaxes;
  if (kind == Reduce::Max) argmaxes.assign(static_cast<size_t>(out_len), 0);
  for (int64_t o = 0; o < out_len; ++o) {
    auto elem = [&](int64_t r) { return axis == 0 ? xv.at2(r, o) : xv.at2(o, r); };
    if (kind == Reduce::Max) {
      T best = elem(0);
      int64_t bi = 0;
      for (int64_t r = 1; r < red_len; ++r)
        if (elem(r) > best) {
          best = elem(r);
          bi = r;
        }
      out.at(o) = best;
      argmaxes[static_cast<size_t>(o)] = bi;
    } else {
      T s = T(0);
      for (int64_t r = 0; r < red_len; ++r) s += elem(r);
      out.at(o) = kind == Reduce::Mean ? s / static_cast<T>(red_len) : s;
    }
  }
  out.check_finite("reduce");
  return tape.add_node(
      std::move(out), tape.requires_grad(x),
      [x, axis, kind, out_len, red_len, argmaxes](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.node_grad(self);
        accum_into(t, x, [&](Tensor<T>& dx) {
          auto delem = [&](int64_t r, int64_t o) -> T& {
            return axis == 0 ? dx.at2(r, o) : dx.at2(o, r);
          };
          for (int64_t o = 0; o < out_len; ++o) {
            if (kind == Reduce::Max) {
              delem(argmaxes[static_cast<size_t>(o)], o) += g.at(o);
            } else {
              T w = kind == Reduce::Mean ? g.at(o) / static_cast<T>(red_len) : g.at(o);
              for (int64_t r = 0; r < red_len; ++r) delem(r, o) += w;
            }
          }
        });
      });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out({1});
  T s = T(0);
  for (int64_t i = 0; i < xv.numel(); ++i) s += xv.at(i);
  out.at(0) = s;
  out.check_finite("sum_all");
  return tape.add_node(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int32_t self) {
    const T g = t.node_grad(self).at(0);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < dx.numel(); ++i) dx.at(i) += g;
    });
  });
}

// --- softmax --------------------------------------------------------------------

namespace {

// softmax over a strided slice; writes normalized values into out
template <typename T>
void softmax_slice(const T* in, T* out, int64_t n, int64_t stride) {
  T mx = in[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, in[i * stride]);
  double denom = 0;
  for (int64_t i = 0; i < n; ++i) denom += std::exp(static_cast<double>(in[i * stride] - mx));
  for (int64_t i = 0; i < n; ++i)
    out[i * stride] = static_cast<T>(std::exp(static_cast<double>(in[i * stride] - mx)) / denom);
}

// dx_i += (1/tau) * y_i * (g_i - sum_j g_j y_j)
template <typename T>
void softmax_backward_slice(const T* y, const T* g, T* dx, int64_t n, int64_t stride, T inv_tau) {
  T dot = T(0);
  for (int64_t i = 0; i < n; ++i) dot += g[i * stride] * y[i * stride];
  for (int64_t i = 0; i < n; ++i)
    dx[i * stride] += inv_tau * y[i * stride] * (g[i * stride] - dot);
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  if (!xv.all_finite()) throw NumericError("softmax: input contains non-finite values");
  Tensor<T> out(xv.shape());
  if (xv.rank() == 1) {
    if (axis != 0) throw UsageError("softmax: axis out of range for rank-1 input");
    softmax_slice(xv.data(), out.data(), xv.dim(0), 1);
  } else if (xv.rank() == 2) {
    const int64_t m = xv.dim(0), n = xv.dim(1);
    if (axis == 1) {
      for (int64_t i = 0; i < m; ++i) softmax_slice(xv.data() + i * n, out.data() + i * n, n, 1);
    } else if (axis == 0) {
      for (int64_t j = 0; j < n; ++j) softmax_slice(xv.data() + j, out.data() + j, m, n);
    } else {
      throw UsageError("softmax: axis out of range for rank-2 input");
    }
  } else {
    throw UsageError("softmax: rank " + std::to_string(xv.rank()) + " unsupported");
  }
  out.check_finite("softmax");
  Tensor<T> saved = out;
  return tape.add_node(std::move(out), tape.requires_grad(x),
                       [x, saved, axis](Tape<T>& t, int32_t self) {
                         const Tensor<T>& g = t.node_grad(self);
                         accum_into(t, x, [&](Tensor<T>& dx) {
                           if (saved.rank() == 1) {
                             softmax_backward_slice(saved.data(), g.data(), dx.data(),
                                                    saved.dim(0), 1, T(1));
                           } else {
                             const int64_t m = saved.dim(0), n = saved.dim(1);
                             if (axis == 1)
                               for (int64_t i = 0; i < m; ++i)
                                 softmax_backward_slice(saved.data() + i * n, g.data() + i * n,
                                                        dx.data() + i * n, n, 1, T(1));
                             else
                               for (int64_t j = 0; j < n; ++j)
                                 softmax_backward_slice(saved.data() + j, g.data() + j,
                                                        dx.data() + j, m, n, T(1));
                           }
                         });
                       });
}

template <typename T>
Var<T> masked_softmax1d(Var<T> x, const Tensor<T>& mask01) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  require_rank(xv, 1, "masked_softmax1d");
  require_same_shape(xv, mask01, "masked_softmax1d");
  bool any = false;
  for (int64_t i = 0; i < mask01.numel(); ++i) any = any || mask01.at(i) != T(0);
  if (!any) throw NumericError("masked_softmax1d: all positions masked");
  Tensor<T> addend(mask01.shape());
  for (int64_t i = 0; i < addend.numel(); ++i)
    addend.at(i) = mask01.at(i) != T(0) ? T(0) : T(-1e9);
  Var<T> shifted = add(x, tape.constant(std::move(addend)));
  return softmax(shifted, 0);
}

// --- structural ops ----------------------------------------------------------------

template <typename T>
Var<T> concat1d(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw UsageError("concat1d: no inputs");
  Tape<T>& tape = *parts[0].tape;
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_same_tape(parts[0].tape, p.tape, "concat1d");
    require_rank(tape.value(p), 1, "concat1d");
    total += tape.value(p).dim(0);
    rg = rg || tape.requires_grad(p);
  }
  Tensor<T> out({total});
  int64_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& pv = tape.value(p);
    for (int64_t i = 0; i < pv.dim(0); ++i) out.at(off + i) = pv.at(i);
    off += pv.dim(0);
  }
  std::vector<Var<T>> saved_parts = parts;
  return tape.add_node(std::move(out), rg, [saved_parts](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    int64_t off = 0;
    for (const auto& p : saved_parts) {
      int64_t len = t.value(p).dim(0);
      accum_into(t, p, [&](Tensor<T>& dp) {
        for (int64_t i = 0; i < len; ++i) dp.at(i) += g.at(off + i);
      });
      off += len;
    }
  });
}

template <typename T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
  if (rows.empty()) throw UsageError("stack_rows: no inputs");
  Tape<T>& tape = *rows[0].tape;
  const int64_t d = tape.value(rows[0]).dim(0);
  bool rg = false;
  for (const auto& r : rows) {
    require_same_tape(rows[0].tape, r.tape, "stack_rows");
    require_rank(tape.value(r), 1, "stack_rows");
    if (tape.value(r).dim(0) != d) throw DimensionError("stack_rows: rows differ in length");
    rg = rg || tape.requires_grad(r);
  }
  const int64_t n = static_cast<int64_t>(rows.size());
  Tensor<T> out({n, d});
  for (int64_t i = 0; i < n; ++i) {
    const Tensor<T>& rv = tape.value(rows[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < d; ++j) out.at2(i, j) = rv.at(j);
  }
  std::vector<Var<T>> saved = rows;
  return tape.add_node(std::move(out), rg, [saved, d](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    for (size_t i = 0; i < saved.size(); ++i) {
      accum_into(t, saved[i], [&](Tensor<T>& dr) {
        for (int64_t j = 0; j < d; ++j) dr.at(j) += g.at2(static_cast<int64_t>(i), j);
      });
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape new_shape) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = tape.value(x).reshaped(new_shape);
  Shape old_shape = tape.value(x).shape();
  return tape.add_node(std::move(out), tape.requires_grad(x),
                       [x, old_shape](Tape<T>& t, int32_t self) {
                         const Tensor<T>& g = t.node_grad(self);
                         accum_into(t, x, [&](Tensor<T>& dx) {
                           for (int64_t i = 0; i < g.numel(); ++i) dx.at(i) += g.at(i);
                         });
                       });
}

template <typename T>
Var<T> embed_lookup(Var<T> table, std::span<const int32_t> ids, std::span<const uint8_t> mask) {
  Tape<T>& tape = *table.tape;
  const Tensor<T>& tv = tape.value(table);
  require_rank(tv, 2, "embed_lookup");
  if (ids.size() != mask.size()) throw UsageError("embed_lookup: ids/mask length mismatch");
  const int64_t vocab = tv.dim(0), d = tv.dim(1);
  const int64_t n = static_cast<int64_t>(ids.size());
  Tensor<T> out({n, d});
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    int32_t id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= vocab)
      throw UsageError("embed_lookup: token id " + std::to_string(id) +
                       " outside table of " + std::to_string(vocab) + " rows");
    const T* src = tv.data() + static_cast<int64_t>(id) * d;
    T* dst = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  std::vector<int32_t> ids_v(ids.begin(), ids.end());
  std::vector<uint8_t> mask_v(mask.begin(), mask.end());
  return tape.add_node(std::move(out), tape.requires_grad(table),
                       [table, ids_v, mask_v, d](Tape<T>& t, int32_t self) {
                         const Tensor<T>& g = t.node_grad(self);
                         accum_into(t, table, [&](Tensor<T>& dw) {
                           for (size_t i = 0; i < ids_v.size(); ++i) {
                             if (!mask_v[i]) continue;
                             T* dst = dw.data() + static_cast<int64_t>(ids_v[i]) * d;
                             const T* src = g.data() + static_cast<int64_t>(i) * d;
                             for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                           }
                         });
                       });
}

template <typename T>
Var<T> group_sum_rows(Var<T> x, int64_t group_rows) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  require_rank(xv, 2, "group_sum_rows");
  if (group_rows <= 0 || xv.dim(0) % group_rows != 0)
    throw DimensionError("group_sum_rows: " + std::to_string(xv.dim(0)) +
                         " rows not divisible into groups of " + std::to_string(group_rows));
  const int64_t groups = xv.dim(0) / group_rows, d = xv.dim(1);
  Tensor<T> out({groups, d});
  for (int64_t gi = 0; gi < groups; ++gi)
    for (int64_t r = 0; r < group_rows; ++r) {
      const T* src = xv.data() + (gi * group_rows + r) * d;
      T* dst = out.data() + gi * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  out.check_finite("group_sum_rows");
  return tape.add_node(std::move(out), tape.requires_grad(x),
                       [x, group_rows, groups, d](Tape<T>& t, int32_t self) {
                         const Tensor<T>& g = t.node_grad(self);
                         accum_into(t, x, [&](Tensor<T>& dx) {
                           for (int64_t gi = 0; gi < groups; ++gi)
                             for (int64_t r = 0; r < group_rows; ++r) {
                               T* dst = dx.data() + (gi * group_rows + r) * d;
                               const T* src = g.data() + gi * d;
                               for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                             }
                         });
                       });
}

// --- dropout -----------------------------------------------------------------------

template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, RngState& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw UsageError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> mask(xv.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask.at(i) = rng.uniform() >= rate ? keep_scale : T(0);
  Tensor<T> out(xv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = xv.at(i) * mask.at(i);
  out.check_finite("dropout");
  return tape.add_node(std::move(out), tape.requires_grad(x), [x, mask](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.node_grad(self);
    accum_into(t, x, [&](Tensor<T>& dx) {
      for (int64_t i = 0; i < g.numel(); ++i) dx.at(i) += g.at(i) * mask.at(i);
    });
  });
}

// --- straight-through Gumbel-Softmax --------------------------------------------------

template <typename T>
Tensor<T> gumbel_noise_tensor(RngState& rng, int64_t k) {
  Tensor<T> out({k});
  for (int64_t i = 0; i < k; ++i)
    out.at(i) = static_cast<T>(-std::log(-std::log(rng.uniform())));
  return out;
}

template <typename T>
Var<T> st_gumbel_softmax_with_noise(Var<T> logits, const Tensor<T>& noise, double tau, bool hard) {
  if (tau <= 0.0) throw UsageError("st_gumbel_softmax: tau must be positive, got " + std::to_string(tau));
  Tape<T>& tape = *logits.tape;
  const Tensor<T>& lv = tape.value(logits);
  require_rank(lv, 1, "st_gumbel_softmax");
  require_same_shape(lv, noise, "st_gumbel_softmax");
  const int64_t k = lv.dim(0);
  Tensor<T> z({k});
  for (int64_t i = 0; i < k; ++i)
    z.at(i) = static_cast<T>((static_cast<double>(lv.at(i)) + static_cast<double>(noise.at(i))) / tau);
  Tensor<T> soft({k});
  softmax_slice(z.data(), soft.data(), k, 1);
  soft.check_finite("st_gumbel_softmax");
  Tensor<T> out;
  if (hard) {
    out = Tensor<T>::zeros({k});
    out.at(argmax_lowest_t(soft.data(), k)) = T(1);
  } else {
    out = soft;
  }
  const T inv_tau = static_cast<T>(1.0 / tau);
  return tape.add_node(std::move(out), tape.requires_grad(logits),
                       [logits, soft, inv_tau, k](Tape<T>& t, int32_t self) {
                         const Tensor<T>& g = t.node_grad(self);
                         accum_into(t, logits, [&](Tensor<T>& dx) {
                           softmax_backward_slice(soft.data(), g.data(), dx.data(), k, 1, inv_tau);
                         });
                       });
}

template <typename T>
Var<T> st_gumbel_softmax(Var<T> logits, double tau, RngState& rng, bool hard, bool training) {
  if (tau <= 0.0) throw UsageError("st_gumbel_softmax: tau must be positive, got " + std::to_string(tau));
  const int64_t k = logits.tape->value(logits).dim(0);
  Tensor<T> noise =
      training ? gumbel_noise_tensor<T>(rng, k) : Tensor<T>::zeros({k});
  return st_gumbel_softmax_with_noise(logits, noise, tau, hard);
}

// --- explicit instantiations ------------------------------------------------------

#define MPCN_INSTANTIATE_OPS(T)                                                             \
  template class Tape<T>;                                                                   \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                               \
  template Var<T> transpose2d<T>(Var<T>);                                                  \
  template Var<T> add<T>(Var<T>, Var<T>);                                                  \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                  \
  template Var<T> hadamard<T>(Var<T>, Var<T>);                                             \
  template Var<T> scale<T>(Var<T>, double);                                                \
  template Var<T> add_rowvec<T>(Var<T>, Var<T>);                                           \
  template Var<T> mul_colvec<T>(Var<T>, Var<T>);                                           \
  template Var<T> sigmoid<T>(Var<T>);                                                      \
  template Var<T> tanh_op<T>(Var<T>);                                                      \
  template Var<T> relu<T>(Var<T>);                                                         \
  template Var<T> reduce<T>(Var<T>, int, Reduce);                                          \
  template Var<T> sum_all<T>(Var<T>);                                                      \
  template Var<T> softmax<T>(Var<T>, int);                                                 \
  template Var<T> masked_softmax1d<T>(Var<T>, const Tensor<T>&);                           \
  template Var<T> concat1d<T>(const std::vector<Var<T>>&);                                 \
  template Var<T> stack_rows<T>(const std::vector<Var<T>>&);                               \
  template Var<T> reshape<T>(Var<T>, Shape);                                               \
  template Var<T> embed_lookup<T>(Var<T>, std::span<const int32_t>, std::span<const uint8_t>); \
  template Var<T> group_sum_rows<T>(Var<T>, int64_t);                                      \
  template Var<T> dropout<T>(Var<T>, double, bool, RngState&);                             \
  template Tensor<T> gumbel_noise_tensor<T>(RngState&, int64_t);                           \
  template Var<T> st_gumbel_softmax_with_noise<T>(Var<T>, const Tensor<T>&, double, bool); \
  template Var<T> st_gumbel_softmax<T>(Var<T>, double, RngState&, bool, bool);

MPCN_INSTANTIATE_OPS(float)
MPCN_INSTANTIATE_OPS(double)

#undef MPCN_INSTANTIATE_OPS

}  // namespace mpcn
