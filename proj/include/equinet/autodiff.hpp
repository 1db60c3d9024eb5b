#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "equinet/tensor.hpp"

namespace equinet {

// Reverse-mode tape over dense tensors. A fresh tape is built per forward
// pass; parameters enter as tracked leaves and constants as untracked ones.
// backward(root) seeds d(root)=1 and walks the nodes in reverse creation
// order, so the creation order must be a topological order (it is, since
// every op consumes already-created ids).
template <typename T>
class Tape {
 public:
  using VarId = int32_t;

  VarId constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }
  VarId param(Tensor<T> v) { return push(std::move(v), true, nullptr); }

  const Tensor<T>& val(VarId id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor<T>& grad(VarId id) { return nodes_[static_cast<size_t>(id)].grad; }
  bool needs_grad(VarId id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  size_t node_count() const { return nodes_.size(); }

  // ---- elementwise ----

  VarId add(VarId a, VarId b) {
    check_same(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return push(std::move(out), needs_grad(a) || needs_grad(b), [this, a, b](VarId self) {
      accumulate(a, grad(self));
      accumulate(b, grad(self));
    });
  }

  VarId sub(VarId a, VarId b) {
    check_same(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return push(std::move(out), needs_grad(a) || needs_grad(b), [this, a, b](VarId self) {
      accumulate(a, grad(self));
      accumulate_neg(b, grad(self));
    });
  }

  VarId mul(VarId a, VarId b) {
    check_same(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(std::move(out), needs_grad(a) || needs_grad(b), [this, a, b](VarId self) {
      const Tensor<T>& g = grad(self);
      if (needs_grad(a)) {
        Tensor<T>& ga = grad(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
      }
      if (needs_grad(b)) {
        Tensor<T>& gb = grad(b);
        const Tensor<T>& va = val(a);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }

  VarId div(VarId a, VarId b) {
    check_same(a, b);
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] /= vb[i];
    return push(std::move(out), needs_grad(a) || needs_grad(b), [this, a, b](VarId self) {
      const Tensor<T>& g = grad(self);
      const Tensor<T>& va = val(a);
      const Tensor<T>& vb = val(b);
      if (needs_grad(a)) {
        Tensor<T>& ga = grad(a);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
      }
      if (needs_grad(b)) {
        Tensor<T>& gb = grad(b);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
      }
    });
  }

  VarId neg(VarId a) { return scale(a, T(-1)); }

  VarId scale(VarId a, T c) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    return push(std::move(out), needs_grad(a), [this, a, c](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }

  VarId add_const(VarId a, T c) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
    return push(std::move(out), needs_grad(a), [this, a](VarId self) { accumulate(a, grad(self)); });
  }

  // ReLU with subgradient 0 at exactly 0.
  VarId relu(VarId a) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      const Tensor<T>& va = val(a);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += va[i] > T(0) ? g[i] : T(0);
    });
  }

  VarId logistic(VarId a) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      const Tensor<T>& s = val(self);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (T(1) - s[i]);
    });
  }

  // sqrt(x + eps); eps guards zero inputs in norms.
  VarId sqrt_eps(VarId a, T eps) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i] + eps);
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      const Tensor<T>& s = val(self);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * T(0.5) / s[i];
    });
  }

  VarId log1p_(VarId a) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log1p(out[i]);
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      const Tensor<T>& va = val(a);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (T(1) + va[i]);
    });
  }

  VarId recip(VarId a) {
    Tensor<T> out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = T(1) / out[i];
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      const Tensor<T>& s = val(self);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] -= g[i] * s[i] * s[i];
    });
  }

  // ---- shape and reductions ----

  VarId sum_axis(VarId a, int axis) {
    Tensor<T> out = sum_along(val(a), axis);
    return push(std::move(out), needs_grad(a), [this, a, axis](VarId self) {
      if (!needs_grad(a)) return;
      scatter_broadcast(grad(a), grad(self), axis, T(1));
    });
  }

  VarId mean_axis(VarId a, int axis) {
    const AxisSplit s = axis_split(val(a).dims(), axis);
    Tensor<T> out = mean_along(val(a), axis);
    const T inv = T(1) / static_cast<T>(s.n);
    return push(std::move(out), needs_grad(a), [this, a, axis, inv](VarId self) {
      if (!needs_grad(a)) return;
      scatter_broadcast(grad(a), grad(self), axis, inv);
    });
  }

  // neighbor_sum is self-adjoint along its axis.
  VarId nbr_sum(VarId a, int axis) {
    Tensor<T> out = neighbor_sum(val(a), axis);
    return push(std::move(out), needs_grad(a), [this, a, axis](VarId self) {
      if (!needs_grad(a)) return;
      const Tensor<T> gb = neighbor_sum(grad(self), axis);
      accumulate(a, gb);
    });
  }

  // Inserts a new axis of extent n at `axis`, copying values.
  VarId broadcast_axis(VarId a, int axis, int n) {
    const Tensor<T>& va = val(a);
    std::vector<int> odims = va.dims();
    odims.insert(odims.begin() + axis, n);
    Tensor<T> out(odims);
    const AxisSplit s = axis_split(odims, axis);
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < s.n; ++i) {
        const T* src = va.data() + o * s.inner;
        T* dst = out.data() + (o * s.n + i) * s.inner;
        for (int64_t j = 0; j < s.inner; ++j) dst[j] = src[j];
      }
    return push(std::move(out), needs_grad(a), [this, a, axis](VarId self) {
      if (!needs_grad(a)) return;
      const Tensor<T> gsum = sum_along(grad(self), axis);
      accumulate(a, gsum);
    });
  }

  VarId narrow(VarId a, int axis, int start, int len) {
    const Tensor<T>& va = val(a);
    const AxisSplit s = axis_split(va.dims(), axis);
    if (start < 0 || len <= 0 || start + len > s.n) throw std::out_of_range("narrow: slice out of range");
    std::vector<int> odims = va.dims();
    odims[static_cast<size_t>(axis)] = len;
    Tensor<T> out(odims);
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < len; ++i) {
        const T* src = va.data() + (o * s.n + start + i) * s.inner;
        T* dst = out.data() + (o * len + i) * s.inner;
        for (int64_t j = 0; j < s.inner; ++j) dst[j] = src[j];
      }
    return push(std::move(out), needs_grad(a), [this, a, axis, start, len](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      const AxisSplit s = axis_split(ga.dims(), axis);
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t i = 0; i < len; ++i) {
          T* dst = ga.data() + (o * s.n + start + i) * s.inner;
          const T* src = g.data() + (o * len + i) * s.inner;
          for (int64_t j = 0; j < s.inner; ++j) dst[j] += src[j];
        }
    });
  }

  VarId concat_axis(std::vector<VarId> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat_axis: no parts");
    if (parts.size() == 1) return parts[0];
    std::vector<int> odims = val(parts[0]).dims();
    int total = 0;
    bool needs = false;
    for (VarId p : parts) {
      const Tensor<T>& v = val(p);
      for (int d = 0; d < v.rank(); ++d)
        if (d != axis && v.extent(d) != odims[static_cast<size_t>(d)])
          throw std::invalid_argument("concat_axis: shape mismatch");
      total += v.extent(axis);
      needs = needs || needs_grad(p);
    }
    odims[static_cast<size_t>(axis)] = total;
    Tensor<T> out(odims);
    const AxisSplit so = axis_split(odims, axis);
    int64_t offset = 0;
    for (VarId p : parts) {
      const Tensor<T>& v = val(p);
      const AxisSplit sp = axis_split(v.dims(), axis);
      for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t i = 0; i < sp.n; ++i) {
          const T* src = v.data() + (o * sp.n + i) * sp.inner;
          T* dst = out.data() + (o * so.n + offset + i) * so.inner;
          for (int64_t j = 0; j < sp.inner; ++j) dst[j] = src[j];
        }
      offset += sp.n;
    }
    return push(std::move(out), needs, [this, parts, axis](VarId self) {
      const Tensor<T>& g = grad(self);
      const AxisSplit so = axis_split(g.dims(), axis);
      int64_t offset = 0;
      for (VarId p : parts) {
        const AxisSplit sp = axis_split(val(p).dims(), axis);
        if (needs_grad(p)) {
          Tensor<T>& gp = grad(p);
          for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t i = 0; i < sp.n; ++i) {
              const T* src = g.data() + (o * so.n + offset + i) * so.inner;
              T* dst = gp.data() + (o * sp.n + i) * sp.inner;
              for (int64_t j = 0; j < sp.inner; ++j) dst[j] += src[j];
            }
        }
        offset += sp.n;
      }
    });
  }

  VarId reshape(VarId a, std::vector<int> dims) {
    if (numel_of(dims) != val(a).size()) throw std::invalid_argument("reshape: size mismatch");
    Tensor<T> out(std::move(dims), val(a).vec());
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  VarId transpose_last2(VarId a) {
    const Tensor<T>& va = val(a);
    if (va.rank() < 2) throw std::invalid_argument("transpose_last2: rank < 2");
    std::vector<int> odims = va.dims();
    const int r = va.rank();
    std::swap(odims[static_cast<size_t>(r - 2)], odims[static_cast<size_t>(r - 1)]);
    Tensor<T> out = transpose_copy(va, odims);
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      std::vector<int> adims = val(a).dims();
      const Tensor<T> gt = transpose_copy(grad(self), adims);
      accumulate(a, gt);
    });
  }

  // Batched matrix product: (N, m, k) x (N, k, n) -> (N, m, n).
  VarId bmm(VarId a, VarId b) {
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    if (va.rank() != 3 || vb.rank() != 3 || va.extent(0) != vb.extent(0) || va.extent(2) != vb.extent(1))
      throw std::invalid_argument("bmm: shape mismatch");
    const int N = va.extent(0), m = va.extent(1), k = va.extent(2), n = vb.extent(2);
    Tensor<T> out({N, m, n});
    for (int bidx = 0; bidx < N; ++bidx) matmul_acc(va.data() + int64_t(bidx) * m * k, vb.data() + int64_t(bidx) * k * n, out.data() + int64_t(bidx) * m * n, m, k, n);
    return push(std::move(out), needs_grad(a) || needs_grad(b), [this, a, b, N, m, k, n](VarId self) {
      const Tensor<T>& g = grad(self);
      if (needs_grad(a)) {
        Tensor<T>& ga = grad(a);
        const Tensor<T>& vb = val(b);
        // ga += g * b^T
        for (int bi = 0; bi < N; ++bi) matmul_nt_acc(g.data() + int64_t(bi) * m * n, vb.data() + int64_t(bi) * k * n, ga.data() + int64_t(bi) * m * k, m, n, k);
      }
      if (needs_grad(b)) {
        Tensor<T>& gb = grad(b);
        const Tensor<T>& va = val(a);
        // gb += a^T * g
        for (int bi = 0; bi < N; ++bi) matmul_tn_acc(va.data() + int64_t(bi) * m * k, g.data() + int64_t(bi) * m * n, gb.data() + int64_t(bi) * k * n, m, k, n);
      }
    });
  }

  // (N, K, K) -> (N, K) diagonal.
  VarId take_diag(VarId a) {
    const Tensor<T>& va = val(a);
    if (va.rank() != 3 || va.extent(1) != va.extent(2)) throw std::invalid_argument("take_diag: needs (N,K,K)");
    const int N = va.extent(0), K = va.extent(1);
    Tensor<T> out({N, K});
    for (int b = 0; b < N; ++b)
      for (int i = 0; i < K; ++i) out[int64_t(b) * K + i] = va[(int64_t(b) * K + i) * K + i];
    return push(std::move(out), needs_grad(a), [this, a, N, K](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const Tensor<T>& g = grad(self);
      for (int b = 0; b < N; ++b)
        for (int i = 0; i < K; ++i) ga[(int64_t(b) * K + i) * K + i] += g[int64_t(b) * K + i];
    });
  }

  // Scales a (N, ...) tensor by a per-batch scalar vector s (N).
  VarId bscale(VarId a, VarId s) {
    const Tensor<T>& va = val(a);
    const Tensor<T>& vs = val(s);
    if (vs.rank() != 1 || vs.extent(0) != va.extent(0)) throw std::invalid_argument("bscale: scale must be (N)");
    const int N = va.extent(0);
    const int64_t inner = va.size() / N;
    Tensor<T> out = va;
    for (int b = 0; b < N; ++b) {
      T* p = out.data() + int64_t(b) * inner;
      const T c = vs[b];
      for (int64_t j = 0; j < inner; ++j) p[j] *= c;
    }
    return push(std::move(out), needs_grad(a) || needs_grad(s), [this, a, s, N, inner](VarId self) {
      const Tensor<T>& g = grad(self);
      if (needs_grad(a)) {
        Tensor<T>& ga = grad(a);
        const Tensor<T>& vs = val(s);
        for (int b = 0; b < N; ++b) {
          T* dst = ga.data() + int64_t(b) * inner;
          const T* src = g.data() + int64_t(b) * inner;
          const T c = vs[b];
          for (int64_t j = 0; j < inner; ++j) dst[j] += src[j] * c;
        }
      }
      if (needs_grad(s)) {
        Tensor<T>& gs = grad(s);
        const Tensor<T>& va = val(a);
        for (int b = 0; b < N; ++b) {
          const T* ap = va.data() + int64_t(b) * inner;
          const T* gp = g.data() + int64_t(b) * inner;
          T acc = T(0);
          for (int64_t j = 0; j < inner; ++j) acc += ap[j] * gp[j];
          gs[b] += acc;
        }
      }
    });
  }

  VarId sum_all(VarId a) {
    const Tensor<T>& va = val(a);
    T acc = T(0);
    for (int64_t i = 0; i < va.size(); ++i) acc += va[i];
    Tensor<T> out({1});
    out[0] = acc;
    return push(std::move(out), needs_grad(a), [this, a](VarId self) {
      if (!needs_grad(a)) return;
      Tensor<T>& ga = grad(a);
      const T g = grad(self)[0];
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }

  VarId mean_all(VarId a) { return scale(sum_all(a), T(1) / static_cast<T>(val(a).size())); }

  // ---- equivariant layer building blocks ----

  // x: (N, C, d_1..d_D) -> feats (N, C, D+1, d_1..d_D); slot 0 is x itself,
  // slot 1+d the neighbor sum along set axis d.
  VarId nbr_feats(VarId x) {
    const Tensor<T>& vx = val(x);
    if (vx.rank() < 3) throw std::invalid_argument("nbr_feats: needs (N, C, dims...)");
    const int D = vx.rank() - 2;
    const int N = vx.extent(0), C = vx.extent(1);
    const int64_t S = vx.size() / (int64_t(N) * C);
    std::vector<int> odims = {N, C, D + 1};
    for (int d = 0; d < D; ++d) odims.push_back(vx.extent(2 + d));
    Tensor<T> out(odims);
    std::vector<Tensor<T>> sums(static_cast<size_t>(D));
    for (int d = 0; d < D; ++d) sums[static_cast<size_t>(d)] = neighbor_sum(vx, 2 + d);
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        const int64_t src_off = (int64_t(b) * C + c) * S;
        T* dst = out.data() + ((int64_t(b) * C + c) * (D + 1)) * S;
        const T* xs = vx.data() + src_off;
        for (int64_t j = 0; j < S; ++j) dst[j] = xs[j];
        for (int d = 0; d < D; ++d) {
          const T* ss = sums[static_cast<size_t>(d)].data() + src_off;
          T* dd = dst + int64_t(d + 1) * S;
          for (int64_t j = 0; j < S; ++j) dd[j] = ss[j];
        }
      }
    return push(std::move(out), needs_grad(x), [this, x, D, N, C, S](VarId self) {
      if (!needs_grad(x)) return;
      const Tensor<T>& g = grad(self);
      Tensor<T>& gx = grad(x);
      // Slot 0 passes through; neighbor-sum slots transpose to neighbor sums
      // of the slot gradients (the op is self-adjoint per axis).
      Tensor<T> slot(val(x).dims());
      for (int s = 0; s <= D; ++s) {
        for (int b = 0; b < N; ++b)
          for (int c = 0; c < C; ++c) {
            const T* src = g.data() + ((int64_t(b) * C + c) * (D + 1) + s) * S;
            T* dst = slot.data() + (int64_t(b) * C + c) * S;
            for (int64_t j = 0; j < S; ++j) dst[j] = src[j];
          }
        if (s == 0) {
          for (int64_t i = 0; i < gx.size(); ++i) gx[i] += slot[i];
        } else {
          const Tensor<T> ns = neighbor_sum(slot, 2 + (s - 1));
          for (int64_t i = 0; i < gx.size(); ++i) gx[i] += ns[i];
        }
      }
    });
  }

  // feats: (N, C_in, F, d...) with w (C_out, C_in, F), bias (C_out) ->
  // out (N, C_out, d...). The hot loop of every independent-set layer;
  // per sample this is a (C_out x C_in F) * (C_in F x S) matrix product.
  VarId channel_mix(VarId feats, VarId w, VarId bias) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<Mat>;
    using MapC = Eigen::Map<const Mat>;
    const Tensor<T>& vf = val(feats);
    const Tensor<T>& vw = val(w);
    const Tensor<T>& vb = val(bias);
    if (vf.rank() < 4 || vw.rank() != 3 || vb.rank() != 1) throw std::invalid_argument("channel_mix: bad shapes");
    const int N = vf.extent(0), Cin = vf.extent(1), F = vf.extent(2);
    if (vw.extent(1) != Cin || vw.extent(2) != F || vb.extent(0) != vw.extent(0))
      throw std::invalid_argument("channel_mix: weight shape mismatch");
    const int Cout = vw.extent(0);
    const int64_t CF = int64_t(Cin) * F;
    const int64_t S = vf.size() / (int64_t(N) * CF);
    std::vector<int> odims = {N, Cout};
    for (int d = 3; d < vf.rank(); ++d) odims.push_back(vf.extent(d));
    Tensor<T> out(odims);
    MapC wm(vw.data(), Cout, CF);
    for (int b = 0; b < N; ++b) {
      MapC fm(vf.data() + b * CF * S, CF, S);
      MapM om(out.data() + int64_t(b) * Cout * S, Cout, S);
      om.noalias() = wm * fm;
      om.colwise() += Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>(vb.data(), Cout);
    }
    return push(std::move(out), needs_grad(feats) || needs_grad(w) || needs_grad(bias),
                [this, feats, w, bias, N, Cin, F, Cout, S, CF](VarId self) {
                  const Tensor<T>& g = grad(self);
                  if (needs_grad(feats)) {
                    Tensor<T>& gf = grad(feats);
                    MapC wm(val(w).data(), Cout, CF);
                    for (int b = 0; b < N; ++b) {
                      MapC gm(g.data() + int64_t(b) * Cout * S, Cout, S);
                      MapM fm(gf.data() + b * CF * S, CF, S);
                      fm.noalias() += wm.transpose() * gm;
                    }
                  }
                  if (needs_grad(w)) {
                    Tensor<T>& gw = grad(w);
                    MapM wm(gw.data(), Cout, CF);
                    const Tensor<T>& vf = val(feats);
                    for (int b = 0; b < N; ++b) {
                      MapC gm(g.data() + int64_t(b) * Cout * S, Cout, S);
                      MapC fm(vf.data() + b * CF * S, CF, S);
                      wm.noalias() += gm * fm.transpose();
                    }
                  }
                  if (needs_grad(bias)) {
                    Tensor<T>& gb = grad(bias);
                    for (int b = 0; b < N; ++b)
                      for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (int64_t(b) * Cout + co) * S;
                        T acc = T(0);
                        for (int64_t j = 0; j < S; ++j) acc += gp[j];
                        gb[co] += acc;
                      }
                  }
                });
  }

  // Equivariant update for independent sets without materializing the
  // neighbor features: with per-axis sums R_d and the rearrangement
  //   out = (W_self - sum_d W_d) x + sum_d W_d broadcast_d(R_d x),
  // each term is a small channel-mixing matrix product. x: (N, C_in, d...),
  // w: (C_out, C_in, 1 + |active|), bias: (C_out).
  VarId equi_mix(VarId x, VarId w, VarId bias, std::vector<int> active_dims) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const Tensor<T>& vb = val(bias);
    if (vx.rank() < 3 || vw.rank() != 3 || vb.rank() != 1) throw std::invalid_argument("equi_mix: bad shapes");
    const int N = vx.extent(0), Cin = vx.extent(1);
    const int F = vw.extent(2);
    const int Cout = vw.extent(0);
    if (vw.extent(1) != Cin || vb.extent(0) != Cout || F != 1 + static_cast<int>(active_dims.size()))
      throw std::invalid_argument("equi_mix: weight shape mismatch");
    const int64_t S = vx.size() / (int64_t(N) * Cin);
    std::vector<int> spatial(vx.dims().begin() + 2, vx.dims().end());
    const int nd = static_cast<int>(active_dims.size());

    // Per-feature mixing matrices gathered from the strided weight layout.
    std::vector<Mat> wf(static_cast<size_t>(F), Mat(Cout, Cin));
    for (int f = 0; f < F; ++f)
      for (int co = 0; co < Cout; ++co)
        for (int ci = 0; ci < Cin; ++ci) wf[static_cast<size_t>(f)](co, ci) = vw[(int64_t(co) * Cin + ci) * F + f];
    Mat weff = wf[0];
    for (int j = 0; j < nd; ++j) weff -= wf[static_cast<size_t>(1 + j)];

    std::vector<AxisSplit> splits;
    for (int j = 0; j < nd; ++j) splits.push_back(axis_split(spatial, active_dims[static_cast<size_t>(j)]));

    std::vector<int> odims = {N, Cout};
    for (int d : spatial) odims.push_back(d);
    Tensor<T> out(odims);
    Mat red, mixed;
    for (int b = 0; b < N; ++b) {
      Eigen::Map<const Mat> xm(vx.data() + int64_t(b) * Cin * S, Cin, S);
      Eigen::Map<Mat> om(out.data() + int64_t(b) * Cout * S, Cout, S);
      om.noalias() = weff * xm;
      om.colwise() += Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>(vb.data(), Cout);
      for (int j = 0; j < nd; ++j) {
        const AxisSplit& sp = splits[static_cast<size_t>(j)];
        red.resize(Cin, sp.outer * sp.inner);
        reduce_axis(xm.data(), red.data(), Cin, sp);
        mixed.noalias() = wf[static_cast<size_t>(1 + j)] * red;
        add_broadcast_axis(mixed.data(), om.data(), Cout, sp);
      }
    }
    return push(std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(bias),
                [this, x, w, bias, active_dims = std::move(active_dims), N, Cin, Cout, F, S, wf = std::move(wf),
                 weff = std::move(weff), splits = std::move(splits)](VarId self) {
                  const int nd = static_cast<int>(active_dims.size());
                  const Tensor<T>& g = grad(self);
                  if (needs_grad(x)) {
                    Tensor<T>& gx = grad(x);
                    Mat red, mixed;
                    for (int b = 0; b < N; ++b) {
                      Eigen::Map<const Mat> gm(g.data() + int64_t(b) * Cout * S, Cout, S);
                      Eigen::Map<Mat> xm(gx.data() + int64_t(b) * Cin * S, Cin, S);
                      xm.noalias() += weff.transpose() * gm;
                      for (int j = 0; j < nd; ++j) {
                        const AxisSplit& sp = splits[static_cast<size_t>(j)];
                        red.resize(Cout, sp.outer * sp.inner);
                        reduce_axis(gm.data(), red.data(), Cout, sp);
                        mixed.noalias() = wf[static_cast<size_t>(1 + j)].transpose() * red;
                        add_broadcast_axis(mixed.data(), xm.data(), Cin, sp);
                      }
                    }
                  }
                  if (needs_grad(w)) {
                    Tensor<T>& gw = grad(w);
                    const Tensor<T>& vx = val(x);
                    Mat g0 = Mat::Zero(Cout, Cin);
                    std::vector<Mat> gj(static_cast<size_t>(nd), Mat::Zero(Cout, Cin));
                    Mat redg, redx;
                    for (int b = 0; b < N; ++b) {
                      Eigen::Map<const Mat> gm(g.data() + int64_t(b) * Cout * S, Cout, S);
                      Eigen::Map<const Mat> xm(vx.data() + int64_t(b) * Cin * S, Cin, S);
                      g0.noalias() += gm * xm.transpose();
                      for (int j = 0; j < nd; ++j) {
                        const AxisSplit& sp = splits[static_cast<size_t>(j)];
                        redg.resize(Cout, sp.outer * sp.inner);
                        redx.resize(Cin, sp.outer * sp.inner);
                        reduce_axis(gm.data(), redg.data(), Cout, sp);
                        reduce_axis(xm.data(), redx.data(), Cin, sp);
                        gj[static_cast<size_t>(j)].noalias() += redg * redx.transpose();
                      }
                    }
                    for (int co = 0; co < Cout; ++co)
                      for (int ci = 0; ci < Cin; ++ci) {
                        gw[(int64_t(co) * Cin + ci) * F + 0] += g0(co, ci);
                        for (int j = 0; j < nd; ++j)
                          gw[(int64_t(co) * Cin + ci) * F + 1 + j] += gj[static_cast<size_t>(j)](co, ci) - g0(co, ci);
                      }
                  }
                  if (needs_grad(bias)) {
                    Tensor<T>& gb = grad(bias);
                    for (int b = 0; b < N; ++b)
                      for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (int64_t(b) * Cout + co) * S;
                        T acc = T(0);
                        for (int64_t j = 0; j < S; ++j) acc += gp[j];
                        gb[co] += acc;
                      }
                  }
                });
  }

  // Shared-weight dense map prescribed by an orbit table: for each
  // (c_out, c_in), out[r] += w[slot(table[r,v])] * x[v]; masked entries
  // (slot -1) contribute nothing. x: (N, C_in, in dims...), w: (C_out, C_in,
  // n_slots) -> out (N, C_out, out dims...). The slot table is shared with
  // the backward closure.
  VarId orbit_mix(VarId x, VarId w, VarId bias, std::shared_ptr<const std::vector<int>> slots, int64_t vout,
                  int64_t vin, const std::vector<int>& out_dims) {
    const std::vector<int>& slot_of_pair = *slots;
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const Tensor<T>& vb = val(bias);
    const int N = vx.extent(0), Cin = vx.extent(1);
    if (vx.size() != int64_t(N) * Cin * vin) throw std::invalid_argument("orbit_mix: input space mismatch");
    if (vw.rank() != 3 || vw.extent(1) != Cin) throw std::invalid_argument("orbit_mix: weight shape mismatch");
    const int Cout = vw.extent(0);
    const int nslots = vw.extent(2);
    if (vb.extent(0) != Cout) throw std::invalid_argument("orbit_mix: bias shape mismatch");
    std::vector<int> odims = {N, Cout};
    for (int d : out_dims) odims.push_back(d);
    Tensor<T> out(odims);
    for (int b = 0; b < N; ++b)
      for (int co = 0; co < Cout; ++co) {
        T* op = out.data() + (int64_t(b) * Cout + co) * vout;
        for (int64_t r = 0; r < vout; ++r) op[r] = vb[co];
        for (int ci = 0; ci < Cin; ++ci) {
          const T* wp = vw.data() + (int64_t(co) * Cin + ci) * nslots;
          const T* xp = vx.data() + (int64_t(b) * Cin + ci) * vin;
          const int* tp = slot_of_pair.data();
          for (int64_t r = 0; r < vout; ++r) {
            T acc = T(0);
            const int* trow = tp + r * vin;
            for (int64_t v = 0; v < vin; ++v) {
              const int s = trow[v];
              if (s >= 0) acc += wp[s] * xp[v];
            }
            op[r] += acc;
          }
        }
      }
    return push(std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(bias),
                [this, x, w, bias, slots, vout, vin, N, Cin](VarId self) {
                  const std::vector<int>& slot_of_pair = *slots;
                  const Tensor<T>& g = grad(self);
                  const Tensor<T>& vw = val(w);
                  const int Cout = vw.extent(0);
                  const int nslots = vw.extent(2);
                  if (needs_grad(x)) {
                    Tensor<T>& gx = grad(x);
                    for (int b = 0; b < N; ++b)
                      for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (int64_t(b) * Cout + co) * vout;
                        for (int ci = 0; ci < Cin; ++ci) {
                          const T* wp = vw.data() + (int64_t(co) * Cin + ci) * nslots;
                          T* xp = gx.data() + (int64_t(b) * Cin + ci) * vin;
                          for (int64_t r = 0; r < vout; ++r) {
                            const int* trow = slot_of_pair.data() + r * vin;
                            const T gv = gp[r];
                            for (int64_t v = 0; v < vin; ++v) {
                              const int s = trow[v];
                              if (s >= 0) xp[v] += wp[s] * gv;
                            }
                          }
                        }
                      }
                  }
                  if (needs_grad(w)) {
                    Tensor<T>& gw = grad(w);
                    const Tensor<T>& vx = val(x);
                    for (int b = 0; b < N; ++b)
                      for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (int64_t(b) * Cout + co) * vout;
                        for (int ci = 0; ci < Cin; ++ci) {
                          T* wp = gw.data() + (int64_t(co) * Cin + ci) * nslots;
                          const T* xp = vx.data() + (int64_t(b) * Cin + ci) * vin;
                          for (int64_t r = 0; r < vout; ++r) {
                            const int* trow = slot_of_pair.data() + r * vin;
                            const T gv = gp[r];
                            for (int64_t v = 0; v < vin; ++v) {
                              const int s = trow[v];
                              if (s >= 0) wp[s] += gv * xp[v];
                            }
                          }
                        }
                      }
                  }
                  if (needs_grad(bias)) {
                    Tensor<T>& gb = grad(bias);
                    for (int b = 0; b < N; ++b)
                      for (int co = 0; co < Cout; ++co) {
                        const T* gp = g.data() + (int64_t(b) * Cout + co) * vout;
                        T acc = T(0);
                        for (int64_t r = 0; r < vout; ++r) acc += gp[r];
                        gb[co] += acc;
                      }
                  }
                });
  }

  // Per-channel standardization with statistics pooled over the batch and
  // all set dimensions, which keeps the map exactly permutation-equivariant.
  // On return, *mean_out / *var_out hold the batch statistics per channel.
  VarId batchnorm_train(VarId x, T eps, std::vector<T>* mean_out, std::vector<T>* var_out) {
    const Tensor<T>& vx = val(x);
    if (vx.rank() < 3) throw std::invalid_argument("batchnorm: needs (N, C, dims...)");
    const int N = vx.extent(0), C = vx.extent(1);
    const int64_t S = vx.size() / (int64_t(N) * C);
    const int64_t pooled = int64_t(N) * S;
    std::vector<T> mean(static_cast<size_t>(C), T(0)), var(static_cast<size_t>(C), T(0)), inv(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int b = 0; b < N; ++b) {
        const T* p = vx.data() + (int64_t(b) * C + c) * S;
        for (int64_t j = 0; j < S; ++j) acc += p[j];
      }
      mean[static_cast<size_t>(c)] = acc / static_cast<T>(pooled);
    }
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      const T m = mean[static_cast<size_t>(c)];
      for (int b = 0; b < N; ++b) {
        const T* p = vx.data() + (int64_t(b) * C + c) * S;
        for (int64_t j = 0; j < S; ++j) {
          const T d = p[j] - m;
          acc += d * d;
        }
      }
      var[static_cast<size_t>(c)] = acc / static_cast<T>(pooled);
      inv[static_cast<size_t>(c)] = T(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);
    }
    Tensor<T> out(vx.dims());
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        const T* p = vx.data() + (int64_t(b) * C + c) * S;
        T* q = out.data() + (int64_t(b) * C + c) * S;
        const T m = mean[static_cast<size_t>(c)], r = inv[static_cast<size_t>(c)];
        for (int64_t j = 0; j < S; ++j) q[j] = (p[j] - m) * r;
      }
    if (mean_out) *mean_out = mean;
    if (var_out) *var_out = var;
    return push(std::move(out), needs_grad(x), [this, x, N, C, S, pooled, inv](VarId self) {
      if (!needs_grad(x)) return;
      const Tensor<T>& g = grad(self);
      const Tensor<T>& xhat = val(self);
      Tensor<T>& gx = grad(x);
      for (int c = 0; c < C; ++c) {
        T gsum = T(0), gx_dot = T(0);
        for (int b = 0; b < N; ++b) {
          const T* gp = g.data() + (int64_t(b) * C + c) * S;
          const T* hp = xhat.data() + (int64_t(b) * C + c) * S;
          for (int64_t j = 0; j < S; ++j) {
            gsum += gp[j];
            gx_dot += gp[j] * hp[j];
          }
        }
        const T gmean = gsum / static_cast<T>(pooled);
        const T hmean = gx_dot / static_cast<T>(pooled);
        const T r = inv[static_cast<size_t>(c)];
        for (int b = 0; b < N; ++b) {
          const T* gp = g.data() + (int64_t(b) * C + c) * S;
          const T* hp = xhat.data() + (int64_t(b) * C + c) * S;
          T* op = gx.data() + (int64_t(b) * C + c) * S;
          for (int64_t j = 0; j < S; ++j) op[j] += r * (gp[j] - gmean - hp[j] * hmean);
        }
      }
    });
  }

  // Inference-mode normalization with fixed running statistics.
  VarId batchnorm_eval(VarId x, std::span<const T> mean, std::span<const T> var, T eps) {
    const Tensor<T>& vx = val(x);
    const int N = vx.extent(0), C = vx.extent(1);
    const int64_t S = vx.size() / (int64_t(N) * C);
    if (static_cast<int>(mean.size()) != C || static_cast<int>(var.size()) != C)
      throw std::invalid_argument("batchnorm_eval: stats size mismatch");
    std::vector<T> inv(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) inv[static_cast<size_t>(c)] = T(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);
    Tensor<T> out(vx.dims());
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        const T* p = vx.data() + (int64_t(b) * C + c) * S;
        T* q = out.data() + (int64_t(b) * C + c) * S;
        const T m = mean[static_cast<size_t>(c)], r = inv[static_cast<size_t>(c)];
        for (int64_t j = 0; j < S; ++j) q[j] = (p[j] - m) * r;
      }
    return push(std::move(out), needs_grad(x), [this, x, N, C, S, inv](VarId self) {
      if (!needs_grad(x)) return;
      const Tensor<T>& g = grad(self);
      Tensor<T>& gx = grad(x);
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c) {
          const T* gp = g.data() + (int64_t(b) * C + c) * S;
          T* op = gx.data() + (int64_t(b) * C + c) * S;
          const T r = inv[static_cast<size_t>(c)];
          for (int64_t j = 0; j < S; ++j) op[j] += gp[j] * r;
        }
    });
  }

  void backward(VarId root) {
    Node& r = nodes_[static_cast<size_t>(root)];
    if (r.value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!r.needs_grad) throw std::invalid_argument("backward: root does not depend on any parameter");
    for (Node& n : nodes_)
      if (n.needs_grad && n.grad.size() == 0) n.grad = Tensor<T>(n.value.dims());
    r.grad[0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && n.needs_grad) n.back(static_cast<VarId>(i));
    }
  }

  bool value_finite(VarId id) const {
    const Tensor<T>& v = val(id);
    for (int64_t i = 0; i < v.size(); ++i)
      if (!std::isfinite(static_cast<double>(v[i]))) return false;
    return true;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(VarId)> back;
  };

  std::vector<Node> nodes_;

  VarId push(Tensor<T> v, bool needs, std::function<void(VarId)> back) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), needs, std::move(back)});
    return static_cast<VarId>(nodes_.size() - 1);
  }

  void check_same(VarId a, VarId b) const {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("elementwise op: shape mismatch");
  }

  void accumulate(VarId a, const Tensor<T>& g) {
    if (!needs_grad(a)) return;
    Tensor<T>& ga = grad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  }

  void accumulate_neg(VarId a, const Tensor<T>& g) {
    if (!needs_grad(a)) return;
    Tensor<T>& ga = grad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  }

  // Sums a (C, spatial) block over one spatial axis given its split:
  // dst (C, outer*inner) = sum_i src(C, outer, i, inner).
  static void reduce_axis(const T* src, T* dst, int channels, const AxisSplit& sp) {
    const int64_t s_full = sp.outer * sp.n * sp.inner;
    const int64_t s_red = sp.outer * sp.inner;
    for (int c = 0; c < channels; ++c) {
      const T* sc = src + int64_t(c) * s_full;
      T* dc = dst + int64_t(c) * s_red;
      for (int64_t o = 0; o < sp.outer; ++o) {
        T* drow = dc + o * sp.inner;
        const T* srow = sc + o * sp.n * sp.inner;
        for (int64_t j = 0; j < sp.inner; ++j) drow[j] = srow[j];
        for (int64_t i = 1; i < sp.n; ++i) {
          const T* si = srow + i * sp.inner;
          for (int64_t j = 0; j < sp.inner; ++j) drow[j] += si[j];
        }
      }
    }
  }

  // dst (C, outer, n, inner) += src (C, outer*inner) copied along the axis.
  static void add_broadcast_axis(const T* src, T* dst, int channels, const AxisSplit& sp) {
    const int64_t s_full = sp.outer * sp.n * sp.inner;
    const int64_t s_red = sp.outer * sp.inner;
    for (int c = 0; c < channels; ++c) {
      const T* sc = src + int64_t(c) * s_red;
      T* dc = dst + int64_t(c) * s_full;
      for (int64_t o = 0; o < sp.outer; ++o) {
        const T* srow = sc + o * sp.inner;
        for (int64_t i = 0; i < sp.n; ++i) {
          T* di = dc + (o * sp.n + i) * sp.inner;
          for (int64_t j = 0; j < sp.inner; ++j) di[j] += srow[j];
        }
      }
    }
  }

  static void scatter_broadcast(Tensor<T>& ga, const Tensor<T>& g, int axis, T factor) {
    const AxisSplit s = axis_split(ga.dims(), axis);
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < s.n; ++i) {
        T* dst = ga.data() + (o * s.n + i) * s.inner;
        const T* src = g.data() + o * s.inner;
        for (int64_t j = 0; j < s.inner; ++j) dst[j] += src[j] * factor;
      }
  }

  static Tensor<T> transpose_copy(const Tensor<T>& a, const std::vector<int>& odims) {
    const int r = a.rank();
    const int m = a.extent(r - 2), n = a.extent(r - 1);
    const int64_t outer = a.size() / (int64_t(m) * n);
    Tensor<T> out(odims);
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = a.data() + o * m * n;
      T* dst = out.data() + o * m * n;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dst[int64_t(j) * m + i] = src[int64_t(i) * n + j];
    }
    return out;
  }

  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static void matmul_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    Eigen::Map<RowMat>(c, m, n).noalias() +=
        Eigen::Map<const RowMat>(a, m, k) * Eigen::Map<const RowMat>(b, k, n);
  }

  // c (m x k) += a (m x n) * b^T where b is (k x n)
  static void matmul_nt_acc(const T* a, const T* b, T* c, int m, int n, int k) {
    Eigen::Map<RowMat>(c, m, k).noalias() +=
        Eigen::Map<const RowMat>(a, m, n) * Eigen::Map<const RowMat>(b, k, n).transpose();
  }

  // c (k x n) += a^T * g where a is (m x k), g is (m x n)
  static void matmul_tn_acc(const T* a, const T* g, T* c, int m, int k, int n) {
    Eigen::Map<RowMat>(c, k, n).noalias() +=
        Eigen::Map<const RowMat>(a, m, k).transpose() * Eigen::Map<const RowMat>(g, m, n);
  }
};

}  // namespace equinet
