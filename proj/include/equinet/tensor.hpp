#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace equinet {

// Dense row-major tensor with the last index varying fastest:
//   flat(i_1,...,i_n) = sum_k i_k * prod_{m>k} dims_m.
// Complex data is represented as paired real channels or a trailing
// extent-2 axis; there is no native complex tensor.

inline int64_t numel_of(std::span<const int> dims) {
  int64_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= d;
  }
  return n;
}

inline int64_t flat_index(std::span<const int> dims, std::span<const int> idx) {
  if (dims.size() != idx.size()) throw std::invalid_argument("flat_index: rank mismatch");
  int64_t f = 0;
  for (size_t k = 0; k < dims.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= dims[k]) throw std::out_of_range("flat_index: index out of range");
    f = f * dims[k] + idx[k];
  }
  return f;
}

// Bijection on {0,...,size-1}. permute_along uses out[..,i,..] = in[..,pi(i),..].
class Permutation {
 public:
  explicit Permutation(std::vector<int> map) : map_(std::move(map)) {
    std::vector<char> seen(map_.size(), 0);
    for (int v : map_) {
      if (v < 0 || v >= static_cast<int>(map_.size()) || seen[v])
        throw std::invalid_argument("permutation map is not a bijection");
      seen[v] = 1;
    }
  }

  static Permutation identity(int n) {
    std::vector<int> m(n);
    for (int i = 0; i < n; ++i) m[i] = i;
    return Permutation(std::move(m));
  }

  static Permutation reversal(int n) {
    std::vector<int> m(n);
    for (int i = 0; i < n; ++i) m[i] = n - 1 - i;
    return Permutation(std::move(m));
  }

  static Permutation transposition(int n, int a, int b) {
    Permutation p = identity(n);
    std::swap(p.map_[a], p.map_[b]);
    return p;
  }

  template <typename Rng>
  static Permutation random(int n, Rng& rng) {
    Permutation p = identity(n);
    for (int i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<int> d(0, i);
      std::swap(p.map_[i], p.map_[d(rng)]);
    }
    return p;
  }

  int size() const { return static_cast<int>(map_.size()); }
  int operator()(int i) const { return map_[i]; }
  const std::vector<int>& map() const { return map_; }

  Permutation inverse() const {
    std::vector<int> inv(map_.size());
    for (size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = static_cast<int>(i);
    return Permutation(std::move(inv));
  }

  bool is_identity() const {
    for (size_t i = 0; i < map_.size(); ++i)
      if (map_[i] != static_cast<int>(i)) return false;
    return true;
  }

 private:
  std::vector<int> map_;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims)
      : dims_(std::move(dims)), data_(static_cast<size_t>(numel_of(dims_)), T(0)) {}

  Tensor(std::vector<int> dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != numel_of(dims_))
      throw std::invalid_argument("tensor data length does not match extents");
  }

  static Tensor full(std::vector<int> dims, T v) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int extent(int axis) const { return dims_.at(static_cast<size_t>(axis)); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t flat) { return data_[static_cast<size_t>(flat)]; }
  const T& operator[](int64_t flat) const { return data_[static_cast<size_t>(flat)]; }

  T& at(std::span<const int> idx) { return data_[static_cast<size_t>(flat_index(dims_, idx))]; }
  const T& at(std::span<const int> idx) const { return data_[static_cast<size_t>(flat_index(dims_, idx))]; }
  T& at(std::initializer_list<int> idx) { return at(std::span<const int>(idx.begin(), idx.size())); }
  const T& at(std::initializer_list<int> idx) const { return at(std::span<const int>(idx.begin(), idx.size())); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(dims_);
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

 private:
  std::vector<int> dims_;
  std::vector<T> data_;
};

struct AxisSplit {
  int64_t outer;
  int64_t n;
  int64_t inner;
};

inline AxisSplit axis_split(std::span<const int> dims, int axis) {
  if (axis < 0 || axis >= static_cast<int>(dims.size())) throw std::out_of_range("axis out of range");
  AxisSplit s{1, dims[axis], 1};
  for (int k = 0; k < axis; ++k) s.outer *= dims[k];
  for (size_t k = axis + 1; k < dims.size(); ++k) s.inner *= dims[k];
  return s;
}

template <typename T>
Tensor<T> permute_along(const Tensor<T>& t, int axis, const Permutation& pi) {
  const AxisSplit s = axis_split(t.dims(), axis);
  if (pi.size() != static_cast<int>(s.n)) throw std::invalid_argument("permute_along: size mismatch");
  Tensor<T> out(t.dims());
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.n; ++i) {
      const T* src = t.data() + (o * s.n + pi(static_cast<int>(i))) * s.inner;
      T* dst = out.data() + (o * s.n + i) * s.inner;
      for (int64_t j = 0; j < s.inner; ++j) dst[j] = src[j];
    }
  return out;
}

// Sum over all positions along `axis` except self: out_i = (sum_j x_j) - x_i.
template <typename T>
Tensor<T> neighbor_sum(const Tensor<T>& t, int axis) {
  const AxisSplit s = axis_split(t.dims(), axis);
  Tensor<T> out(t.dims());
  std::vector<T> total(static_cast<size_t>(s.inner));
  for (int64_t o = 0; o < s.outer; ++o) {
    std::fill(total.begin(), total.end(), T(0));
    for (int64_t i = 0; i < s.n; ++i) {
      const T* src = t.data() + (o * s.n + i) * s.inner;
      for (int64_t j = 0; j < s.inner; ++j) total[static_cast<size_t>(j)] += src[j];
    }
    for (int64_t i = 0; i < s.n; ++i) {
      const T* src = t.data() + (o * s.n + i) * s.inner;
      T* dst = out.data() + (o * s.n + i) * s.inner;
      for (int64_t j = 0; j < s.inner; ++j) dst[j] = total[static_cast<size_t>(j)] - src[j];
    }
  }
  return out;
}

// Sum along axis; the axis is dropped from the result.
template <typename T>
Tensor<T> sum_along(const Tensor<T>& t, int axis) {
  const AxisSplit s = axis_split(t.dims(), axis);
  std::vector<int> odims;
  for (int k = 0; k < t.rank(); ++k)
    if (k != axis) odims.push_back(t.extent(k));
  if (odims.empty()) odims.push_back(1);
  Tensor<T> out(odims);
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.n; ++i) {
      const T* src = t.data() + (o * s.n + i) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (int64_t j = 0; j < s.inner; ++j) dst[j] += src[j];
    }
  return out;
}

template <typename T>
Tensor<T> mean_along(const Tensor<T>& t, int axis) {
  const AxisSplit s = axis_split(t.dims(), axis);
  Tensor<T> out = sum_along(t, axis);
  const T inv = T(1) / static_cast<T>(s.n);
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

// 0/1 matrix P with P[i, pi(i)] = 1, so P * vec(x) reproduces permute_along
// on a one-axis tensor.
template <typename T = double>
Tensor<T> materialize_perm_matrix(const Permutation& pi) {
  const int n = pi.size();
  Tensor<T> m({n, n});
  for (int i = 0; i < n; ++i) m.at({i, pi(i)}) = T(1);
  return m;
}

}  // namespace equinet
