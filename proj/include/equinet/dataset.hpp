#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "equinet/tensor.hpp"

namespace equinet {

// A bag of named tensors sharing the sample axis (axis 0).
template <typename T>
struct Dataset {
  int64_t n = 0;
  std::map<std::string, Tensor<T>> fields;

  const Tensor<T>& field(const std::string& name) const {
    auto it = fields.find(name);
    if (it == fields.end()) throw std::invalid_argument("dataset is missing field '" + name + "'");
    return it->second;
  }

  bool has(const std::string& name) const { return fields.count(name) > 0; }

  void add(const std::string& name, Tensor<T> t) {
    if (t.rank() < 1 || t.extent(0) != n) throw std::invalid_argument("dataset field '" + name + "' sample-axis mismatch");
    fields[name] = std::move(t);
  }

  Dataset gather(std::span<const int64_t> ids) const {
    Dataset out;
    out.n = static_cast<int64_t>(ids.size());
    for (const auto& [name, t] : fields) {
      std::vector<int> dims = t.dims();
      dims[0] = static_cast<int>(ids.size());
      Tensor<T> g(dims);
      const int64_t inner = t.size() / t.extent(0);
      for (size_t i = 0; i < ids.size(); ++i) {
        const T* src = t.data() + ids[i] * inner;
        T* dst = g.data() + static_cast<int64_t>(i) * inner;
        for (int64_t j = 0; j < inner; ++j) dst[j] = src[j];
      }
      out.fields[name] = std::move(g);
    }
    return out;
  }

  Dataset slice(int64_t start, int64_t count) const {
    std::vector<int64_t> ids(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) ids[static_cast<size_t>(i)] = start + i;
    return gather(ids);
  }

  template <typename U>
  Dataset<U> cast() const {
    Dataset<U> out;
    out.n = n;
    for (const auto& [name, t] : fields) out.fields[name] = t.template cast<U>();
    return out;
  }
};

}  // namespace equinet
