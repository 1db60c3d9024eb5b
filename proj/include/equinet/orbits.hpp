#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "equinet/signature.hpp"
#include "equinet/tensor.hpp"

namespace equinet {

struct OrbitDesc {
  int id = 0;
  int64_t rep_out = 0;  // smallest member pair, flat indices
  int64_t rep_in = 0;
  int64_t count = 0;
  bool masked = false;
};

// Equivalence classes of weight positions of an equivariant linear map
// vec(out_space) <- vec(in_space) under the signature's group. One trainable
// scalar per retained orbit.
class OrbitBasis {
 public:
  OrbitBasis() = default;
  OrbitBasis(SetSignature sig, AxisSpace out_space, AxisSpace in_space, std::vector<int32_t> table,
             std::vector<OrbitDesc> orbits);

  const SetSignature& signature() const { return sig_; }
  const AxisSpace& out_space() const { return out_space_; }
  const AxisSpace& in_space() const { return in_space_; }
  const std::vector<int>& out_dims() const { return out_dims_; }
  const std::vector<int>& in_dims() const { return in_dims_; }
  int64_t out_size() const { return out_size_; }
  int64_t in_size() const { return in_size_; }

  int orbit_count() const { return static_cast<int>(orbits_.size()); }
  int retained_count() const;
  const std::vector<OrbitDesc>& orbits() const { return orbits_; }
  int32_t orbit_at(int64_t out_flat, int64_t in_flat) const {
    return table_[static_cast<size_t>(out_flat * in_size_ + in_flat)];
  }
  const std::vector<int32_t>& table() const { return table_; }

  // Maps retained orbits to dense weight slots 0..retained-1 (in orbit-id
  // order); masked orbits map to -1.
  std::vector<int> weight_slots() const;

  // Orbit id of the pair formed by two index tuples.
  int32_t orbit_of(std::span<const int> out_idx, std::span<const int> in_idx) const;

  std::string to_json() const;

 private:
  SetSignature sig_;
  AxisSpace out_space_, in_space_;
  std::vector<int> out_dims_, in_dims_;
  int64_t out_size_ = 0, in_size_ = 0;
  std::vector<int32_t> table_;
  std::vector<OrbitDesc> orbits_;
};

// Enumerates the orbits of the group action on (out, in) index pairs by
// union-find over the full pair table under the signature's generators.
// Orbit ids are canonical by smallest member pair.
OrbitBasis enumerate_orbits(const SetSignature& sig, const AxisSpace& out_space, const AxisSpace& in_space);

// Zeroes orbits whose hyper-edges are not adjacent: representative index
// tuples may differ in at most one axis (self plus one-coordinate
// neighbors). Requires out and in spaces with identical set composition.
OrbitBasis adjacency_mask(const OrbitBasis& basis);

// Dense weight matrix in vec coordinates; masked orbits contribute zero.
// `weights` holds one value per retained orbit, in weight-slot order.
template <typename T>
Tensor<T> materialize_operator(const OrbitBasis& basis, std::span<const T> weights);

// True iff Q P == P Q exactly for `trials` random group elements (and the
// identity), where Q permutes vec coordinates per the signature. P must be
// square over the vec space of a shared out/in space.
bool check_commutation(const Tensor<double>& P, const SetSignature& sig, const AxisSpace& space, int trials,
                       std::mt19937_64& rng);

}  // namespace equinet
