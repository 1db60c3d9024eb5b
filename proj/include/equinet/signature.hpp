#pragma once

#include <random>
#include <string>
#include <vector>

#include "equinet/tensor.hpp"

namespace equinet {

// One set of permutable elements. A plain set permutes freely; a nested set
// permutes within each sub-set and may swap equal-size sub-sets as blocks.
struct SetDesc {
  int size = 0;
  std::vector<int> sub_sizes;  // empty for a plain (independent) set

  bool nested() const { return !sub_sizes.empty(); }
};

// The sets of a permutable problem. Sets listed in one joint group are
// constrained to share a single permutation (they must have equal size).
struct SetSignature {
  std::vector<SetDesc> sets;
  std::vector<std::vector<int>> joint_groups;

  void validate() const;
  // Index of the joint group containing `set`, or -1.
  int joint_group_of(int set) const;
};

// A concrete symmetry-group element: one permutation per set (members of a
// joint group carry identical permutations).
struct GroupElement {
  std::vector<Permutation> per_set;
};

// Generators of the signature's group: transpositions within plain sets and
// sub-sets, block swaps of equal-size adjacent sub-sets, and simultaneous
// transpositions across joint groups.
std::vector<GroupElement> group_generators(const SetSignature& sig);

GroupElement random_group_element(const SetSignature& sig, std::mt19937_64& rng);

GroupElement identity_element(const SetSignature& sig);

// Hidden/feature spaces are tuples of axes, each axis referencing a set.
struct AxisSpace {
  std::vector<int> set_refs;

  std::vector<int> extents(const SetSignature& sig) const {
    std::vector<int> e;
    e.reserve(set_refs.size());
    for (int r : set_refs) e.push_back(sig.sets.at(static_cast<size_t>(r)).size);
    return e;
  }
};

// Applies the element coordinate-wise: idx'_a = pi_{set(a)}(idx_a), returning
// the flat position in the space's row-major order.
int64_t apply_to_flat(const GroupElement& g, const SetSignature& sig, const AxisSpace& space,
                      std::span<const int> dims, int64_t flat);

}  // namespace equinet
