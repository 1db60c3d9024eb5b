#include "equinet/signature.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace equinet {

void SetSignature::validate() const {
  if (sets.empty()) throw std::invalid_argument("signature has no sets");
  for (const SetDesc& s : sets) {
    if (s.size <= 0) throw std::invalid_argument("set size must be positive");
    if (s.nested()) {
      int sum = 0;
      for (int b : s.sub_sizes) {
        if (b <= 0) throw std::invalid_argument("sub-set size must be positive");
        sum += b;
      }
      if (sum != s.size) throw std::invalid_argument("nested sub-set sizes must sum to the set size");
    }
  }
  std::vector<char> grouped(sets.size(), 0);
  for (const auto& g : joint_groups) {
    if (g.size() < 2) throw std::invalid_argument("joint group needs at least two sets");
    int sz = -1;
    for (int idx : g) {
      if (idx < 0 || idx >= static_cast<int>(sets.size()))
        throw std::invalid_argument("joint group references unknown set");
      if (grouped[idx]) throw std::invalid_argument("set appears in more than one joint group");
      grouped[idx] = 1;
      if (sets[idx].nested()) throw std::invalid_argument("nested sets cannot join a joint group");
      if (sz < 0) sz = sets[idx].size;
      if (sets[idx].size != sz) throw std::invalid_argument("joint group sets must have equal size");
    }
  }
}

int SetSignature::joint_group_of(int set) const {
  for (size_t g = 0; g < joint_groups.size(); ++g)
    for (int idx : joint_groups[g])
      if (idx == set) return static_cast<int>(g);
  return -1;
}

namespace {

// Generators of the wreath-product action on one nested set: transpositions
// within each sub-set plus block swaps of equal-size adjacent sub-sets.
std::vector<Permutation> nested_generators(const SetDesc& s) {
  std::vector<Permutation> gens;
  std::vector<int> offsets(1, 0);
  for (int b : s.sub_sizes) offsets.push_back(offsets.back() + b);
  for (size_t k = 0; k < s.sub_sizes.size(); ++k)
    for (int t = 0; t + 1 < s.sub_sizes[k]; ++t)
      gens.push_back(Permutation::transposition(s.size, offsets[k] + t, offsets[k] + t + 1));
  for (size_t k = 0; k + 1 < s.sub_sizes.size(); ++k) {
    if (s.sub_sizes[k] != s.sub_sizes[k + 1]) continue;
    std::vector<int> m(static_cast<size_t>(s.size));
    for (int i = 0; i < s.size; ++i) m[static_cast<size_t>(i)] = i;
    for (int t = 0; t < s.sub_sizes[k]; ++t) {
      m[static_cast<size_t>(offsets[k] + t)] = offsets[k + 1] + t;
      m[static_cast<size_t>(offsets[k + 1] + t)] = offsets[k] + t;
    }
    gens.emplace_back(std::move(m));
  }
  return gens;
}

Permutation random_nested_permutation(const SetDesc& s, std::mt19937_64& rng) {
  std::vector<int> offsets(1, 0);
  for (int b : s.sub_sizes) offsets.push_back(offsets.back() + b);
  // Equal-size sub-sets may trade places; group them by size.
  std::map<int, std::vector<int>> by_size;
  for (size_t k = 0; k < s.sub_sizes.size(); ++k) by_size[s.sub_sizes[k]].push_back(static_cast<int>(k));
  std::vector<int> block_target(s.sub_sizes.size());
  for (auto& [sz, blocks] : by_size) {
    std::vector<int> shuffled = blocks;
    for (int i = static_cast<int>(shuffled.size()) - 1; i > 0; --i) {
      std::uniform_int_distribution<int> d(0, i);
      std::swap(shuffled[static_cast<size_t>(i)], shuffled[static_cast<size_t>(d(rng))]);
    }
    for (size_t i = 0; i < blocks.size(); ++i) block_target[static_cast<size_t>(blocks[i])] = shuffled[i];
  }
  std::vector<int> m(static_cast<size_t>(s.size));
  for (size_t k = 0; k < s.sub_sizes.size(); ++k) {
    Permutation within = Permutation::random(s.sub_sizes[k], rng);
    const int src = offsets[block_target[k]];
    for (int t = 0; t < s.sub_sizes[k]; ++t) m[static_cast<size_t>(offsets[k] + t)] = src + within(t);
  }
  return Permutation(std::move(m));
}

}  // namespace

std::vector<GroupElement> group_generators(const SetSignature& sig) {
  sig.validate();
  std::vector<GroupElement> gens;
  auto identity = [&] {
    GroupElement e;
    for (const SetDesc& s : sig.sets) e.per_set.push_back(Permutation::identity(s.size));
    return e;
  };
  std::vector<char> handled(sig.sets.size(), 0);
  for (const auto& g : sig.joint_groups) {
    const int n = sig.sets[static_cast<size_t>(g[0])].size;
    for (int t = 0; t + 1 < n; ++t) {
      GroupElement e = identity();
      for (int idx : g) e.per_set[static_cast<size_t>(idx)] = Permutation::transposition(n, t, t + 1);
      gens.push_back(std::move(e));
    }
    for (int idx : g) handled[static_cast<size_t>(idx)] = 1;
  }
  for (size_t s = 0; s < sig.sets.size(); ++s) {
    if (handled[s]) continue;
    const SetDesc& d = sig.sets[s];
    if (d.nested()) {
      for (Permutation& p : nested_generators(d)) {
        GroupElement e = identity();
        e.per_set[s] = std::move(p);
        gens.push_back(std::move(e));
      }
    } else {
      for (int t = 0; t + 1 < d.size; ++t) {
        GroupElement e = identity();
        e.per_set[s] = Permutation::transposition(d.size, t, t + 1);
        gens.push_back(std::move(e));
      }
    }
  }
  return gens;
}

GroupElement random_group_element(const SetSignature& sig, std::mt19937_64& rng) {
  GroupElement e = identity_element(sig);
  std::vector<char> handled(sig.sets.size(), 0);
  for (const auto& g : sig.joint_groups) {
    Permutation shared = Permutation::random(sig.sets[static_cast<size_t>(g[0])].size, rng);
    for (int idx : g) {
      e.per_set[static_cast<size_t>(idx)] = shared;
      handled[static_cast<size_t>(idx)] = 1;
    }
  }
  for (size_t s = 0; s < sig.sets.size(); ++s) {
    if (handled[s]) continue;
    const SetDesc& d = sig.sets[s];
    e.per_set[s] = d.nested() ? random_nested_permutation(d, rng) : Permutation::random(d.size, rng);
  }
  return e;
}

GroupElement identity_element(const SetSignature& sig) {
  GroupElement e;
  for (const SetDesc& s : sig.sets) e.per_set.push_back(Permutation::identity(s.size));
  return e;
}

int64_t apply_to_flat(const GroupElement& g, const SetSignature& sig, const AxisSpace& space,
                      std::span<const int> dims, int64_t flat) {
  (void)sig;
  // Decode row-major (last index fastest), map per axis, re-encode.
  int64_t out = 0;
  // Walk axes from last to first to decode, accumulating strides.
  const size_t n = space.set_refs.size();
  int64_t rem = flat;
  int64_t stride = 1;
  for (size_t a = n; a-- > 0;) {
    const int extent = dims[a];
    const int coord = static_cast<int>(rem % extent);
    rem /= extent;
    const Permutation& pi = g.per_set[static_cast<size_t>(space.set_refs[a])];
    out += static_cast<int64_t>(pi(coord)) * stride;
    stride *= extent;
  }
  return out;
}

}  // namespace equinet
