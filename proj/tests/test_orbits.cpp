#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "equinet/orbits.hpp"

using namespace equinet;

namespace {

SetSignature independent_sets(std::initializer_list<int> sizes) {
  SetSignature sig;
  for (int s : sizes) sig.sets.push_back({s, {}});
  return sig;
}

AxisSpace axes(std::initializer_list<int> refs) {
  AxisSpace a;
  a.set_refs = refs;
  return a;
}

// Independent oracle for small signatures: classify every (out, in) pair by
// its invariant pattern and count distinct classes. For independent and
// nested sets the invariant is per-axis equality plus sub-set co-membership;
// for jointly permuted sets it is the full equality pattern across all
// positions indexing the shared set.
int pattern_orbit_count(const SetSignature& sig, const AxisSpace& out_space, const AxisSpace& in_space) {
  const std::vector<int> odims = out_space.extents(sig);
  const std::vector<int> idims = in_space.extents(sig);
  const int64_t vout = numel_of(odims), vin = numel_of(idims);
  auto decode = [](std::span<const int> dims, int64_t flat) {
    std::vector<int> idx(dims.size());
    for (size_t a = dims.size(); a-- > 0;) {
      idx[a] = static_cast<int>(flat % dims[a]);
      flat /= dims[a];
    }
    return idx;
  };
  auto sub_block = [&](int set_ref, int coord) {
    const SetDesc& d = sig.sets[static_cast<size_t>(set_ref)];
    if (!d.nested()) return 0;
    int off = 0, blk = 0;
    for (int b : d.sub_sizes) {
      if (coord < off + b) return blk;
      off += b;
      ++blk;
    }
    return -1;
  };
  std::set<std::vector<int>> classes;
  for (int64_t r = 0; r < vout; ++r)
    for (int64_t c = 0; c < vin; ++c) {
      const std::vector<int> oi = decode(odims, r);
      const std::vector<int> ii = decode(idims, c);
      // positions: all axes of out then in, grouped by the set they index
      // (joint groups collapse to one group id).
      std::vector<std::pair<int, int>> pos;  // (group id, coordinate)
      auto group_of = [&](int set_ref) {
        const int jg = sig.joint_group_of(set_ref);
        return jg >= 0 ? 1000 + jg : set_ref;
      };
      for (size_t a = 0; a < oi.size(); ++a) pos.push_back({group_of(out_space.set_refs[a]), oi[a]});
      for (size_t a = 0; a < ii.size(); ++a) pos.push_back({group_of(in_space.set_refs[a]), ii[a]});
      // signature of the pair: for every pair of positions in the same
      // group, whether coordinates are equal; plus nested block equality
      // and per-position block id.
      std::vector<int> sigv;
      for (size_t x = 0; x < pos.size(); ++x)
        for (size_t y = x + 1; y < pos.size(); ++y) {
          if (pos[x].first != pos[y].first) {
            sigv.push_back(-1);
            continue;
          }
          sigv.push_back(pos[x].second == pos[y].second ? 1 : 0);
        }
      // nested: record block co-membership of every same-set position pair
      for (size_t x = 0; x < pos.size(); ++x)
        for (size_t y = x + 1; y < pos.size(); ++y) {
          if (pos[x].first != pos[y].first || pos[x].first >= 1000) {
            sigv.push_back(-1);
            continue;
          }
          const int bx = sub_block(pos[x].first, pos[x].second);
          const int by = sub_block(pos[y].first, pos[y].second);
          sigv.push_back(bx == by ? 1 : 0);
        }
      classes.insert(sigv);
    }
  return static_cast<int>(classes.size());
}

}  // namespace

TEST_CASE("orbit counts match the structural constants") {
  // 3 independent sets, square map: 2^3 orbits, 4 after masking
  {
    SetSignature sig = independent_sets({3, 3, 3});
    OrbitBasis b = enumerate_orbits(sig, axes({0, 1, 2}), axes({0, 1, 2}));
    CHECK(b.orbit_count() == 8);
    OrbitBasis m = adjacency_mask(b);
    CHECK(m.retained_count() == 4);
  }
  // 2 independent sets: 4 orbits, 3 retained
  {
    SetSignature sig = independent_sets({3, 3});
    OrbitBasis b = enumerate_orbits(sig, axes({0, 1}), axes({0, 1}));
    CHECK(b.orbit_count() == 4);
    CHECK(b.orbit_count() == pattern_orbit_count(sig, axes({0, 1}), axes({0, 1})));
    CHECK(adjacency_mask(b).retained_count() == 3);
  }
  // 4 independent sets: 16 orbits, 5 retained
  {
    SetSignature sig = independent_sets({2, 2, 2, 2});
    OrbitBasis b = enumerate_orbits(sig, axes({0, 1, 2, 3}), axes({0, 1, 2, 3}));
    CHECK(b.orbit_count() == 16);
    CHECK(adjacency_mask(b).retained_count() == 5);
  }
  // joint pair of size-K sets, square map: 15 orbits at K>=4, 8 retained
  {
    SetSignature sig = independent_sets({4, 4});
    sig.joint_groups = {{0, 1}};
    OrbitBasis b = enumerate_orbits(sig, axes({0, 1}), axes({0, 1}));
    CHECK(b.orbit_count() == 15);
    CHECK(b.orbit_count() == pattern_orbit_count(sig, axes({0, 1}), axes({0, 1})));
    CHECK(adjacency_mask(b).retained_count() == 8);
  }
  // same joint group, map (K,K) -> (K): 5 orbits at K=4
  {
    SetSignature sig = independent_sets({4, 4});
    sig.joint_groups = {{0, 1}};
    OrbitBasis b = enumerate_orbits(sig, axes({0}), axes({0, 1}));
    CHECK(b.orbit_count() == 5);
    CHECK(b.orbit_count() == pattern_orbit_count(sig, axes({0}), axes({0, 1})));
  }
  // nested antennas (2 sub-sets of 3) x independent users (K=3): 6 orbits, 4 retained
  {
    SetSignature sig;
    sig.sets = {{3, {}}, {6, {3, 3}}};
    OrbitBasis b = enumerate_orbits(sig, axes({0, 1}), axes({0, 1}));
    CHECK(b.orbit_count() == 6);
    CHECK(b.orbit_count() == pattern_orbit_count(sig, axes({0, 1}), axes({0, 1})));
    CHECK(adjacency_mask(b).retained_count() == 4);
  }
}

TEST_CASE("small-size joint enumeration reports the true count") {
  // At K=3 the all-distinct 4-tuple pattern vanishes: 14 orbits, not 15.
  SetSignature sig = independent_sets({3, 3});
  sig.joint_groups = {{0, 1}};
  OrbitBasis b = enumerate_orbits(sig, axes({0, 1}), axes({0, 1}));
  CHECK(b.orbit_count() == 14);
  CHECK(b.orbit_count() == pattern_orbit_count(sig, axes({0, 1}), axes({0, 1})));
}

TEST_CASE("orbits partition the pair space") {
  SetSignature sig = independent_sets({3, 4});
  OrbitBasis b = enumerate_orbits(sig, axes({0, 1}), axes({0, 1}));
  int64_t total = 0;
  for (const OrbitDesc& o : b.orbits()) total += o.count;
  CHECK(total == b.out_size() * b.in_size());
}

TEST_CASE("adjacency_mask is idempotent and validates spaces") {
  SetSignature sig = independent_sets({3, 3});
  OrbitBasis b = adjacency_mask(enumerate_orbits(sig, axes({0, 1}), axes({0, 1})));
  OrbitBasis b2 = adjacency_mask(b);
  for (int i = 0; i < b.orbit_count(); ++i) CHECK(b.orbits()[i].masked == b2.orbits()[i].masked);
  OrbitBasis rect = enumerate_orbits(sig, axes({0}), axes({0, 1}));
  CHECK_THROWS_AS(adjacency_mask(rect), std::invalid_argument);
}

TEST_CASE("materialize_operator reproduces the sharing patterns") {
  // 1D, extent 2: [[p, s], [s, p]]
  {
    SetSignature sig = independent_sets({2});
    OrbitBasis b = enumerate_orbits(sig, axes({0}), axes({0}));
    REQUIRE(b.retained_count() == 2);
    // slot order: orbit of (0,0) then orbit of (0,1)
    std::vector<double> w(2);
    w[static_cast<size_t>(b.weight_slots()[static_cast<size_t>(b.orbit_of(std::vector<int>{0}, std::vector<int>{0}))])] = 2.0;  // p
    w[static_cast<size_t>(b.weight_slots()[static_cast<size_t>(b.orbit_of(std::vector<int>{0}, std::vector<int>{1}))])] = 3.0;  // s
    Tensor<double> p = materialize_operator<double>(b, w);
    CHECK(p.at({0, 0}) == 2.0);
    CHECK(p.at({0, 1}) == 3.0);
    CHECK(p.at({1, 0}) == 3.0);
    CHECK(p.at({1, 1}) == 2.0);
  }
  // 2D (2,2): entries depend only on the same/diff row-col pattern
  {
    SetSignature sig = independent_sets({2, 2});
    OrbitBasis b = enumerate_orbits(sig, axes({0, 1}), axes({0, 1}));
    REQUIRE(b.retained_count() == 4);
    std::vector<double> w = {1.0, 2.0, 3.0, 4.0};
    Tensor<double> p = materialize_operator<double>(b, w);
    std::map<std::pair<bool, bool>, double> seen;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const bool same_row = (r / 2) == (c / 2);
        const bool same_col = (r % 2) == (c % 2);
        auto key = std::make_pair(same_row, same_col);
        if (!seen.count(key))
          seen[key] = p[r * 4 + c];
        else
          CHECK(seen[key] == p[r * 4 + c]);
      }
    CHECK(seen.size() == 4);
  }
  // masked 3D at (2,2,2) with random weights: exactly 4 distinct nonzero values
  {
    SetSignature sig = independent_sets({2, 2, 2});
    OrbitBasis b = adjacency_mask(enumerate_orbits(sig, axes({0, 1, 2}), axes({0, 1, 2})));
    REQUIRE(b.retained_count() == 4);
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    std::vector<double> w(4);
    for (double& x : w) x = u(rng);
    Tensor<double> p = materialize_operator<double>(b, w);
    std::set<double> nonzero;
    for (int64_t i = 0; i < p.size(); ++i)
      if (p[i] != 0.0) nonzero.insert(p[i]);
    CHECK(nonzero.size() == 4);
  }
  // weight count mismatch
  {
    SetSignature sig = independent_sets({2});
    OrbitBasis b = enumerate_orbits(sig, axes({0}), axes({0}));
    std::vector<double> w = {1.0};
    CHECK_THROWS_AS(materialize_operator<double>(b, w), std::invalid_argument);
  }
}

TEST_CASE("materialized operators commute with the group, random matrices do not") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1);

  auto check_sig = [&](const SetSignature& sig, const AxisSpace& space, bool mask) {
    OrbitBasis b = enumerate_orbits(sig, space, space);
    if (mask) b = adjacency_mask(b);
    std::vector<double> w(static_cast<size_t>(b.retained_count()));
    for (double& x : w) x = u(rng);
    const Tensor<double> p = materialize_operator<double>(b, w);
    CHECK(check_commutation(p, sig, space, 100, rng));
    Tensor<double> r({static_cast<int>(b.out_size()), static_cast<int>(b.in_size())});
    for (int64_t i = 0; i < r.size(); ++i) r[i] = u(rng);
    CHECK_FALSE(check_commutation(r, sig, space, 20, rng));
  };

  check_sig(independent_sets({3, 2}), axes({0, 1}), false);
  check_sig(independent_sets({2, 3, 2}), axes({0, 1, 2}), true);
  SetSignature joint = independent_sets({4, 4});
  joint.joint_groups = {{0, 1}};
  check_sig(joint, axes({0, 1}), true);
  SetSignature nested;
  nested.sets = {{3, {}}, {6, {3, 3}}};
  check_sig(nested, axes({0, 1}), true);

  // identity permutations commute with anything
  SetSignature sig = independent_sets({2, 2});
  AxisSpace space = axes({0, 1});
  Tensor<double> any({4, 4});
  for (int64_t i = 0; i < any.size(); ++i) any[i] = u(rng);
  const GroupElement id = identity_element(sig);
  const std::vector<int> dims = space.extents(sig);
  bool ok = true;
  for (int64_t r = 0; r < 4 && ok; ++r)
    for (int64_t c = 0; c < 4; ++c) {
      const int64_t rm = apply_to_flat(id, sig, space, dims, r);
      const int64_t cm = apply_to_flat(id, sig, space, dims, c);
      if (any[rm * 4 + cm] != any[r * 4 + c]) {
        ok = false;
        break;
      }
    }
  CHECK(ok);
}

TEST_CASE("enumerate_orbits rejects bad inputs") {
  SetSignature sig = independent_sets({2});
  CHECK_THROWS_AS(enumerate_orbits(sig, AxisSpace{}, axes({0})), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_orbits(sig, axes({1}), axes({0})), std::invalid_argument);
  SetSignature bad;
  bad.sets = {{5, {2, 2}}};
  CHECK_THROWS_AS(enumerate_orbits(bad, axes({0}), axes({0})), std::invalid_argument);
}

TEST_CASE("orbit basis JSON export names ids and masks") {
  SetSignature sig = independent_sets({2, 2});
  OrbitBasis b = adjacency_mask(enumerate_orbits(sig, axes({0, 1}), axes({0, 1})));
  const std::string j = b.to_json();
  CHECK(j.find("\"orbit_count\": 4") != std::string::npos);
  CHECK(j.find("\"retained_count\": 3") != std::string::npos);
}
