#include "equinet/orbits.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace equinet {

namespace {

struct Dsu {
  std::vector<int64_t> parent;

  explicit Dsu(int64_t n) : parent(static_cast<size_t>(n)) {
    std::iota(parent.begin(), parent.end(), int64_t{0});
  }

  int64_t find(int64_t x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  }

  void unite(int64_t a, int64_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);  // keep the smaller id as root for canonical reps
    parent[static_cast<size_t>(a)] = b;
  }
};

std::vector<int> decode(std::span<const int> dims, int64_t flat) {
  std::vector<int> idx(dims.size());
  for (size_t a = dims.size(); a-- > 0;) {
    idx[a] = static_cast<int>(flat % dims[a]);
    flat /= dims[a];
  }
  return idx;
}

}  // namespace

OrbitBasis::OrbitBasis(SetSignature sig, AxisSpace out_space, AxisSpace in_space, std::vector<int32_t> table,
                       std::vector<OrbitDesc> orbits)
    : sig_(std::move(sig)),
      out_space_(std::move(out_space)),
      in_space_(std::move(in_space)),
      table_(std::move(table)),
      orbits_(std::move(orbits)) {
  out_dims_ = out_space_.extents(sig_);
  in_dims_ = in_space_.extents(sig_);
  out_size_ = numel_of(out_dims_);
  in_size_ = numel_of(in_dims_);
}

int OrbitBasis::retained_count() const {
  int n = 0;
  for (const OrbitDesc& o : orbits_)
    if (!o.masked) ++n;
  return n;
}

std::vector<int> OrbitBasis::weight_slots() const {
  std::vector<int> slots(orbits_.size(), -1);
  int next = 0;
  for (size_t i = 0; i < orbits_.size(); ++i)
    if (!orbits_[i].masked) slots[i] = next++;
  return slots;
}

int32_t OrbitBasis::orbit_of(std::span<const int> out_idx, std::span<const int> in_idx) const {
  return orbit_at(flat_index(out_dims_, out_idx), flat_index(in_dims_, in_idx));
}

std::string OrbitBasis::to_json() const {
  nlohmann::json j;
  j["out_dims"] = out_dims_;
  j["in_dims"] = in_dims_;
  j["orbit_count"] = orbit_count();
  j["retained_count"] = retained_count();
  nlohmann::json arr = nlohmann::json::array();
  for (const OrbitDesc& o : orbits_) {
    nlohmann::json jo;
    jo["id"] = o.id;
    jo["size"] = o.count;
    jo["masked"] = o.masked;
    jo["rep_out"] = decode(out_dims_, o.rep_out);
    jo["rep_in"] = decode(in_dims_, o.rep_in);
    arr.push_back(std::move(jo));
  }
  j["orbits"] = std::move(arr);
  return j.dump(2);
}

OrbitBasis enumerate_orbits(const SetSignature& sig, const AxisSpace& out_space, const AxisSpace& in_space) {
  sig.validate();
  if (out_space.set_refs.empty() || in_space.set_refs.empty())
    throw std::invalid_argument("enumerate_orbits: empty space");
  for (int r : out_space.set_refs)
    if (r < 0 || r >= static_cast<int>(sig.sets.size()))
      throw std::invalid_argument("enumerate_orbits: unknown set reference");
  for (int r : in_space.set_refs)
    if (r < 0 || r >= static_cast<int>(sig.sets.size()))
      throw std::invalid_argument("enumerate_orbits: unknown set reference");

  const std::vector<int> out_dims = out_space.extents(sig);
  const std::vector<int> in_dims = in_space.extents(sig);
  const int64_t vout = numel_of(out_dims);
  const int64_t vin = numel_of(in_dims);
  const int64_t pairs = vout * vin;
  if (pairs > (int64_t{1} << 26))
    throw std::invalid_argument("enumerate_orbits: pair table too large for brute-force enumeration");

  const std::vector<GroupElement> gens = group_generators(sig);
  Dsu dsu(pairs);
  for (const GroupElement& g : gens) {
    // Per-generator flat maps for both spaces, then union pairwise.
    std::vector<int64_t> out_map(static_cast<size_t>(vout));
    std::vector<int64_t> in_map(static_cast<size_t>(vin));
    for (int64_t f = 0; f < vout; ++f) out_map[static_cast<size_t>(f)] = apply_to_flat(g, sig, out_space, out_dims, f);
    for (int64_t f = 0; f < vin; ++f) in_map[static_cast<size_t>(f)] = apply_to_flat(g, sig, in_space, in_dims, f);
    for (int64_t r = 0; r < vout; ++r) {
      const int64_t rm = out_map[static_cast<size_t>(r)];
      for (int64_t c = 0; c < vin; ++c)
        dsu.unite(r * vin + c, rm * vin + in_map[static_cast<size_t>(c)]);
    }
  }

  std::map<int64_t, int> root_to_id;  // ordered: canonical ids by smallest member
  std::vector<int32_t> table(static_cast<size_t>(pairs));
  for (int64_t p = 0; p < pairs; ++p) {
    const int64_t root = dsu.find(p);
    auto [it, inserted] = root_to_id.try_emplace(root, 0);
    (void)it;
    (void)inserted;
    table[static_cast<size_t>(p)] = 0;  // filled after ids are assigned
  }
  int next = 0;
  for (auto& [root, id] : root_to_id) id = next++;
  std::vector<OrbitDesc> orbits(static_cast<size_t>(next));
  for (int64_t p = 0; p < pairs; ++p) {
    const int id = root_to_id[dsu.find(p)];
    table[static_cast<size_t>(p)] = static_cast<int32_t>(id);
    OrbitDesc& o = orbits[static_cast<size_t>(id)];
    if (o.count == 0) {
      o.id = id;
      o.rep_out = p / vin;
      o.rep_in = p % vin;
    }
    ++o.count;
  }
  return OrbitBasis(sig, out_space, in_space, std::move(table), std::move(orbits));
}

OrbitBasis adjacency_mask(const OrbitBasis& basis) {
  if (basis.out_space().set_refs != basis.in_space().set_refs)
    throw std::invalid_argument("adjacency_mask: out/in spaces must share the same sets");
  std::vector<OrbitDesc> orbits = basis.orbits();
  const auto& dims = basis.out_dims();
  for (OrbitDesc& o : orbits) {
    const std::vector<int> oi = decode(dims, o.rep_out);
    const std::vector<int> ii = decode(dims, o.rep_in);
    int differing = 0;
    for (size_t a = 0; a < oi.size(); ++a)
      if (oi[a] != ii[a]) ++differing;
    o.masked = differing > 1;
  }
  return OrbitBasis(basis.signature(), basis.out_space(), basis.in_space(), basis.table(), std::move(orbits));
}

template <typename T>
Tensor<T> materialize_operator(const OrbitBasis& basis, std::span<const T> weights) {
  const std::vector<int> slots = basis.weight_slots();
  if (static_cast<int>(weights.size()) != basis.retained_count())
    throw std::invalid_argument("materialize_operator: weight count mismatch");
  Tensor<T> P({static_cast<int>(basis.out_size()), static_cast<int>(basis.in_size())});
  const auto& table = basis.table();
  for (int64_t p = 0; p < static_cast<int64_t>(table.size()); ++p) {
    const int slot = slots[static_cast<size_t>(table[static_cast<size_t>(p)])];
    P[p] = slot >= 0 ? weights[static_cast<size_t>(slot)] : T(0);
  }
  return P;
}

template Tensor<float> materialize_operator<float>(const OrbitBasis&, std::span<const float>);
template Tensor<double> materialize_operator<double>(const OrbitBasis&, std::span<const double>);

bool check_commutation(const Tensor<double>& P, const SetSignature& sig, const AxisSpace& space, int trials,
                       std::mt19937_64& rng) {
  const std::vector<int> dims = space.extents(sig);
  const int64_t v = numel_of(dims);
  if (P.rank() != 2 || P.extent(0) != v || P.extent(1) != v)
    throw std::invalid_argument("check_commutation: P must be square over the vec space");
  std::vector<int64_t> map(static_cast<size_t>(v));
  auto holds_for = [&](const GroupElement& g) {
    for (int64_t f = 0; f < v; ++f) map[static_cast<size_t>(f)] = apply_to_flat(g, sig, space, dims, f);
    for (int64_t r = 0; r < v; ++r)
      for (int64_t c = 0; c < v; ++c)
        if (P[r * v + c] != P[map[static_cast<size_t>(r)] * v + map[static_cast<size_t>(c)]]) return false;
    return true;
  };
  if (!holds_for(identity_element(sig))) return false;
  for (int t = 0; t < trials; ++t)
    if (!holds_for(random_group_element(sig, rng))) return false;
  return true;
}

}  // namespace equinet
