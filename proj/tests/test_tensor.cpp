#include <doctest.h>

#include <random>

#include "equinet/tensor.hpp"

using namespace equinet;

namespace {

// Kronecker product, test-side oracle for the vec identity.
Tensor<double> kron(const Tensor<double>& a, const Tensor<double>& b) {
  const int ar = a.extent(0), ac = a.extent(1), br = b.extent(0), bc = b.extent(1);
  Tensor<double> out({ar * br, ac * bc});
  for (int i = 0; i < ar; ++i)
    for (int j = 0; j < ac; ++j)
      for (int p = 0; p < br; ++p)
        for (int q = 0; q < bc; ++q) out.at({i * br + p, j * bc + q}) = a.at({i, j}) * b.at({p, q});
  return out;
}

Tensor<double> random_int_tensor(std::vector<int> dims, std::mt19937_64& rng) {
  Tensor<double> t(std::move(dims));
  std::uniform_int_distribution<int> d(-8, 8);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

}  // namespace

TEST_CASE("flat_index follows row-major last-fastest order") {
  const std::vector<int> d23 = {2, 3};
  CHECK(flat_index(d23, std::vector<int>{0, 0}) == 0);
  CHECK(flat_index(d23, std::vector<int>{1, 2}) == 5);
  const std::vector<int> d222 = {2, 2, 2};
  CHECK(flat_index(d222, std::vector<int>{1, 0, 1}) == 5);
  CHECK_THROWS_AS((void)flat_index(d23, std::vector<int>{2, 0}), std::out_of_range);
  CHECK_THROWS_AS((void)flat_index(d23, std::vector<int>{0}), std::invalid_argument);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5)), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>({0, 3}), std::invalid_argument);
  Tensor<double> t({2, 3});
  CHECK(t.size() == 6);
}

TEST_CASE("permutation validation and inverse") {
  CHECK_THROWS_AS(Permutation({0, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Permutation({0, 3, 1}), std::invalid_argument);
  std::mt19937_64 rng(7);
  const Permutation p = Permutation::random(6, rng);
  const Permutation inv = p.inverse();
  for (int i = 0; i < 6; ++i) CHECK(inv(p(i)) == i);
}

TEST_CASE("permute_along examples") {
  Tensor<double> t({3}, {1, 2, 3});
  const Tensor<double> same = permute_along(t, 0, Permutation::identity(3));
  for (int i = 0; i < 3; ++i) CHECK(same[i] == t[i]);
  const Tensor<double> rev = permute_along(t, 0, Permutation::reversal(3));
  CHECK(rev[0] == 3);
  CHECK(rev[1] == 2);
  CHECK(rev[2] == 1);

  std::mt19937_64 rng(11);
  Tensor<double> u = random_int_tensor({4, 5}, rng);
  const Permutation p = Permutation::random(5, rng);
  const Tensor<double> round = permute_along(permute_along(u, 1, p), 1, p.inverse());
  for (int64_t i = 0; i < u.size(); ++i) CHECK(round[i] == u[i]);

  CHECK_THROWS_AS(permute_along(u, 2, p), std::out_of_range);
  CHECK_THROWS_AS(permute_along(u, 0, p), std::invalid_argument);
}

TEST_CASE("permute_along preserves the multiset per slice") {
  std::mt19937_64 rng(3);
  Tensor<double> u = random_int_tensor({3, 4}, rng);
  const Permutation p = Permutation::random(3, rng);
  const Tensor<double> v = permute_along(u, 0, p);
  for (int c = 0; c < 4; ++c) {
    std::vector<double> a, b;
    for (int r = 0; r < 3; ++r) {
      a.push_back(u.at({r, c}));
      b.push_back(v.at({r, c}));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("neighbor_sum examples and exact complement identity") {
  Tensor<double> t({3}, {1, 2, 3});
  const Tensor<double> ns = neighbor_sum(t, 0);
  CHECK(ns[0] == 5);
  CHECK(ns[1] == 4);
  CHECK(ns[2] == 3);

  const Tensor<double> c = Tensor<double>::full({4, 5}, 2.5);
  const Tensor<double> nc = neighbor_sum(c, 1);
  for (int64_t i = 0; i < nc.size(); ++i) CHECK(nc[i] == doctest::Approx(4 * 2.5));

  Tensor<double> m({2, 2}, {1, 2, 3, 4});
  const Tensor<double> nm = neighbor_sum(m, 0);
  CHECK(nm.at({0, 0}) == 3);
  CHECK(nm.at({0, 1}) == 4);
  CHECK(nm.at({1, 0}) == 1);
  CHECK(nm.at({1, 1}) == 2);

  // neighbor_sum + self equals the broadcast axis total, exactly for
  // integer-valued data.
  std::mt19937_64 rng(5);
  Tensor<double> u = random_int_tensor({3, 4, 2}, rng);
  const Tensor<double> nu = neighbor_sum(u, 1);
  const Tensor<double> su = sum_along(u, 1);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 4; ++b)
      for (int d = 0; d < 2; ++d) CHECK(nu.at({a, b, d}) + u.at({a, b, d}) == su.at({a, d}));
}

TEST_CASE("mean_along drops the axis and commutes with other-axis permutation") {
  Tensor<double> t({2}, {2, 4});
  const Tensor<double> m = mean_along(t, 0);
  CHECK(m.size() == 1);
  CHECK(m[0] == 3);

  const Tensor<double> c = Tensor<double>::full({3, 4}, 1.25);
  const Tensor<double> mc = mean_along(c, 0);
  CHECK(mc.rank() == 1);
  CHECK(mc.extent(0) == 4);
  for (int64_t i = 0; i < mc.size(); ++i) CHECK(mc[i] == 1.25);

  std::mt19937_64 rng(9);
  Tensor<double> u = random_int_tensor({3, 5}, rng);
  const Permutation p = Permutation::random(5, rng);
  const Tensor<double> a = permute_along(mean_along(u, 0), 0, p);
  const Tensor<double> b = mean_along(permute_along(u, 1, p), 0);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-15));
}

TEST_CASE("materialize_perm_matrix") {
  const Tensor<double> id2 = materialize_perm_matrix(Permutation::identity(2));
  CHECK(id2.at({0, 0}) == 1);
  CHECK(id2.at({0, 1}) == 0);
  CHECK(id2.at({1, 0}) == 0);
  CHECK(id2.at({1, 1}) == 1);

  const Tensor<double> sw = materialize_perm_matrix(Permutation({1, 0}));
  CHECK(sw.at({0, 0}) == 0);
  CHECK(sw.at({0, 1}) == 1);
  CHECK(sw.at({1, 0}) == 1);
  CHECK(sw.at({1, 1}) == 0);

  std::mt19937_64 rng(13);
  const Permutation p = Permutation::random(5, rng);
  const Tensor<double> m = materialize_perm_matrix(p);
  // orthogonality: M M^T = I
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double acc = 0;
      for (int t = 0; t < 5; ++t) acc += m.at({i, t}) * m.at({j, t});
      CHECK(acc == (i == j ? 1.0 : 0.0));
    }

  // multiplying vec data reproduces permute_along on a vector
  Tensor<double> x({5}, {3, 1, 4, 1, 5});
  const Tensor<double> px = permute_along(x, 0, p);
  for (int i = 0; i < 5; ++i) {
    double acc = 0;
    for (int t = 0; t < 5; ++t) acc += m.at({i, t}) * x[t];
    CHECK(acc == px[i]);
  }
}

TEST_CASE("vec of a two-axis permutation equals the Kronecker operator") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> t = random_int_tensor({3, 4}, rng);
    const Permutation p1 = Permutation::random(3, rng);
    const Permutation p2 = Permutation::random(4, rng);
    const Tensor<double> pt = permute_along(permute_along(t, 0, p1), 1, p2);
    const Tensor<double> op = kron(materialize_perm_matrix(p1), materialize_perm_matrix(p2));
    for (int64_t r = 0; r < 12; ++r) {
      double acc = 0;
      for (int64_t c = 0; c < 12; ++c) acc += op[r * 12 + c] * t[c];
      CHECK(acc == pt[r]);
    }
  }
}
