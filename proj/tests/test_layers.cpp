#include <doctest.h>

#include <random>

#include "equinet/model.hpp"

using namespace equinet;

namespace {

template <typename T>
Tensor<T> apply_single_transition(Model<T>& model, const Tensor<T>& x) {
  Tape<T> tp;
  auto id = tp.constant(x);
  auto out = model.apply_transition(tp, id, 0, false);
  return tp.val(out);
}

Tensor<double> randt(std::vector<int> dims, std::mt19937_64& rng) {
  Tensor<double> t(std::move(dims));
  std::uniform_real_distribution<double> u(-1, 1);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Dense reference: out[c'] = b[c'] + sum_c P_{c',c} vec(x[c]) with
// P_{c',c} materialized from the masked basis.
Tensor<double> dense_update(Model<double>& model, const Tensor<double>& x) {
  const OrbitBasis& basis = model.update_basis();
  const int N = x.extent(0), Cin = x.extent(1);
  const LayerWeights<double>& lw = model.layer(0);
  const int Cout = lw.w.extent(0);
  const int64_t v = basis.out_size();
  std::vector<int> odims = {N, Cout};
  for (int d : basis.out_dims()) odims.push_back(d);
  Tensor<double> out(odims);
  for (int co = 0; co < Cout; ++co)
    for (int ci = 0; ci < Cin; ++ci) {
      const std::vector<double> w = model.slot_weights(0, co, ci);
      const Tensor<double> p = materialize_operator<double>(basis, w);
      for (int n = 0; n < N; ++n)
        for (int64_t r = 0; r < v; ++r) {
          double acc = 0;
          for (int64_t c = 0; c < v; ++c) acc += p[r * v + c] * x[(int64_t(n) * Cin + ci) * v + c];
          out[(int64_t(n) * Cout + co) * v + r] += acc;
        }
    }
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Cout; ++co)
      for (int64_t r = 0; r < v; ++r) out[(int64_t(n) * Cout + co) * v + r] += lw.b[co];
  return out;
}

ModelSpec spec_for(Head head, std::vector<int> channels) {
  ModelSpec s;
  s.head = head;
  s.norm = Norm::None;
  s.channels = std::move(channels);
  switch (head) {
    case Head::Hybrid3D: s.k = 2; s.nt = 3; s.ns = 2; break;
    case Head::Hybrid2D: s.k = 2; s.nt = 3; s.ns = 2; break;
    case Head::Hybrid1D: s.k = 2; s.nt = 4; s.ns = 2; break;
    case Head::Wideband4D: s.m = 2; s.k = 2; s.nt = 3; s.ns = 2; break;
    case Head::Miso2D: s.k = 2; s.nt = 3; break;
    case Head::MisoNested2D: s.k = 3; s.nt = 6; s.nested_groups = {3, 3}; break;
    case Head::PcJoint2D: s.k = 4; break;
  }
  return s;
}

}  // namespace

TEST_CASE("trainable weight counts per layer kind match the structural constants") {
  struct Case {
    Head head;
    std::vector<int> channels;
    int expect_per_pair;
  };
  const std::vector<Case> cases = {
      {Head::Hybrid1D, {7, 5, 12}, 2},  {Head::Miso2D, {2, 5, 2}, 3},
      {Head::Hybrid3D, {4, 5, 4}, 4},   {Head::Wideband4D, {3, 5, 4}, 5},
      {Head::PcJoint2D, {1, 5, 3}, 8},  {Head::MisoNested2D, {2, 5, 2}, 4},
  };
  for (const Case& c : cases) {
    Model<double> m(spec_for(c.head, c.channels));
    CHECK(m.update_weight_count() == c.expect_per_pair);
    for (int li = 0; li < m.transition_count(); ++li) {
      const auto& lw = m.layer(li);
      const int64_t cin = m.spec().channels[static_cast<size_t>(li)];
      const int64_t cout = m.spec().channels[static_cast<size_t>(li + 1)];
      CHECK(lw.weight_count() == c.expect_per_pair * cin * cout);
      CHECK(lw.bias_count() == cout);
    }
  }
}

TEST_CASE("identity weights pass the input through, 1D example aggregates neighbors") {
  ModelSpec s = spec_for(Head::Miso2D, {2, 2});
  Model<double> m(s);
  LayerWeights<double>& lw = m.layer(0);
  for (int64_t i = 0; i < lw.w.size(); ++i) lw.w[i] = 0;
  for (int c = 0; c < 2; ++c) lw.w[(int64_t(c) * 2 + c) * m.update_weight_count() + 0] = 1.0;
  std::mt19937_64 rng(3);
  const Tensor<double> x = randt({2, 2, 2, 3}, rng);
  const Tensor<double> y = apply_single_transition(m, x);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-15));

  // 1D, one channel used, X=[1,2,3], w_self = w_nbr = 1: x + neighbor_sum
  ModelSpec s1;
  s1.head = Head::Hybrid1D;
  s1.k = 1;
  s1.nt = 3;
  s1.ns = 1;
  s1.norm = Norm::None;
  s1.channels = {4, 4};  // C1 = 3k+1, CL = 2 ns (1+k)
  Model<double> m1(s1);
  LayerWeights<double>& lw1 = m1.layer(0);
  for (int64_t i = 0; i < lw1.w.size(); ++i) lw1.w[i] = 0;
  lw1.w[(int64_t(0) * 4 + 0) * 2 + 0] = 1.0;
  lw1.w[(int64_t(0) * 4 + 0) * 2 + 1] = 1.0;
  Tensor<double> x1({1, 4, 3});
  x1[0] = 1;
  x1[1] = 2;
  x1[2] = 3;
  const Tensor<double> y1 = apply_single_transition(m1, x1);
  CHECK(y1[0] == 6.0);
  CHECK(y1[1] == 6.0);
  CHECK(y1[2] == 6.0);
}

TEST_CASE("update transition equals the materialized vec-form operator") {
  std::mt19937_64 rng(5);
  struct Case {
    Head head;
    std::vector<int> channels;
  };
  const std::vector<Case> cases = {{Head::Miso2D, {2, 2}},
                                   {Head::Hybrid3D, {4, 4}},
                                   {Head::Wideband4D, {3, 4}},
                                   {Head::PcJoint2D, {1, 3}},
                                   {Head::MisoNested2D, {2, 2}}};
  for (const Case& c : cases) {
    ModelSpec s = spec_for(c.head, c.channels);
    Model<double> m(s);
    m.init_params(17);
    std::vector<int> xdims = {2, s.channels.front()};
    for (int d : m.update_basis().out_dims()) xdims.push_back(d);
    const Tensor<double> x = randt(xdims, rng);
    const Tensor<double> fast = apply_single_transition(m, x);
    const Tensor<double> dense = dense_update(m, x);
    REQUIRE(fast.size() == dense.size());
    for (int64_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(dense[i]).epsilon(1e-12));
  }
}

TEST_CASE("update transition is permutation equivariant") {
  std::mt19937_64 rng(7);
  struct Case {
    Head head;
    std::vector<int> channels;
  };
  const std::vector<Case> cases = {
      {Head::Hybrid3D, {4, 4}}, {Head::PcJoint2D, {1, 2}}, {Head::MisoNested2D, {2, 2}}};
  for (const Case& c : cases) {
    ModelSpec s = spec_for(c.head, c.channels);
    Model<double> m(s);
    m.init_params(23);
    const SetSignature sig = s.signature();
    const AxisSpace space = s.hidden_space();
    std::vector<int> xdims = {2, s.channels.front()};
    for (int d : space.extents(sig)) xdims.push_back(d);
    const Tensor<double> x = randt(xdims, rng);
    const Tensor<double> y = apply_single_transition(m, x);
    std::mt19937_64 grng(97);
    for (int trial = 0; trial < 20; ++trial) {
      const GroupElement g = random_group_element(sig, grng);
      Tensor<double> xp = x;
      Tensor<double> yp = y;
      for (size_t a = 0; a < space.set_refs.size(); ++a) {
        xp = permute_along(xp, 2 + static_cast<int>(a), g.per_set[static_cast<size_t>(space.set_refs[a])]);
        yp = permute_along(yp, 2 + static_cast<int>(a), g.per_set[static_cast<size_t>(space.set_refs[a])]);
      }
      const Tensor<double> y2 = apply_single_transition(m, xp);
      for (int64_t i = 0; i < y2.size(); ++i) CHECK(y2[i] == doctest::Approx(yp[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("batch normalization commutes with set permutations") {
  std::mt19937_64 rng(11);
  Tensor<double> x = randt({5, 3, 4, 2}, rng);
  Tape<double> tp;
  auto y = tp.batchnorm_train(tp.constant(x), 1e-5, nullptr, nullptr);
  const Tensor<double> yv = tp.val(y);
  std::mt19937_64 prng(13);
  const Permutation p2 = Permutation::random(4, prng);
  const Permutation p3 = Permutation::random(2, prng);
  Tensor<double> xp = permute_along(permute_along(x, 2, p2), 3, p3);
  Tape<double> tp2;
  auto y2 = tp2.batchnorm_train(tp2.constant(xp), 1e-5, nullptr, nullptr);
  const Tensor<double> e = permute_along(permute_along(yv, 2, p2), 3, p3);
  for (int64_t i = 0; i < e.size(); ++i) CHECK(tp2.val(y2)[i] == doctest::Approx(e[i]).epsilon(1e-12));
}

TEST_CASE("input lift arranges the P1 channels with the virtual feature") {
  ModelSpec s;
  s.head = Head::Hybrid3D;
  s.k = 2;
  s.nt = 2;
  s.ns = 2;
  s.channels = {4, 4};
  s.norm = Norm::None;
  s.virtual_feature = {0.5, 1.0};
  Model<double> m(s);
  Dataset<double> b;
  b.n = 1;
  Tensor<double> hre({1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> him({1, 2, 2}, {-1, -2, -3, -4});
  b.fields["h_re"] = hre;
  b.fields["h_im"] = him;
  b.fields["beta"] = Tensor<double>({1, 2}, {2.0, 3.0});
  b.fields["ptot"] = Tensor<double>({1}, {1.0});
  b.fields["sigma2"] = Tensor<double>({1}, {1.0});
  const Tensor<double> x = m.input_lift(b);
  REQUIRE(x.dims() == std::vector<int>{1, 4, 2, 2, 2});
  for (int k = 0; k < 2; ++k)
    for (int t = 0; t < 2; ++t)
      for (int ns = 0; ns < 2; ++ns) {
        CHECK(x.at({0, 0, k, t, ns}) == hre.at({0, k, t}) + (ns == 0 ? 0.5 : 1.0));
        CHECK(x.at({0, 1, k, t, ns}) == him.at({0, k, t}));
        CHECK(x.at({0, 2, k, t, ns}) == (k == 0 ? 2.0 : 3.0));
        CHECK(x.at({0, 3, k, t, ns}) == 1.0);  // scalar P_tot broadcasts to all-ones
      }

  // MISO lift: two channels, no copies, no virtual feature
  ModelSpec sm = spec_for(Head::Miso2D, {2, 2});
  sm.k = 2;
  sm.nt = 2;
  Model<double> mm(sm);
  const Tensor<double> xm = mm.input_lift(b);
  REQUIRE(xm.dims() == std::vector<int>{1, 2, 2, 2});
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(xm[i] == hre[i]);
    CHECK(xm[4 + i] == him[i]);
  }
}

TEST_CASE("model spec validation catches bad configurations") {
  auto build = [](const ModelSpec& s) { Model<double> m(s); };
  CHECK_THROWS_AS(build(spec_for(Head::Hybrid3D, {4, 8, 3})), std::invalid_argument);
  CHECK_THROWS_AS(build(spec_for(Head::Miso2D, {2})), std::invalid_argument);
  ModelSpec s3 = spec_for(Head::MisoNested2D, {2, 2});
  s3.nested_groups = {2, 2};  // sums to 4, nt says 6
  CHECK_THROWS_AS(build(s3), std::invalid_argument);
}
