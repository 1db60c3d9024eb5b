#include <doctest.h>

#include <random>

#include "equinet/model.hpp"
#include "equinet/problems.hpp"

using namespace equinet;

namespace {

CxMat random_cx(int r, int c, std::mt19937_64& rng) {
  CxMat m(r, c);
  std::normal_distribution<double> g(0.0, std::sqrt(0.5));
  for (cxd& v : m.a) v = cxd(g(rng), g(rng));
  return m;
}

CxMat random_unit_modulus(int r, int c, std::mt19937_64& rng) {
  CxMat m(r, c);
  std::uniform_real_distribution<double> u(0.0, 2 * 3.14159265358979323846);
  for (cxd& v : m.a) v = std::polar(1.0, u(rng));
  return m;
}

HybridSolution solution_at(Tape<double>& tp, const ForwardResult<double>& r, int n, int nt, int ns, int k) {
  const Tensor<double>& rfre = tp.val(r.outputs.at("w_rf_re"));
  const Tensor<double>& rfim = tp.val(r.outputs.at("w_rf_im"));
  const Tensor<double>& bbre = tp.val(r.outputs.at("w_bb_re"));
  const Tensor<double>& bbim = tp.val(r.outputs.at("w_bb_im"));
  HybridSolution s;
  s.w_rf = CxMat(nt, ns);
  s.w_bb = CxMat(ns, k);
  for (int t = 0; t < nt; ++t)
    for (int l = 0; l < ns; ++l)
      s.w_rf.at(t, l) = cxd(rfre[(int64_t(n) * nt + t) * ns + l], rfim[(int64_t(n) * nt + t) * ns + l]);
  for (int l = 0; l < ns; ++l)
    for (int u = 0; u < k; ++u)
      s.w_bb.at(l, u) = cxd(bbre[(int64_t(n) * ns + l) * k + u], bbim[(int64_t(n) * ns + l) * k + u]);
  return s;
}

Dataset<double> hybrid_batch(const std::vector<CxMat>& hs, double p_tot, double sigma2) {
  const int n = static_cast<int>(hs.size());
  const int k = hs[0].rows, nt = hs[0].cols;
  Dataset<double> d;
  d.n = n;
  Tensor<double> hre({n, k, nt}), him({n, k, nt});
  for (int i = 0; i < n; ++i)
    for (int64_t j = 0; j < int64_t(k) * nt; ++j) {
      hre[int64_t(i) * k * nt + j] = hs[static_cast<size_t>(i)].a[static_cast<size_t>(j)].real();
      him[int64_t(i) * k * nt + j] = hs[static_cast<size_t>(i)].a[static_cast<size_t>(j)].imag();
    }
  d.fields["h_re"] = std::move(hre);
  d.fields["h_im"] = std::move(him);
  d.fields["beta"] = Tensor<double>::full({n, k}, 1.0);
  d.fields["ptot"] = Tensor<double>::full({n}, p_tot);
  d.fields["sigma2"] = Tensor<double>::full({n}, sigma2);
  return d;
}

}  // namespace

TEST_CASE("sinr closed-form cases") {
  {
    HybridInstance inst{CxMat(1, 1), {1.0}, 1.0, 1.0};
    inst.h.at(0, 0) = 1.0;
    HybridSolution sol{CxMat(1, 1), CxMat(1, 1)};
    sol.w_rf.at(0, 0) = 1.0;
    sol.w_bb.at(0, 0) = 1.0;
    CHECK(sinr_k(inst, sol, 0) == doctest::Approx(1.0));
    CHECK(weighted_sum_rate(inst, sol) == doctest::Approx(1.0));
  }
  {
    // orthogonal zero-forcing: no interference
    HybridInstance inst{CxMat(2, 2), {1.0, 1.0}, 2.0, 1.0};
    inst.h.at(0, 0) = 1.0;
    inst.h.at(1, 1) = 1.0;
    HybridSolution sol{CxMat(2, 2), CxMat(2, 2)};
    sol.w_rf.at(0, 0) = 1.0;
    sol.w_rf.at(1, 1) = 1.0;
    sol.w_bb.at(0, 0) = 1.0;
    sol.w_bb.at(1, 1) = 1.0;
    CHECK(sinr_k(inst, sol, 0) == doctest::Approx(1.0));
    CHECK(sinr_k(inst, sol, 1) == doctest::Approx(1.0));
    CHECK(weighted_sum_rate(inst, sol) == doctest::Approx(2.0));
  }
  {
    // fully aligned interference: gamma = 1/2
    HybridInstance inst{CxMat(2, 2), {1.0, 1.0}, 2.0, 1.0};
    inst.h.at(0, 0) = 1.0;
    inst.h.at(1, 0) = 1.0;
    HybridSolution sol{CxMat(2, 2), CxMat(2, 2)};
    sol.w_rf.at(0, 0) = 1.0;
    sol.w_rf.at(1, 1) = 1.0;
    sol.w_bb.at(0, 0) = 1.0;
    sol.w_bb.at(0, 1) = 1.0;
    CHECK(sinr_k(inst, sol, 0) == doctest::Approx(0.5));
  }
}

TEST_CASE("weighted sum-rate is invariant under the three-set permutation") {
  std::mt19937_64 rng(71);
  const int K = 3, Nt = 4, Ns = 2;
  for (int trial = 0; trial < 25; ++trial) {
    HybridInstance inst{random_cx(K, Nt, rng), {0.5, 1.0, 2.0}, 2.0, 0.7};
    HybridSolution sol{random_unit_modulus(Nt, Ns, rng), CxMat()};
    sol.w_bb = project_power(sol.w_rf, random_cx(Ns, K, rng), inst.p_tot);
    const double base = weighted_sum_rate(inst, sol);

    const Permutation p1 = Permutation::random(K, rng);
    const Permutation p2 = Permutation::random(Nt, rng);
    const Permutation p3 = Permutation::random(Ns, rng);
    HybridInstance pinst{CxMat(K, Nt), {0, 0, 0}, inst.p_tot, inst.sigma2};
    for (int k = 0; k < K; ++k) {
      pinst.beta[static_cast<size_t>(k)] = inst.beta[static_cast<size_t>(p1(k))];
      for (int t = 0; t < Nt; ++t) pinst.h.at(k, t) = inst.h.at(p1(k), p2(t));
    }
    HybridSolution psol{CxMat(Nt, Ns), CxMat(Ns, K)};
    for (int t = 0; t < Nt; ++t)
      for (int s = 0; s < Ns; ++s) psol.w_rf.at(t, s) = sol.w_rf.at(p2(t), p3(s));
    for (int s = 0; s < Ns; ++s)
      for (int k = 0; k < K; ++k) psol.w_bb.at(s, k) = sol.w_bb.at(p3(s), p1(k));
    CHECK(weighted_sum_rate(pinst, psol) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("constant modulus projection") {
  CxMat w(1, 1);
  w.at(0, 0) = cxd(3, 4);
  const CxMat p = project_constant_modulus(w);
  CHECK(p.at(0, 0).real() == doctest::Approx(0.6));
  CHECK(p.at(0, 0).imag() == doctest::Approx(0.8));

  // idempotent on unit-modulus input
  const CxMat p2 = project_constant_modulus(p);
  CHECK(std::abs(p2.at(0, 0) - p.at(0, 0)) < 1e-9);

  // exact zero renormalizes to phase 0
  CxMat z(1, 1);
  const CxMat pz = project_constant_modulus(z);
  CHECK(pz.at(0, 0) == cxd(1.0, 0.0));

  std::mt19937_64 rng(73);
  const CxMat r = project_constant_modulus(random_cx(3, 4, rng));
  for (const cxd& v : r.a) CHECK(std::abs(std::abs(v) - 1.0) < 1e-9);
}

TEST_CASE("power projection") {
  {
    CxMat rf(1, 1), bb(1, 1);
    rf.at(0, 0) = 1.0;
    bb.at(0, 0) = 2.0;
    const CxMat out = project_power(rf, bb, 4.0);
    CHECK(out.at(0, 0).real() == doctest::Approx(2.0));
  }
  std::mt19937_64 rng(79);
  const CxMat rf = random_unit_modulus(4, 2, rng);
  const CxMat bbp = random_cx(2, 3, rng);
  const CxMat out = project_power(rf, bbp, 2.5);
  CHECK(cx_matmul(rf, out).fro_norm2() == doctest::Approx(2.5).epsilon(1e-10));

  // positive scaling of the raw precoder does not change the projection
  CxMat scaled = bbp;
  for (cxd& v : scaled.a) v *= 3.7;
  const CxMat out2 = project_power(rf, scaled, 2.5);
  for (size_t i = 0; i < out.a.size(); ++i) CHECK(std::abs(out.a[i] - out2.a[i]) < 1e-12);

  CHECK_THROWS_AS(project_power(rf, CxMat(2, 3), 1.0), std::invalid_argument);
}

TEST_CASE("wideband sum rate reduces to the narrowband one") {
  std::mt19937_64 rng(83);
  const int K = 2, Nt = 3, Ns = 2;
  const CxMat h = random_cx(K, Nt, rng);
  HybridInstance ninst{h, {1.0, 1.0}, 1.5, 0.9};
  HybridSolution nsol{random_unit_modulus(Nt, Ns, rng), CxMat()};
  nsol.w_bb = project_power(nsol.w_rf, random_cx(Ns, K, rng), ninst.p_tot);
  const double narrow = weighted_sum_rate(ninst, nsol);

  WidebandInstance w1{{h}, ninst.p_tot, ninst.sigma2};
  WidebandSolution s1{nsol.w_rf, {nsol.w_bb}};
  CHECK(wideband_sum_rate(w1, s1) == doctest::Approx(narrow).epsilon(1e-12));

  // identical channels and shared precoders on all subcarriers
  WidebandInstance w4{{h, h, h, h}, ninst.p_tot, ninst.sigma2};
  WidebandSolution s4{nsol.w_rf, {nsol.w_bb, nsol.w_bb, nsol.w_bb, nsol.w_bb}};
  CHECK(wideband_sum_rate(w4, s4) == doctest::Approx(narrow).epsilon(1e-12));

  // invariance under a subcarrier permutation
  WidebandInstance wp = w4;
  WidebandSolution sp = s4;
  wp.h = {h, h, h, h};
  std::mt19937_64 prng(5);
  const Permutation p4 = Permutation::random(4, prng);
  WidebandInstance wperm{{}, w4.p_tot, w4.sigma2};
  WidebandSolution sperm{s4.w_rf, {}};
  for (int m = 0; m < 4; ++m) {
    wperm.h.push_back(w4.h[static_cast<size_t>(p4(m))]);
    sperm.w_bb.push_back(s4.w_bb[static_cast<size_t>(p4(m))]);
  }
  CHECK(wideband_sum_rate(wperm, sperm) == doctest::Approx(wideband_sum_rate(w4, s4)).epsilon(1e-12));
}

TEST_CASE("power-control objective and the exhaustive grid oracle") {
  {
    PowerControlInstance inst{1, {1.0}, 1.0, 1.0};
    const std::vector<double> p = {1.0};
    CHECK(pc_sum_rate(inst, p) == doctest::Approx(1.0));
  }
  {
    // joint relabeling invariance
    std::mt19937_64 rng(89);
    const int K = 4;
    PowerControlInstance inst{K, {}, 1.0, 0.5};
    inst.g.resize(16);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (double& v : inst.g) v = u(rng);
    std::vector<double> p = {0.2, 0.9, 0.5, 1.0};
    const double base = pc_sum_rate(inst, p);
    const Permutation pi = Permutation::random(K, rng);
    PowerControlInstance pinst{K, std::vector<double>(16), 1.0, 0.5};
    std::vector<double> pp(4);
    for (int r = 0; r < K; ++r) {
      pp[static_cast<size_t>(r)] = p[static_cast<size_t>(pi(r))];
      for (int c = 0; c < K; ++c) pinst.g[static_cast<size_t>(r) * K + c] = inst.at(pi(r), pi(c));
    }
    CHECK(pc_sum_rate(pinst, pp) == doctest::Approx(base).epsilon(1e-12));
  }
  {
    // symmetric strong interference, K=2: the grid decides the optimum.
    PowerControlInstance inst{2, {1, 1, 1, 1}, 1.0, 1.0};
    double best = -1, bp1 = 0, bp2 = 0;
    for (int i = 0; i <= 1000; ++i)
      for (int j = 0; j <= 1000; ++j) {
        const std::vector<double> p = {i * 1e-3, j * 1e-3};
        const double r = pc_sum_rate(inst, p);
        if (r > best) {
          best = r;
          bp1 = p[0];
          bp2 = p[1];
        }
      }
    // Full power on both links wins: 2 log2(1.5) ~ 1.1699 beats the
    // single-transmitter corner at rate 1.0.
    CHECK(bp1 == doctest::Approx(1.0));
    CHECK(bp2 == doctest::Approx(1.0));
    CHECK(best == doctest::Approx(2.0 * std::log2(1.5)).epsilon(1e-12));
    CHECK(best > 1.0);
  }
}

TEST_CASE("hybrid heads emit feasible solutions for arbitrary weights") {
  std::mt19937_64 rng(97);
  const int K = 2, Nt = 4, Ns = 3;
  std::vector<CxMat> hs;
  for (int i = 0; i < 4; ++i) hs.push_back(random_cx(K, Nt, rng));
  Dataset<double> batch = hybrid_batch(hs, 2.0, 1.0);

  for (Head head : {Head::Hybrid3D, Head::Hybrid2D, Head::Hybrid1D}) {
    ModelSpec s;
    s.head = head;
    s.k = K;
    s.nt = Nt;
    s.ns = Ns;
    s.norm = Norm::None;
    s.channels = {s.required_c1(), 6, s.required_cl()};
    Model<double> m(s);
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      m.init_params(seed);
      Tape<double> tp;
      ForwardResult<double> r = m.forward(tp, batch, false);
      for (int n = 0; n < 4; ++n) {
        HybridInstance inst{hs[static_cast<size_t>(n)], {1.0, 1.0}, 2.0, 1.0};
        const HybridSolution sol = solution_at(tp, r, n, Nt, Ns, K);
        std::string why;
        CHECK_MESSAGE(hybrid_solution_ok(inst, sol, 1e-6, 1e-6, &why), head_name(head), ": ", why);
        // tape objective equals the reference objective on the emitted solution
        CHECK(tp.val(r.objective)[n] == doctest::Approx(weighted_sum_rate(inst, sol)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("pc head output respects the box constraint") {
  const int K = 4;
  ModelSpec s;
  s.head = Head::PcJoint2D;
  s.k = K;
  s.norm = Norm::None;
  s.channels = {1, 6, 4};
  Model<double> m(s);
  std::mt19937_64 rng(101);
  Dataset<double> d;
  d.n = 5;
  Tensor<double> g({5, K, K});
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int64_t i = 0; i < g.size(); ++i) g[i] = u(rng);
  d.fields["gain"] = std::move(g);
  d.fields["pmax"] = Tensor<double>::full({5}, 1.7);
  d.fields["sigma2"] = Tensor<double>::full({5}, 1.0);
  for (uint64_t seed : {4ULL, 5ULL}) {
    m.init_params(seed);
    Tape<double> tp;
    ForwardResult<double> r = m.forward(tp, d, false);
    const Tensor<double>& p = tp.val(r.outputs.at("p"));
    for (int64_t i = 0; i < p.size(); ++i) {
      CHECK(p[i] >= 0.0);
      CHECK(p[i] <= 1.7);
    }
    // tape objective equals the reference objective
    const Tensor<double>& gains = d.field("gain");
    for (int n = 0; n < 5; ++n) {
      PowerControlInstance inst{K, {}, 1.7, 1.0};
      inst.g.assign(gains.data() + int64_t(n) * K * K, gains.data() + int64_t(n + 1) * K * K);
      std::vector<double> pn(p.data() + int64_t(n) * K, p.data() + int64_t(n + 1) * K);
      CHECK(tp.val(r.objective)[n] == doctest::Approx(pc_sum_rate(inst, pn)).epsilon(1e-10));
    }
  }
}

TEST_CASE("wideband head with one subcarrier matches the 3D head under shared weights") {
  std::mt19937_64 rng(103);
  const int K = 2, Nt = 3, Ns = 2, C = 5;
  ModelSpec s4;
  s4.head = Head::Wideband4D;
  s4.m = 1;
  s4.k = K;
  s4.nt = Nt;
  s4.ns = Ns;
  s4.norm = Norm::None;
  s4.channels = {3, C, 4};
  Model<double> m4(s4);
  m4.init_params(11);

  ModelSpec s3;
  s3.head = Head::Hybrid3D;
  s3.k = K;
  s3.nt = Nt;
  s3.ns = Ns;
  s3.norm = Norm::None;
  s3.channels = {4, C, 4};
  Model<double> m3(s3);
  m3.init_params(12);

  // At M=1 the subcarrier axis is inactive, so both models carry four
  // weights per channel pair with features ordered (self, K, Nt, Ns).
  REQUIRE(m4.update_weight_count() == 4);
  REQUIRE(m3.update_weight_count() == 4);
  // 3D input channels: (ReH+a, ImH, beta, Ptot); 4D: (ReH+a, ImH, Ptot).
  // Map 4D channel c to 3D channel map3[c], zeroing the beta channel.
  const int map3[3] = {0, 1, 3};
  {
    LayerWeights<double>& l3 = m3.layer(0);
    const LayerWeights<double>& l4 = m4.layer(0);
    for (int64_t i = 0; i < l3.w.size(); ++i) l3.w[i] = 0;
    for (int co = 0; co < C; ++co)
      for (int ci = 0; ci < 3; ++ci)
        for (int f = 0; f < 4; ++f)
          l3.w[(int64_t(co) * 4 + map3[ci]) * 4 + f] = l4.w[(int64_t(co) * 3 + ci) * 4 + f];
    l3.b = l4.b;
    m3.layer(1).w = m4.layer(1).w;
    m3.layer(1).b = m4.layer(1).b;
  }

  const CxMat h = random_cx(K, Nt, rng);
  Dataset<double> b3 = hybrid_batch({h}, 1.8, 0.6);
  Dataset<double> b4;
  b4.n = 1;
  Tensor<double> hre({1, 1, K, Nt}), him({1, 1, K, Nt});
  for (int64_t j = 0; j < int64_t(K) * Nt; ++j) {
    hre[j] = h.a[static_cast<size_t>(j)].real();
    him[j] = h.a[static_cast<size_t>(j)].imag();
  }
  b4.fields["h_re"] = std::move(hre);
  b4.fields["h_im"] = std::move(him);
  b4.fields["ptot"] = Tensor<double>::full({1}, 1.8);
  b4.fields["sigma2"] = Tensor<double>::full({1}, 0.6);

  Tape<double> t3, t4;
  ForwardResult<double> r3 = m3.forward(t3, b3, false);
  ForwardResult<double> r4 = m4.forward(t4, b4, false);
  CHECK(t3.val(r3.objective)[0] == doctest::Approx(t4.val(r4.objective)[0]).epsilon(1e-12));
  const Tensor<double>& rf3 = t3.val(r3.outputs.at("w_rf_re"));
  const Tensor<double>& rf4 = t4.val(r4.outputs.at("w_rf_re"));
  for (int64_t i = 0; i < rf3.size(); ++i) CHECK(rf3[i] == doctest::Approx(rf4[i]).epsilon(1e-12));

  // the wideband solution satisfies the summed power constraint
  WidebandInstance winst{{h}, 1.8, 0.6};
  const Tensor<double>& bre = t4.val(r4.outputs.at("w_bb_re"));
  const Tensor<double>& bim = t4.val(r4.outputs.at("w_bb_im"));
  WidebandSolution wsol;
  wsol.w_rf = CxMat(Nt, Ns);
  const Tensor<double>& rfi = t4.val(r4.outputs.at("w_rf_im"));
  for (int t = 0; t < Nt; ++t)
    for (int l = 0; l < Ns; ++l) wsol.w_rf.at(t, l) = cxd(rf4[int64_t(t) * Ns + l], rfi[int64_t(t) * Ns + l]);
  CxMat bb(Ns, K);
  for (int l = 0; l < Ns; ++l)
    for (int u = 0; u < K; ++u) bb.at(l, u) = cxd(bre[int64_t(l) * K + u], bim[int64_t(l) * K + u]);
  wsol.w_bb = {bb};
  std::string why;
  CHECK_MESSAGE(wideband_solution_ok(winst, wsol, 1e-6, 1e-6, &why), why);
}

TEST_CASE("instance validation") {
  HybridInstance bad{CxMat(2, 2), {1.0}, 1.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  HybridInstance bad2{CxMat(1, 1), {1.0}, -1.0, 1.0};
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
  PowerControlInstance badp{2, {1, 2, 3}, 1.0, 1.0};
  CHECK_THROWS_AS(badp.validate(), std::invalid_argument);
}
