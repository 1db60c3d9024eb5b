#include "equinet/baselines.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <random>
#include <stdexcept>

namespace equinet {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

using Ecx = Eigen::MatrixXcd;
using Evec = Eigen::VectorXcd;

Ecx to_eigen(const CxMat& m) {
  Ecx out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) out(r, c) = m.at(r, c);
  return out;
}

CxMat from_eigen(const Ecx& m) {
  CxMat out(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) = m(r, c);
  return out;
}

double digital_rate_eigen(const Ecx& h, const Ecx& v, std::span<const double> beta, double sigma2) {
  return digital_sum_rate(from_eigen(h), from_eigen(v), beta, sigma2);
}

// With the gain convention g = sum_t conj(H[k,t]) w_t, the matched
// direction for user k is the unconjugated channel row.
Ecx mrt_precoder(const Ecx& h, double p_tot) {
  const int k = static_cast<int>(h.rows());
  const int nt = static_cast<int>(h.cols());
  Ecx v(nt, k);
  for (int u = 0; u < k; ++u) {
    Evec col = h.row(u).transpose();
    const double n = col.norm();
    if (n == 0) throw std::invalid_argument("mrt: zero channel row");
    v.col(u) = std::sqrt(p_tot / k) * col / n;
  }
  return v;
}

// WMMSE inner run from a given initial precoder. Returns iterations used.
int wmmse_run(const Ecx& h, std::span<const double> beta, double p_tot, double sigma2, int max_iters, double tol,
              Ecx& w, std::vector<double>* trajectory) {
  const int k = static_cast<int>(h.rows());
  const int nt = static_cast<int>(h.cols());
  double prev = digital_rate_eigen(h, w, beta, sigma2);
  if (trajectory) trajectory->push_back(prev);
  int it = 0;
  for (it = 1; it <= max_iters; ++it) {
    // Receiver and MSE-weight updates are in closed form per user.
    Evec u(k);
    Eigen::VectorXd vw(k);
    for (int j = 0; j < k; ++j) {
      cxd num = 0;
      double den = sigma2;
      for (int i = 0; i < k; ++i) {
        cxd g = (h.row(j).conjugate() * w.col(i))(0, 0);
        den += std::norm(g);
        if (i == j) num = g;
      }
      u(j) = num / den;
      const double mse = 1.0 - std::norm(num) / den;
      vw(j) = beta[static_cast<size_t>(j)] / std::max(mse, 1e-14);
    }
    Ecx a = Ecx::Zero(nt, nt);
    Ecx rhs(nt, k);
    for (int j = 0; j < k; ++j) {
      Evec hj = h.row(j).transpose();
      a += vw(j) * std::norm(u(j)) * (hj * hj.adjoint());
      rhs.col(j) = vw(j) * u(j) * hj;
    }
    auto solve_power = [&](double mu) {
      Ecx m = a + mu * Ecx::Identity(nt, nt);
      Ecx sol = m.ldlt().solve(rhs);
      return sol;
    };
    Ecx cand = solve_power(1e-12);
    double pw = cand.squaredNorm();
    if (!std::isfinite(pw) || pw > p_tot) {
      double lo = 0.0, hi = 1.0;
      while (true) {
        Ecx s = solve_power(hi);
        const double p = s.squaredNorm();
        if (std::isfinite(p) && p < p_tot) break;
        hi *= 2.0;
        if (hi > 1e18) break;
      }
      for (int b = 0; b < 200; ++b) {
        const double mid = 0.5 * (lo + hi);
        Ecx s = solve_power(mid);
        const double p = s.squaredNorm();
        if (!std::isfinite(p) || p > p_tot)
          lo = mid;
        else
          hi = mid;
      }
      cand = solve_power(hi);
    }
    w = cand;
    const double rate = digital_rate_eigen(h, w, beta, sigma2);
    if (trajectory) trajectory->push_back(rate);
    if (std::abs(rate - prev) < tol) {
      prev = rate;
      break;
    }
    prev = rate;
  }
  return it;
}

}  // namespace

DigitalResult mrt(const HybridInstance& inst) {
  inst.validate();
  const Ecx h = to_eigen(inst.h);
  DigitalResult r;
  Ecx v = mrt_precoder(h, inst.p_tot);
  r.v = from_eigen(v);
  r.rate = digital_sum_rate(inst.h, r.v, inst.beta, inst.sigma2);
  r.iterations = 1;
  return r;
}

DigitalResult zf(const HybridInstance& inst) {
  inst.validate();
  const int k = inst.k(), nt = inst.nt();
  if (k > nt) throw std::invalid_argument("zf: requires K <= Nt");
  // Zero-forcing needs conj(H) W = I, so pseudo-invert the conjugate rows.
  const Ecx hc = to_eigen(inst.h).conjugate();
  const Ecx gram = hc * hc.adjoint();  // K x K
  Eigen::FullPivLU<Ecx> lu(gram);
  if (lu.rank() < k) throw std::invalid_argument("zf: rank-deficient channel");
  const Ecx pinv = hc.adjoint() * lu.inverse();  // Nt x K
  Ecx v(nt, k);
  for (int u = 0; u < k; ++u) {
    const double n = pinv.col(u).norm();
    v.col(u) = std::sqrt(inst.p_tot / k) * pinv.col(u) / n;
  }
  DigitalResult r;
  r.v = from_eigen(v);
  r.rate = digital_sum_rate(inst.h, r.v, inst.beta, inst.sigma2);
  r.iterations = 1;
  return r;
}

DigitalResult wmmse(const HybridInstance& inst, int max_iters, double tol, std::vector<double>* trajectory) {
  inst.validate();
  const Ecx h = to_eigen(inst.h);
  Ecx w0 = mrt_precoder(h, inst.p_tot);
  std::vector<double> traj0;
  Ecx w_best = w0;
  int it_best = wmmse_run(h, inst.beta, inst.p_tot, inst.sigma2, max_iters, tol, w_best, &traj0);
  double best = digital_rate_eigen(h, w_best, inst.beta, inst.sigma2);
  std::vector<double> traj_best = traj0;
  if (inst.k() <= inst.nt()) {
    try {
      DigitalResult z = zf(inst);
      Ecx wz = to_eigen(z.v);
      std::vector<double> traj1;
      const int it1 = wmmse_run(h, inst.beta, inst.p_tot, inst.sigma2, max_iters, tol, wz, &traj1);
      const double rz = digital_rate_eigen(h, wz, inst.beta, inst.sigma2);
      if (rz > best) {
        best = rz;
        w_best = wz;
        it_best = it1;
        traj_best = traj1;
      }
    } catch (const std::invalid_argument&) {
      // rank-deficient channel: MRT start only
    }
  }
  if (trajectory) *trajectory = traj_best;
  DigitalResult r;
  r.v = from_eigen(w_best);
  r.rate = best;
  r.iterations = it_best;
  return r;
}

HybridResult pem_hybrid(const HybridInstance& inst, int ns) {
  inst.validate();
  const int k = inst.k(), nt = inst.nt();
  if (ns > nt) throw std::invalid_argument("pem_hybrid: Ns must be <= Nt");
  DigitalResult dig = wmmse(inst);
  const Ecx f = to_eigen(dig.v);  // Nt x K
  CxMat phases(nt, ns);
  const int from_f = std::min(k, ns);
  for (int l = 0; l < from_f; ++l)
    for (int t = 0; t < nt; ++t) phases.at(t, l) = f(t, l);
  if (ns > k) {
    const Ecx hh = to_eigen(inst.h).adjoint();  // Nt x K
    Eigen::JacobiSVD<Ecx> svd(hh, Eigen::ComputeFullU);
    const Ecx u = svd.matrixU();  // Nt x Nt
    for (int l = k; l < ns; ++l)
      for (int t = 0; t < nt; ++t) phases.at(t, l) = u(t, l);
  }
  HybridResult r;
  r.sol.w_rf = project_constant_modulus(phases);
  const Ecx wrf = to_eigen(r.sol.w_rf);
  const Ecx gram = wrf.adjoint() * wrf;
  const Ecx x = gram.ldlt().solve(wrf.adjoint() * f);  // Ns x K least squares
  r.sol.w_bb = project_power(r.sol.w_rf, from_eigen(x), inst.p_tot);
  r.rate = weighted_sum_rate(inst, r.sol);
  return r;
}

HybridResult random_search_oracle(const HybridInstance& inst, int ns, int budget, uint64_t seed) {
  inst.validate();
  const int k = inst.k(), nt = inst.nt();
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_real_distribution<double> u_phase(0.0, 2.0 * kPi);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));

  auto evaluate = [&](const CxMat& wrf, const CxMat& wbb_raw, HybridSolution* out) {
    HybridSolution sol{wrf, project_power(wrf, wbb_raw, inst.p_tot)};
    const double rate = weighted_sum_rate(inst, sol);
    if (out) *out = sol;
    return rate;
  };

  // PEM is always one of the candidates, so the oracle never loses to it.
  HybridResult best = pem_hybrid(inst, ns);
  CxMat best_rf = best.sol.w_rf;
  CxMat best_bb = best.sol.w_bb;

  for (int b = 0; b < budget; ++b) {
    CxMat wrf(nt, ns);
    for (cxd& v : wrf.a) v = std::polar(1.0, u_phase(rng));
    CxMat wbb(ns, k);
    for (cxd& v : wbb.a) v = cxd(gauss(rng), gauss(rng));
    if (wbb.fro_norm2() == 0.0) continue;
    HybridSolution sol;
    const double rate = evaluate(wrf, wbb, &sol);
    if (rate > best.rate) {
      best.rate = rate;
      best.sol = sol;
      best_rf = wrf;
      best_bb = sol.w_bb;
    }
  }

  // Coordinate ascent on analog phases and baseband entries; incumbent kept
  // on ties for determinism.
  for (double step = 0.5; step >= 1e-3; step *= 0.5) {
    bool improved = true;
    int guard = 0;
    while (improved && guard++ < 8) {
      improved = false;
      for (int t = 0; t < nt; ++t)
        for (int s = 0; s < ns; ++s) {
          const cxd old = best_rf.at(t, s);
          for (int dir = -1; dir <= 1; dir += 2) {
            CxMat cand = best_rf;
            cand.at(t, s) = old * std::polar(1.0, dir * step);
            HybridSolution sol;
            const double rate = evaluate(cand, best_bb, &sol);
            if (rate > best.rate) {
              best.rate = rate;
              best.sol = sol;
              best_rf = cand;
              improved = true;
            }
          }
        }
      const double scale = std::sqrt(best_bb.fro_norm2() / (ns * k));
      for (int s = 0; s < ns; ++s)
        for (int c = 0; c < k; ++c)
          for (int part = 0; part < 2; ++part)
            for (int dir = -1; dir <= 1; dir += 2) {
              CxMat cand = best_bb;
              cand.at(s, c) += (part == 0 ? cxd(dir * step * scale, 0) : cxd(0, dir * step * scale));
              if (cand.fro_norm2() == 0.0) continue;
              HybridSolution sol;
              const double rate = evaluate(best_rf, cand, &sol);
              if (rate > best.rate) {
                best.rate = rate;
                best.sol = sol;
                best_bb = sol.w_bb;
                improved = true;
              }
            }
    }
  }
  return best;
}

PowerResult wmmse_power(const PowerControlInstance& inst, int max_iters, double tol,
                        std::vector<double>* trajectory) {
  inst.validate();
  const int k = inst.k;
  std::vector<double> v(static_cast<size_t>(k), std::sqrt(inst.p_max));
  std::vector<double> p(static_cast<size_t>(k));
  auto rate_of = [&] {
    for (int i = 0; i < k; ++i) p[static_cast<size_t>(i)] = v[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
    return pc_sum_rate(inst, p);
  };
  double prev = rate_of();
  if (trajectory) trajectory->push_back(prev);
  int it = 0;
  std::vector<double> u(static_cast<size_t>(k)), w(static_cast<size_t>(k));
  for (it = 1; it <= max_iters; ++it) {
    for (int j = 0; j < k; ++j) {
      double den = inst.sigma2;
      for (int i = 0; i < k; ++i) den += inst.at(j, i) * v[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
      u[static_cast<size_t>(j)] = std::sqrt(inst.at(j, j)) * v[static_cast<size_t>(j)] / den;
      const double e = 1.0 - u[static_cast<size_t>(j)] * std::sqrt(inst.at(j, j)) * v[static_cast<size_t>(j)];
      w[static_cast<size_t>(j)] = 1.0 / std::max(e, 1e-14);
    }
    for (int j = 0; j < k; ++j) {
      double den = 0;
      for (int i = 0; i < k; ++i) den += w[static_cast<size_t>(i)] * u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)] * inst.at(i, j);
      double vj = den > 0 ? w[static_cast<size_t>(j)] * u[static_cast<size_t>(j)] * std::sqrt(inst.at(j, j)) / den : 0.0;
      v[static_cast<size_t>(j)] = std::clamp(vj, 0.0, std::sqrt(inst.p_max));
    }
    const double rate = rate_of();
    if (trajectory) trajectory->push_back(rate);
    if (std::abs(rate - prev) < tol) {
      prev = rate;
      break;
    }
    prev = rate;
  }
  PowerResult r;
  r.p = p;
  r.rate = prev;
  r.iterations = it;
  return r;
}

}  // namespace equinet
