#include "equinet/problems.hpp"

#include <cmath>
#include <span>
#include <stdexcept>

namespace equinet {

namespace {
constexpr double kModulusEps = 1e-12;
constexpr double kLog2 = 0.6931471805599453;  // ln 2
}  // namespace

CxMat cx_matmul(const CxMat& x, const CxMat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("cx_matmul: shape mismatch");
  CxMat out(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int p = 0; p < x.cols; ++p) {
      const cxd v = x.at(i, p);
      for (int j = 0; j < y.cols; ++j) out.at(i, j) += v * y.at(p, j);
    }
  return out;
}

CxMat cx_adjoint(const CxMat& x) {
  CxMat out(x.cols, x.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out.at(j, i) = std::conj(x.at(i, j));
  return out;
}

void HybridInstance::validate() const {
  if (h.rows < 1 || h.cols < 1) throw std::invalid_argument("channel matrix is empty");
  if (static_cast<int>(beta.size()) != h.rows) throw std::invalid_argument("beta length must equal K");
  for (double b : beta)
    if (b < 0) throw std::invalid_argument("beta must be nonnegative");
  if (p_tot <= 0) throw std::invalid_argument("p_tot must be positive");
  if (sigma2 <= 0) throw std::invalid_argument("sigma2 must be positive");
}

void WidebandInstance::validate() const {
  if (h.empty()) throw std::invalid_argument("no subcarriers");
  for (const CxMat& hm : h)
    if (hm.rows != h[0].rows || hm.cols != h[0].cols) throw std::invalid_argument("subcarrier shape mismatch");
  if (p_tot <= 0 || sigma2 <= 0) throw std::invalid_argument("powers must be positive");
}

void PowerControlInstance::validate() const {
  if (k < 1 || static_cast<int>(g.size()) != k * k) throw std::invalid_argument("gain matrix shape mismatch");
  for (double v : g)
    if (v < 0) throw std::invalid_argument("gains must be nonnegative");
  if (p_max <= 0 || sigma2 <= 0) throw std::invalid_argument("powers must be positive");
}

double sinr_k(const HybridInstance& inst, const HybridSolution& sol, int k) {
  const int K = inst.k();
  if (k < 0 || k >= K) throw std::out_of_range("user index out of range");
  const CxMat eff = cx_matmul(sol.w_rf, sol.w_bb);  // Nt x K
  double signal = 0, interference = 0;
  for (int i = 0; i < K; ++i) {
    cxd g = 0;
    for (int t = 0; t < inst.nt(); ++t) g += std::conj(inst.h.at(k, t)) * eff.at(t, i);
    if (i == k)
      signal = std::norm(g);
    else
      interference += std::norm(g);
  }
  return signal / (interference + inst.sigma2);
}

double weighted_sum_rate(const HybridInstance& inst, const HybridSolution& sol) {
  double rate = 0;
  for (int k = 0; k < inst.k(); ++k) rate += inst.beta[static_cast<size_t>(k)] * std::log1p(sinr_k(inst, sol, k)) / kLog2;
  return rate;
}

double digital_sum_rate(const CxMat& h, const CxMat& v, std::span<const double> beta, double sigma2) {
  const int K = h.rows, Nt = h.cols;
  if (v.rows != Nt || v.cols != K) throw std::invalid_argument("digital precoder must be Nt x K");
  double rate = 0;
  for (int k = 0; k < K; ++k) {
    double signal = 0, interference = 0;
    for (int i = 0; i < K; ++i) {
      cxd g = 0;
      for (int t = 0; t < Nt; ++t) g += std::conj(h.at(k, t)) * v.at(t, i);
      if (i == k)
        signal = std::norm(g);
      else
        interference += std::norm(g);
    }
    rate += beta[static_cast<size_t>(k)] * std::log1p(signal / (interference + sigma2)) / kLog2;
  }
  return rate;
}

CxMat project_constant_modulus(const CxMat& w) {
  CxMat out(w.rows, w.cols);
  for (size_t i = 0; i < w.a.size(); ++i) {
    const double m = std::abs(w.a[i]);
    out.a[i] = m == 0.0 ? cxd(1.0, 0.0) : w.a[i] / (m + kModulusEps);
  }
  return out;
}

CxMat project_power(const CxMat& w_rf, const CxMat& w_bb_prime, double p_tot) {
  const double n2 = cx_matmul(w_rf, w_bb_prime).fro_norm2();
  if (n2 == 0.0) throw std::invalid_argument("project_power: degenerate all-zero baseband precoder");
  const double s = std::sqrt(p_tot / n2);
  CxMat out = w_bb_prime;
  for (cxd& v : out.a) v *= s;
  return out;
}

std::vector<CxMat> project_power_wideband(const CxMat& w_rf, const std::vector<CxMat>& w_bb_prime, double p_tot) {
  double n2 = 0;
  for (const CxMat& wb : w_bb_prime) n2 += cx_matmul(w_rf, wb).fro_norm2();
  if (n2 == 0.0) throw std::invalid_argument("project_power_wideband: degenerate baseband precoder");
  const double s = std::sqrt(p_tot / n2);
  std::vector<CxMat> out = w_bb_prime;
  for (CxMat& wb : out)
    for (cxd& v : wb.a) v *= s;
  return out;
}

double wideband_sum_rate(const WidebandInstance& inst, const WidebandSolution& sol) {
  const int M = inst.m();
  if (static_cast<int>(sol.w_bb.size()) != M) throw std::invalid_argument("wideband precoder count mismatch");
  const int K = inst.h[0].rows;
  const std::vector<double> ones(static_cast<size_t>(K), 1.0);
  double rate = 0;
  for (int m = 0; m < M; ++m) {
    HybridInstance sub{inst.h[static_cast<size_t>(m)], ones, inst.p_tot, inst.sigma2};
    HybridSolution ssol{sol.w_rf, sol.w_bb[static_cast<size_t>(m)]};
    rate += weighted_sum_rate(sub, ssol);
  }
  return rate / M;
}

double pc_sum_rate(const PowerControlInstance& inst, std::span<const double> p) {
  if (static_cast<int>(p.size()) != inst.k) throw std::invalid_argument("power vector length mismatch");
  double rate = 0;
  for (int k = 0; k < inst.k; ++k) {
    double interference = inst.sigma2;
    for (int i = 0; i < inst.k; ++i)
      if (i != k) interference += inst.at(k, i) * p[static_cast<size_t>(i)];
    rate += std::log1p(inst.at(k, k) * p[static_cast<size_t>(k)] / interference) / kLog2;
  }
  return rate;
}

bool hybrid_solution_ok(const HybridInstance& inst, const HybridSolution& sol, double tol_mod, double tol_pow,
                        std::string* why) {
  for (const cxd& v : sol.w_rf.a)
    if (std::abs(std::abs(v) - 1.0) > tol_mod) {
      if (why) *why = "analog precoder entry modulus deviates by " + std::to_string(std::abs(std::abs(v) - 1.0));
      return false;
    }
  const double pw = cx_matmul(sol.w_rf, sol.w_bb).fro_norm2();
  if (std::abs(pw - inst.p_tot) > tol_pow * inst.p_tot) {
    if (why) *why = "power constraint off by relative " + std::to_string(std::abs(pw - inst.p_tot) / inst.p_tot);
    return false;
  }
  return true;
}

bool wideband_solution_ok(const WidebandInstance& inst, const WidebandSolution& sol, double tol_mod,
                          double tol_pow, std::string* why) {
  for (const cxd& v : sol.w_rf.a)
    if (std::abs(std::abs(v) - 1.0) > tol_mod) {
      if (why) *why = "analog precoder entry modulus deviates";
      return false;
    }
  double pw = 0;
  for (const CxMat& wb : sol.w_bb) pw += cx_matmul(sol.w_rf, wb).fro_norm2();
  if (std::abs(pw - inst.p_tot) > tol_pow * inst.p_tot) {
    if (why) *why = "summed power constraint off by relative " + std::to_string(std::abs(pw - inst.p_tot) / inst.p_tot);
    return false;
  }
  return true;
}

}  // namespace equinet
