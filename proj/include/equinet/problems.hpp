#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

namespace equinet {

using cxd = std::complex<double>;

// Row-major complex matrix; small and value-typed, enough for the
// objectives, projections and baselines at desk scale.
struct CxMat {
  int rows = 0, cols = 0;
  std::vector<cxd> a;

  CxMat() = default;
  CxMat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c) {}

  cxd& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  const cxd& at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  double fro_norm2() const {
    double s = 0;
    for (const cxd& v : a) s += std::norm(v);
    return s;
  }
};

CxMat cx_matmul(const CxMat& x, const CxMat& y);
CxMat cx_adjoint(const CxMat& x);

// Narrowband hybrid precoding problem data: channel H (K x Nt), user
// priorities, total power and noise power (both linear scale).
struct HybridInstance {
  CxMat h;
  std::vector<double> beta;
  double p_tot = 1.0;
  double sigma2 = 1.0;

  int k() const { return h.rows; }
  int nt() const { return h.cols; }
  void validate() const;
};

struct HybridSolution {
  CxMat w_rf;  // Nt x Ns, unit modulus entries
  CxMat w_bb;  // Ns x K
};

struct WidebandInstance {
  std::vector<CxMat> h;  // M matrices, K x Nt
  double p_tot = 1.0;
  double sigma2 = 1.0;

  int m() const { return static_cast<int>(h.size()); }
  void validate() const;
};

struct WidebandSolution {
  CxMat w_rf;
  std::vector<CxMat> w_bb;  // M matrices, Ns x K
};

// Interference-channel power control: gains (G)_{k,i} = |h_{k,i}|^2 with
// row k collecting what receiver k hears.
struct PowerControlInstance {
  int k = 0;
  std::vector<double> g;  // K x K row-major, nonnegative
  double p_max = 1.0;
  double sigma2 = 1.0;

  double at(int r, int c) const { return g[static_cast<size_t>(r) * k + c]; }
  void validate() const;
};

double sinr_k(const HybridInstance& inst, const HybridSolution& sol, int k);
double weighted_sum_rate(const HybridInstance& inst, const HybridSolution& sol);

// Fully-digital sum rate with precoder columns v_k (Nt x K).
double digital_sum_rate(const CxMat& h, const CxMat& v, std::span<const double> beta, double sigma2);

// Entrywise w / (|w| + 1e-12); an exactly-zero entry projects to 1+0j.
CxMat project_constant_modulus(const CxMat& w);

// sqrt(P_tot) * W'_BB / ||W_RF W'_BB||_F. Throws on all-zero W'_BB.
CxMat project_power(const CxMat& w_rf, const CxMat& w_bb_prime, double p_tot);

// Joint power scaling for the wideband constraint sum_m ||W_RF W_BB^m||^2 = P.
std::vector<CxMat> project_power_wideband(const CxMat& w_rf, const std::vector<CxMat>& w_bb_prime, double p_tot);

double wideband_sum_rate(const WidebandInstance& inst, const WidebandSolution& sol);

double pc_sum_rate(const PowerControlInstance& inst, std::span<const double> p);

// Constraint audit for emitted hybrid solutions; returns false and fills
// `why` on the first violated invariant.
bool hybrid_solution_ok(const HybridInstance& inst, const HybridSolution& sol, double tol_mod, double tol_pow,
                        std::string* why);
bool wideband_solution_ok(const WidebandInstance& inst, const WidebandSolution& sol, double tol_mod,
                          double tol_pow, std::string* why);

}  // namespace equinet
