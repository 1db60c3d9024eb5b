#pragma once

#include <cstdint>
#include <vector>

#include "equinet/problems.hpp"

namespace equinet {

// Clustered Saleh-Valenzuela parameters for a uniform linear array.
struct SVParams {
  int n_cl = 4;
  int n_ray = 5;
  double angular_spread_deg = 10.0;
  double d_over_lambda = 0.5;
};

struct WidebandParams {
  int m = 8;       // subcarriers
  int taps = 3;    // D
  double rolloff = 0.3;
  double t_s = 1.0;
};

// f(theta) = (1/sqrt(Nt)) [1, e^{j 2 pi (d/lambda) sin theta}, ...].
std::vector<cxd> array_response(double theta, int nt, double d_over_lambda);

// One ray with explicit gain and angle, scaled like the full SV model with
// N_cl = N_ray = 1; used by the generator and by identity checks.
std::vector<cxd> sv_single_ray(cxd gain, double theta, int nt, double d_over_lambda);

// K independent users, h = sqrt(Nt/(Ncl*Nray)) sum alpha_ij f(theta_ij);
// cluster centers uniform on [0, 2pi), rays uniform within +-spread/2,
// gains i.i.d. CN(0,1). Deterministic per (seed, params).
CxMat gen_sv_narrowband(int k, int nt, const SVParams& params, uint64_t seed);

// Raised-cosine pulse with unit symbol duration scaling.
double raised_cosine(double t, double rolloff);

// Tap-delay SV channel; returns M matrices (K x Nt) after an M-point DFT
// across taps. Ray delays are uniform on [0, (D-1) T_s] so the tap window
// always covers the pulse peak.
std::vector<CxMat> gen_wideband(int k, int nt, const SVParams& sv, const WidebandParams& wb, uint64_t seed);

// DFT across the tap axis: h^m = sum_d taps[d] e^{-j 2 pi m d / M}.
std::vector<CxMat> taps_to_subcarriers(const std::vector<CxMat>& taps, int m);

// Entries i.i.d. CN(0,1); the fully permutable reference distribution.
CxMat gen_rayleigh_iid(int k, int nt, uint64_t seed);

// |h|^2 gains of an i.i.d. Rayleigh interference channel (K x K).
std::vector<double> gen_pc_gains(int k, uint64_t seed);

}  // namespace equinet
