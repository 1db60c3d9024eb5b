#include "equinet/channels.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace equinet {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Distinct per-purpose streams derived from one seed.
std::mt19937_64 seeded(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return std::mt19937_64(z ^ (z >> 31));
}

cxd standard_complex_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

}  // namespace

std::vector<cxd> array_response(double theta, int nt, double d_over_lambda) {
  if (nt < 1) throw std::invalid_argument("array_response: nt must be >= 1");
  std::vector<cxd> f(static_cast<size_t>(nt));
  const double phase = 2.0 * kPi * d_over_lambda * std::sin(theta);
  const double scale = 1.0 / std::sqrt(static_cast<double>(nt));
  for (int n = 0; n < nt; ++n) f[static_cast<size_t>(n)] = scale * std::polar(1.0, phase * n);
  return f;
}

std::vector<cxd> sv_single_ray(cxd gain, double theta, int nt, double d_over_lambda) {
  std::vector<cxd> h = array_response(theta, nt, d_over_lambda);
  const double scale = std::sqrt(static_cast<double>(nt));
  for (cxd& v : h) v *= gain * scale;
  return h;
}

CxMat gen_sv_narrowband(int k, int nt, const SVParams& params, uint64_t seed) {
  if (params.n_cl < 1 || params.n_ray < 1) throw std::invalid_argument("SV cluster/ray counts must be >= 1");
  CxMat h(k, nt);
  const double scale = std::sqrt(static_cast<double>(nt) / (params.n_cl * params.n_ray));
  const double spread = params.angular_spread_deg * kPi / 180.0;
  for (int u = 0; u < k; ++u) {
    std::mt19937_64 rng = seeded(seed, static_cast<uint64_t>(u));
    std::uniform_real_distribution<double> u_center(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> u_offset(-spread / 2.0, spread / 2.0);
    for (int c = 0; c < params.n_cl; ++c) {
      const double center = u_center(rng);
      for (int r = 0; r < params.n_ray; ++r) {
        const double theta = center + u_offset(rng);
        const cxd alpha = standard_complex_normal(rng);
        const std::vector<cxd> f = array_response(theta, nt, params.d_over_lambda);
        for (int t = 0; t < nt; ++t) h.at(u, t) += scale * alpha * f[static_cast<size_t>(t)];
      }
    }
  }
  return h;
}

double raised_cosine(double t, double rolloff) {
  const double x = t;
  const double sinc = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
  if (rolloff == 0.0) return sinc;
  const double d = 1.0 - 4.0 * rolloff * rolloff * x * x;
  // Limit at the singular points t = +-1/(2 beta) is sinc(t) * pi/4.
  if (std::abs(d) < 1e-12) return sinc * kPi / 4.0;
  return sinc * std::cos(kPi * rolloff * x) / d;
}

std::vector<CxMat> taps_to_subcarriers(const std::vector<CxMat>& taps, int m) {
  if (taps.empty()) throw std::invalid_argument("taps_to_subcarriers: no taps");
  const int rows = taps[0].rows, cols = taps[0].cols;
  std::vector<CxMat> out(static_cast<size_t>(m), CxMat(rows, cols));
  for (int mi = 0; mi < m; ++mi)
    for (size_t d = 0; d < taps.size(); ++d) {
      const cxd w = std::polar(1.0, -2.0 * kPi * mi * static_cast<double>(d) / m);
      for (size_t i = 0; i < taps[d].a.size(); ++i) out[static_cast<size_t>(mi)].a[i] += w * taps[d].a[i];
    }
  return out;
}

std::vector<CxMat> gen_wideband(int k, int nt, const SVParams& sv, const WidebandParams& wb, uint64_t seed) {
  if (wb.m < 1 || wb.taps < 1) throw std::invalid_argument("wideband params must be >= 1");
  const double scale = std::sqrt(static_cast<double>(nt) / (sv.n_cl * sv.n_ray));
  const double spread = sv.angular_spread_deg * kPi / 180.0;
  const double delay_span = (wb.taps - 1) * wb.t_s;
  std::vector<CxMat> taps(static_cast<size_t>(wb.taps), CxMat(k, nt));
  for (int u = 0; u < k; ++u) {
    std::mt19937_64 rng = seeded(seed, 0x57ULL + static_cast<uint64_t>(u));
    std::uniform_real_distribution<double> u_center(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> u_offset(-spread / 2.0, spread / 2.0);
    std::uniform_real_distribution<double> u_delay(0.0, delay_span);
    for (int c = 0; c < sv.n_cl; ++c) {
      const double center = u_center(rng);
      for (int r = 0; r < sv.n_ray; ++r) {
        const double theta = center + u_offset(rng);
        const cxd alpha = standard_complex_normal(rng);
        const double tau = delay_span == 0.0 ? 0.0 : u_delay(rng);
        const std::vector<cxd> f = array_response(theta, nt, sv.d_over_lambda);
        for (int d = 0; d < wb.taps; ++d) {
          const double p = raised_cosine((d * wb.t_s - tau) / wb.t_s, wb.rolloff);
          if (p == 0.0) continue;
          for (int t = 0; t < nt; ++t) taps[static_cast<size_t>(d)].at(u, t) += scale * alpha * p * f[static_cast<size_t>(t)];
        }
      }
    }
  }
  return taps_to_subcarriers(taps, wb.m);
}

CxMat gen_rayleigh_iid(int k, int nt, uint64_t seed) {
  CxMat h(k, nt);
  std::mt19937_64 rng = seeded(seed, 0xa111ULL);
  for (cxd& v : h.a) v = standard_complex_normal(rng);
  return h;
}

std::vector<double> gen_pc_gains(int k, uint64_t seed) {
  std::vector<double> g(static_cast<size_t>(k) * k);
  std::mt19937_64 rng = seeded(seed, 0xc011ULL);
  for (double& v : g) v = std::norm(standard_complex_normal(rng));
  return g;
}

}  // namespace equinet
