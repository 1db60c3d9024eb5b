#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "equinet/problems.hpp"

namespace equinet {

struct BaselineReport {
  std::string algorithm;
  std::vector<double> per_sample;
  double mean_rate = 0.0;
  int64_t iterations = 0;
  double wall_ms = 0.0;
};

struct DigitalResult {
  CxMat v;  // Nt x K
  double rate = 0.0;
  int iterations = 0;
};

struct HybridResult {
  HybridSolution sol;
  double rate = 0.0;
};

struct PowerResult {
  std::vector<double> p;
  double rate = 0.0;
  int iterations = 0;
};

// Matched filter, equal power split over users.
DigitalResult mrt(const HybridInstance& inst);

// Pseudo-inverse zero forcing, equal per-user power. Requires K <= Nt and a
// full-row-rank channel.
DigitalResult zf(const HybridInstance& inst);

// Alternating weighted-MMSE sum-rate maximization, fully digital. Monotone
// per iteration; restarts from MRT and (when defined) ZF, keeping the best.
// `trajectory`, when given, receives the winning run's objective per
// iteration.
DigitalResult wmmse(const HybridInstance& inst, int max_iters = 300, double tol = 1e-8,
                    std::vector<double>* trajectory = nullptr);

// Phase extraction of the fully-digital WMMSE precoder plus least-squares
// baseband fit; extra RF columns (Ns > K) come from additional left singular
// vectors of H^H.
HybridResult pem_hybrid(const HybridInstance& inst, int ns);

// Best of `budget` random feasible solutions (plus the PEM point) refined by
// coordinate ascent on analog phases and baseband entries. Desk-scale only.
HybridResult random_search_oracle(const HybridInstance& inst, int ns, int budget, uint64_t seed);

// Scalar-power WMMSE for the interference-channel objective.
PowerResult wmmse_power(const PowerControlInstance& inst, int max_iters = 500, double tol = 1e-10,
                        std::vector<double>* trajectory = nullptr);

}  // namespace equinet
