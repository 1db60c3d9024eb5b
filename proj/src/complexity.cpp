#include "equinet/complexity.hpp"

#include <stdexcept>

namespace equinet {

LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "1d") return LayerKind::OneD;
  if (s == "2d") return LayerKind::TwoD;
  if (s == "3d") return LayerKind::ThreeD;
  throw std::invalid_argument("unsupported layer kind '" + s + "' (expected 1d, 2d or 3d)");
}

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::OneD: return "1d";
    case LayerKind::TwoD: return "2d";
    case LayerKind::ThreeD: return "3d";
  }
  throw std::invalid_argument("unknown layer kind");
}

void ComplexityQuery::validate() const {
  if (cl < 1 || cl1 < 1 || k < 1 || nt < 1 || ns < 1)
    throw std::invalid_argument("complexity query fields must be positive");
}

int64_t flops(const ComplexityQuery& q) {
  q.validate();
  const int64_t dot = 2 * q.cl - 1;  // length-C_l dot product: C_l mults + C_l-1 adds
  switch (q.kind) {
    case LayerKind::OneD:
      return dot * q.cl1 * (q.nt + 1) + q.cl * (q.nt - 1);
    case LayerKind::TwoD:
      return dot * q.cl1 * (q.k * q.nt + q.k + q.nt) + q.cl * (q.k * (q.nt - 1) + (q.k - 1) * q.nt);
    case LayerKind::ThreeD:
      return dot * q.cl1 * (q.k * q.nt * q.ns + q.k * q.nt + q.k * q.ns + q.nt * q.ns) +
             q.cl * (q.k * q.nt * (q.ns - 1) + q.k * (q.nt - 1) * q.ns + (q.k - 1) * q.nt * q.ns);
  }
  throw std::invalid_argument("unknown layer kind");
}

int64_t weight_count(const ComplexityQuery& q) {
  q.validate();
  switch (q.kind) {
    case LayerKind::OneD: return 2 * q.cl * q.cl1;
    case LayerKind::TwoD: return 3 * q.cl * q.cl1;
    case LayerKind::ThreeD: return 4 * q.cl * q.cl1;
  }
  throw std::invalid_argument("unknown layer kind");
}

}  // namespace equinet
