#pragma once

#include <cstdint>
#include <string>

namespace equinet {

enum class LayerKind { OneD, TwoD, ThreeD };

LayerKind layer_kind_from_name(const std::string& s);
std::string layer_kind_name(LayerKind k);

// Inference cost of one update transition with C_l -> C_{l+1} channels.
// Multiply-adds count as 2 FLOPs, aggregation adds as 1.
struct ComplexityQuery {
  LayerKind kind = LayerKind::OneD;
  int64_t cl = 1, cl1 = 1;
  int64_t k = 1, nt = 1, ns = 1;

  void validate() const;
};

int64_t flops(const ComplexityQuery& q);
int64_t weight_count(const ComplexityQuery& q);

}  // namespace equinet
