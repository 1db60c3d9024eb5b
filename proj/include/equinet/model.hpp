#pragma once

#include <cassert>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "equinet/autodiff.hpp"
#include "equinet/dataset.hpp"
#include "equinet/orbits.hpp"
#include "equinet/signature.hpp"

namespace equinet {

enum class Head { Hybrid3D, Hybrid2D, Hybrid1D, Wideband4D, Miso2D, MisoNested2D, PcJoint2D };
enum class Norm { None, Batch };

std::string head_name(Head h);
Head head_from_name(const std::string& s);

inline std::string head_name(Head h) {
  switch (h) {
    case Head::Hybrid3D: return "hybrid3d";
    case Head::Hybrid2D: return "hybrid2d";
    case Head::Hybrid1D: return "hybrid1d";
    case Head::Wideband4D: return "wideband4d";
    case Head::Miso2D: return "miso2d";
    case Head::MisoNested2D: return "miso_nested2d";
    case Head::PcJoint2D: return "pc_joint2d";
  }
  throw std::invalid_argument("unknown head");
}

inline Head head_from_name(const std::string& s) {
  if (s == "hybrid3d") return Head::Hybrid3D;
  if (s == "hybrid2d") return Head::Hybrid2D;
  if (s == "hybrid1d") return Head::Hybrid1D;
  if (s == "wideband4d") return Head::Wideband4D;
  if (s == "miso2d") return Head::Miso2D;
  if (s == "miso_nested2d") return Head::MisoNested2D;
  if (s == "pc_joint2d") return Head::PcJoint2D;
  throw std::invalid_argument("unknown head '" + s + "'");
}

// Architecture of one learner: problem head, set extents, channel widths
// C_1..C_L, normalization, and the per-RF-chain virtual feature (defaults to
// a_i = i/N_s, distinct values so the RF-chain symmetry is broken).
struct ModelSpec {
  Head head = Head::Miso2D;
  int k = 0, nt = 0, ns = 0, m = 1;
  std::vector<int> nested_groups;  // antenna sub-set sizes (MisoNested2D)
  std::vector<int> channels;
  Norm norm = Norm::Batch;
  std::vector<double> virtual_feature;  // empty -> default

  int layer_count() const { return static_cast<int>(channels.size()); }

  bool needs_virtual_feature() const { return head == Head::Hybrid3D || head == Head::Wideband4D; }

  std::vector<double> effective_virtual_feature() const {
    if (!needs_virtual_feature()) return {};
    if (!virtual_feature.empty()) return virtual_feature;
    std::vector<double> a(static_cast<size_t>(ns));
    for (int i = 0; i < ns; ++i) a[static_cast<size_t>(i)] = static_cast<double>(i + 1) / ns;
    return a;
  }

  int required_c1() const {
    switch (head) {
      case Head::Hybrid3D: return 4;
      case Head::Hybrid2D: return 4;
      case Head::Hybrid1D: return 3 * k + 1;
      case Head::Wideband4D: return 3;
      case Head::Miso2D: return 2;
      case Head::MisoNested2D: return 2;
      case Head::PcJoint2D: return 1;
    }
    return -1;
  }

  // -1 means the head does not constrain C_L (the pc output map mixes
  // whatever channels the last hidden layer has).
  int required_cl() const {
    switch (head) {
      case Head::Hybrid3D: return 4;
      case Head::Hybrid2D: return 4 * ns;
      case Head::Hybrid1D: return 2 * ns * (1 + k);
      case Head::Wideband4D: return 4;
      case Head::Miso2D: return 2;
      case Head::MisoNested2D: return 2;
      case Head::PcJoint2D: return -1;
    }
    return -1;
  }

  SetSignature signature() const {
    SetSignature sig;
    switch (head) {
      case Head::Hybrid3D:
        sig.sets = {{k, {}}, {nt, {}}, {ns, {}}};
        break;
      case Head::Hybrid2D:
      case Head::Miso2D:
        sig.sets = {{k, {}}, {nt, {}}};
        break;
      case Head::Hybrid1D:
        sig.sets = {{nt, {}}};
        break;
      case Head::Wideband4D:
        sig.sets = {{m, {}}, {k, {}}, {nt, {}}, {ns, {}}};
        break;
      case Head::MisoNested2D:
        sig.sets = {{k, {}}, {nt, nested_groups}};
        break;
      case Head::PcJoint2D:
        sig.sets = {{k, {}}, {k, {}}};
        sig.joint_groups = {{0, 1}};
        break;
    }
    return sig;
  }

  AxisSpace hidden_space() const {
    AxisSpace s;
    const int n = static_cast<int>(signature().sets.size());
    for (int i = 0; i < n; ++i) s.set_refs.push_back(i);
    return s;
  }

  void validate() const {
    if (channels.size() < 2) throw std::invalid_argument("model needs at least two layers");
    for (int c : channels)
      if (c <= 0) throw std::invalid_argument("channel counts must be positive");
    const int c1 = required_c1(), cl = required_cl();
    if (c1 > 0 && channels.front() != c1)
      throw std::invalid_argument("head " + head_name(head) + " requires C_1 = " + std::to_string(c1));
    if (cl > 0 && channels.back() != cl)
      throw std::invalid_argument("head " + head_name(head) + " requires C_L = " + std::to_string(cl));
    if (head == Head::MisoNested2D) {
      int total = 0;
      for (int b : nested_groups) total += b;
      if (nested_groups.empty() || total != nt)
        throw std::invalid_argument("nested antenna groups must sum to nt");
    }
    signature().validate();
    if (needs_virtual_feature() && !virtual_feature.empty() &&
        static_cast<int>(virtual_feature.size()) != ns)
      throw std::invalid_argument("virtual feature length must equal ns");
  }
};

// One update transition: orbit weights (C_out, C_in, n_weights) plus a bias
// per output channel.
template <typename T>
struct LayerWeights {
  Tensor<T> w;
  Tensor<T> b;

  int64_t weight_count() const { return w.size(); }
  int64_t bias_count() const { return b.size(); }
};

template <typename T>
struct BnState {
  std::vector<T> mean, var;
  bool initialized = false;
};

template <typename T>
struct ForwardResult {
  using VarId = typename Tape<T>::VarId;
  VarId loss = -1;       // scalar: negative mean objective
  VarId objective = -1;  // per-sample sum-rate, bits/s/Hz, shape (N)
  std::map<std::string, VarId> outputs;
};

template <typename T>
class Model {
 public:
  using VarId = typename Tape<T>::VarId;

  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    sig_ = spec_.signature();
    hidden_ = spec_.hidden_space();
    basis_ = adjacency_mask(enumerate_orbits(sig_, hidden_, hidden_));
    independent_ = sig_.joint_groups.empty();
    for (const SetDesc& s : sig_.sets)
      if (s.nested()) independent_ = false;

    const std::vector<int> hdims = hidden_.extents(sig_);
    if (independent_) {
      for (int d = 0; d < static_cast<int>(hdims.size()); ++d)
        if (hdims[static_cast<size_t>(d)] >= 2) active_dims_.push_back(d);
      n_weights_ = 1 + static_cast<int>(active_dims_.size());
      assert(n_weights_ == basis_.retained_count());
      build_feat_slots();
    } else {
      n_weights_ = basis_.retained_count();
      slot_table_ = std::make_shared<std::vector<int>>(make_slot_table(basis_));
    }

    const int L = spec_.layer_count();
    layers_.resize(static_cast<size_t>(L - 1));
    bn_.resize(static_cast<size_t>(L - 1));
    for (int li = 0; li + 1 < L; ++li) {
      const int cin = spec_.channels[static_cast<size_t>(li)];
      const int cout = spec_.channels[static_cast<size_t>(li + 1)];
      layers_[static_cast<size_t>(li)].w = Tensor<T>({cout, cin, n_weights_});
      layers_[static_cast<size_t>(li)].b = Tensor<T>({cout});
      bn_[static_cast<size_t>(li)].mean.assign(static_cast<size_t>(cout), T(0));
      bn_[static_cast<size_t>(li)].var.assign(static_cast<size_t>(cout), T(1));
    }

    if (spec_.head == Head::PcJoint2D) {
      AxisSpace out_space;
      out_space.set_refs = {0};
      out_basis_ = enumerate_orbits(sig_, out_space, hidden_);
      out_slot_table_ = std::make_shared<std::vector<int>>(make_slot_table(out_basis_));
      out_w_ = Tensor<T>({1, spec_.channels.back(), out_basis_.retained_count()});
      out_b_ = Tensor<T>({1});
    }
    vfeat_.clear();
    for (double a : spec_.effective_virtual_feature()) vfeat_.push_back(static_cast<T>(a));
  }

  const ModelSpec& spec() const { return spec_; }
  const SetSignature& signature() const { return sig_; }
  const OrbitBasis& update_basis() const { return basis_; }
  const OrbitBasis& output_basis() const { return out_basis_; }
  bool independent() const { return independent_; }
  int update_weight_count() const { return n_weights_; }
  int transition_count() const { return static_cast<int>(layers_.size()); }
  LayerWeights<T>& layer(int li) { return layers_[static_cast<size_t>(li)]; }
  const LayerWeights<T>& layer(int li) const { return layers_[static_cast<size_t>(li)]; }
  BnState<T>& bn_state(int li) { return bn_[static_cast<size_t>(li)]; }

  void set_virtual_feature(std::vector<T> a) {
    if (static_cast<int>(a.size()) != spec_.ns) throw std::invalid_argument("virtual feature length mismatch");
    vfeat_ = std::move(a);
  }
  const std::vector<T>& virtual_feature() const { return vfeat_; }

  // Weights of one transition for channel pair (co, ci), reordered to the
  // basis' weight-slot order (used to materialize the dense operator).
  std::vector<T> slot_weights(int li, int co, int ci) const {
    const LayerWeights<T>& lw = layers_[static_cast<size_t>(li)];
    const int cin = lw.w.extent(1);
    std::vector<T> out(static_cast<size_t>(n_weights_));
    for (int f = 0; f < n_weights_; ++f) {
      const int slot = independent_ ? feat_slot_[static_cast<size_t>(f)] : f;
      out[static_cast<size_t>(slot)] = lw.w[(int64_t(co) * cin + ci) * n_weights_ + f];
    }
    return out;
  }

  void init_params(uint64_t seed) {
    for (size_t li = 0; li < layers_.size(); ++li) {
      std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * (li + 1));
      LayerWeights<T>& lw = layers_[li];
      const T bound = std::sqrt(T(1) / static_cast<T>(lw.w.extent(1) * n_weights_));
      std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
      for (int64_t i = 0; i < lw.w.size(); ++i) lw.w[i] = static_cast<T>(dist(rng));
      for (int64_t i = 0; i < lw.b.size(); ++i) lw.b[i] = T(0);
      bn_[li].initialized = false;
      std::fill(bn_[li].mean.begin(), bn_[li].mean.end(), T(0));
      std::fill(bn_[li].var.begin(), bn_[li].var.end(), T(1));
    }
    // Start the raw analog-precoder entries near unit modulus: the
    // constant-modulus projection divides gradients by |w'|, so biasing the
    // real-part output channels to one keeps the phase updates conditioned
    // from the first step.
    if (!layers_.empty()) {
      Tensor<T>& b_last = layers_.back().b;
      for (int c : rf_re_channels()) b_last[c] = T(1);
    }
    if (spec_.head == Head::PcJoint2D) {
      std::mt19937_64 rng(seed + 0x51ed270b9ULL);
      const T bound = std::sqrt(T(1) / static_cast<T>(out_w_.extent(1) * out_w_.extent(2)));
      std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
      for (int64_t i = 0; i < out_w_.size(); ++i) out_w_[i] = static_cast<T>(dist(rng));
      out_b_[0] = T(0);
    }
  }

  // Output channels of X_L that hold Re(W'_RF), per head.
  std::vector<int> rf_re_channels() const {
    switch (spec_.head) {
      case Head::Hybrid3D:
      case Head::Wideband4D: return {0};
      case Head::Hybrid2D:
      case Head::Hybrid1D: {
        std::vector<int> c;
        for (int s = 0; s < spec_.ns; ++s) c.push_back(s);
        return c;
      }
      default: return {};
    }
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> ps;
    for (LayerWeights<T>& lw : layers_) {
      ps.push_back(&lw.w);
      ps.push_back(&lw.b);
    }
    if (spec_.head == Head::PcJoint2D) {
      ps.push_back(&out_w_);
      ps.push_back(&out_b_);
    }
    return ps;
  }

  int64_t trainable_count() {
    int64_t n = 0;
    for (Tensor<T>* p : params()) n += p->size();
    return n;
  }

  // Builds the input hyper-edge tensor X_1 for a batch (not on the tape:
  // inputs carry no gradient).
  Tensor<T> input_lift(const Dataset<T>& batch) const {
    switch (spec_.head) {
      case Head::Hybrid3D: return lift_hybrid3d(batch);
      case Head::Hybrid2D: return lift_hybrid2d(batch);
      case Head::Hybrid1D: return lift_hybrid1d(batch);
      case Head::Wideband4D: return lift_wideband4d(batch);
      case Head::Miso2D:
      case Head::MisoNested2D: return lift_miso2d(batch);
      case Head::PcJoint2D: return lift_pc(batch);
    }
    throw std::logic_error("unreachable");
  }

  // Applies one update transition: orbit-shared linear map, optional batch
  // norm, activation. The final transition is linear.
  VarId apply_transition(Tape<T>& tp, VarId x, int li, bool training) {
    VarId w = tp.param(layers_[static_cast<size_t>(li)].w);
    VarId b = tp.param(layers_[static_cast<size_t>(li)].b);
    param_ids_.push_back(w);
    param_ids_.push_back(b);
    VarId out;
    if (independent_) {
      out = tp.equi_mix(x, w, b, active_dims_);
    } else {
      const auto& dims = basis_.out_dims();
      out = tp.orbit_mix(x, w, b, slot_table_, basis_.out_size(), basis_.in_size(), dims);
    }
    const bool last = li + 1 == transition_count();
    if (!last) {
      if (spec_.norm == Norm::Batch) out = apply_bn(tp, out, li, training);
      out = tp.relu(out);
    }
    return out;
  }

  VarId hidden_forward(Tape<T>& tp, const Dataset<T>& batch, bool training) {
    param_ids_.clear();
    VarId x = tp.constant(input_lift(batch));
    for (int li = 0; li < transition_count(); ++li) x = apply_transition(tp, x, li, training);
    return x;
  }

  ForwardResult<T> forward(Tape<T>& tp, const Dataset<T>& batch, bool training) {
    VarId xl = hidden_forward(tp, batch, training);
    switch (spec_.head) {
      case Head::Hybrid3D: return head_hybrid3d(tp, xl, batch);
      case Head::Hybrid2D: return head_hybrid2d(tp, xl, batch);
      case Head::Hybrid1D: return head_hybrid1d(tp, xl, batch);
      case Head::Wideband4D: return head_wideband4d(tp, xl, batch);
      case Head::Miso2D:
      case Head::MisoNested2D: return head_miso2d(tp, xl, batch);
      case Head::PcJoint2D: return head_pc(tp, xl, batch);
    }
    throw std::logic_error("unreachable");
  }

  // Tape ids of the parameters touched by the last hidden_forward/forward
  // call, in params() order.
  const std::vector<VarId>& last_param_ids() const { return param_ids_; }

 private:
  ModelSpec spec_;
  SetSignature sig_;
  AxisSpace hidden_;
  OrbitBasis basis_;
  OrbitBasis out_basis_;
  bool independent_ = false;
  std::vector<int> active_dims_;
  std::vector<int> feat_slot_;  // feature index -> basis weight slot
  int n_weights_ = 0;
  std::shared_ptr<std::vector<int>> slot_table_;
  std::shared_ptr<std::vector<int>> out_slot_table_;
  std::vector<LayerWeights<T>> layers_;
  std::vector<BnState<T>> bn_;
  Tensor<T> out_w_, out_b_;
  std::vector<T> vfeat_;
  std::vector<VarId> param_ids_;

  static std::vector<int> make_slot_table(const OrbitBasis& basis) {
    const std::vector<int> slots = basis.weight_slots();
    const auto& table = basis.table();
    std::vector<int> st(table.size());
    for (size_t i = 0; i < table.size(); ++i) st[i] = slots[static_cast<size_t>(table[i])];
    return st;
  }

  void build_feat_slots() {
    const std::vector<int> slots = basis_.weight_slots();
    const std::vector<int>& dims = basis_.out_dims();
    std::vector<int> zero(dims.size(), 0);
    feat_slot_.assign(static_cast<size_t>(n_weights_), -1);
    feat_slot_[0] = slots[static_cast<size_t>(basis_.orbit_of(zero, zero))];
    for (size_t j = 0; j < active_dims_.size(); ++j) {
      std::vector<int> unit = zero;
      unit[static_cast<size_t>(active_dims_[j])] = 1;
      feat_slot_[1 + j] = slots[static_cast<size_t>(basis_.orbit_of(zero, unit))];
    }
  }

  VarId apply_bn(Tape<T>& tp, VarId x, int li, bool training) {
    BnState<T>& st = bn_[static_cast<size_t>(li)];
    if (training) {
      std::vector<T> mean, var;
      VarId out = tp.batchnorm_train(x, bn_eps(), &mean, &var);
      const T mom = T(0.1);
      if (!st.initialized) {
        st.mean = mean;
        st.var = var;
        st.initialized = true;
      } else {
        for (size_t c = 0; c < mean.size(); ++c) {
          st.mean[c] = (T(1) - mom) * st.mean[c] + mom * mean[c];
          st.var[c] = (T(1) - mom) * st.var[c] + mom * var[c];
        }
      }
      return out;
    }
    return tp.batchnorm_eval(x, st.mean, st.var, bn_eps());
  }

  static constexpr T bn_eps() { return T(1e-5); }
  static constexpr T norm_tiny() { return T(1e-30); }
  static constexpr T modulus_eps() { return T(1e-12); }

  // ---- input lifts ----

  Tensor<T> lift_hybrid3d(const Dataset<T>& b) const {
    const Tensor<T>& hre = b.field("h_re");
    const Tensor<T>& him = b.field("h_im");
    const Tensor<T>& beta = b.field("beta");
    const Tensor<T>& ptot = b.field("ptot");
    const int N = hre.extent(0), K = spec_.k, Nt = spec_.nt, Ns = spec_.ns;
    Tensor<T> x({N, 4, K, Nt, Ns});
    for (int n = 0; n < N; ++n)
      for (int ki = 0; ki < K; ++ki)
        for (int t = 0; t < Nt; ++t) {
          const T re = hre[(int64_t(n) * K + ki) * Nt + t];
          const T im = him[(int64_t(n) * K + ki) * Nt + t];
          const T be = beta[int64_t(n) * K + ki];
          const T pw = ptot[n];
          for (int s = 0; s < Ns; ++s) {
            const int64_t base = (((int64_t(n) * 4 + 0) * K + ki) * Nt + t) * Ns + s;
            const int64_t chan = int64_t(K) * Nt * Ns;
            x[base] = re + vfeat_[static_cast<size_t>(s)];
            x[base + chan] = im;
            x[base + 2 * chan] = be;
            x[base + 3 * chan] = pw;
          }
        }
    return x;
  }

  Tensor<T> lift_hybrid2d(const Dataset<T>& b) const {
    const Tensor<T>& hre = b.field("h_re");
    const Tensor<T>& him = b.field("h_im");
    const Tensor<T>& beta = b.field("beta");
    const Tensor<T>& ptot = b.field("ptot");
    const int N = hre.extent(0), K = spec_.k, Nt = spec_.nt;
    Tensor<T> x({N, 4, K, Nt});
    for (int n = 0; n < N; ++n)
      for (int ki = 0; ki < K; ++ki)
        for (int t = 0; t < Nt; ++t) {
          const int64_t base = ((int64_t(n) * 4 + 0) * K + ki) * Nt + t;
          const int64_t chan = int64_t(K) * Nt;
          x[base] = hre[(int64_t(n) * K + ki) * Nt + t];
          x[base + chan] = him[(int64_t(n) * K + ki) * Nt + t];
          x[base + 2 * chan] = beta[int64_t(n) * K + ki];
          x[base + 3 * chan] = ptot[n];
        }
    return x;
  }

  Tensor<T> lift_hybrid1d(const Dataset<T>& b) const {
    const Tensor<T>& hre = b.field("h_re");
    const Tensor<T>& him = b.field("h_im");
    const Tensor<T>& beta = b.field("beta");
    const Tensor<T>& ptot = b.field("ptot");
    const int N = hre.extent(0), K = spec_.k, Nt = spec_.nt;
    const int C = 3 * K + 1;
    Tensor<T> x({N, C, Nt});
    for (int n = 0; n < N; ++n) {
      for (int ki = 0; ki < K; ++ki)
        for (int t = 0; t < Nt; ++t) {
          x[(int64_t(n) * C + ki) * Nt + t] = hre[(int64_t(n) * K + ki) * Nt + t];
          x[(int64_t(n) * C + K + ki) * Nt + t] = him[(int64_t(n) * K + ki) * Nt + t];
          x[(int64_t(n) * C + 2 * K + ki) * Nt + t] = beta[int64_t(n) * K + ki];
        }
      for (int t = 0; t < Nt; ++t) x[(int64_t(n) * C + 3 * K) * Nt + t] = ptot[n];
    }
    return x;
  }

  Tensor<T> lift_wideband4d(const Dataset<T>& b) const {
    const Tensor<T>& hre = b.field("h_re");
    const Tensor<T>& him = b.field("h_im");
    const Tensor<T>& ptot = b.field("ptot");
    const int N = hre.extent(0), M = spec_.m, K = spec_.k, Nt = spec_.nt, Ns = spec_.ns;
    Tensor<T> x({N, 3, M, K, Nt, Ns});
    const int64_t chan = int64_t(M) * K * Nt * Ns;
    for (int n = 0; n < N; ++n)
      for (int mi = 0; mi < M; ++mi)
        for (int ki = 0; ki < K; ++ki)
          for (int t = 0; t < Nt; ++t) {
            const T re = hre[((int64_t(n) * M + mi) * K + ki) * Nt + t];
            const T im = him[((int64_t(n) * M + mi) * K + ki) * Nt + t];
            for (int s = 0; s < Ns; ++s) {
              const int64_t base = ((((int64_t(n) * 3 + 0) * M + mi) * K + ki) * Nt + t) * Ns + s;
              x[base] = re + vfeat_[static_cast<size_t>(s)];
              x[base + chan] = im;
              x[base + 2 * chan] = ptot[n];
            }
          }
    return x;
  }

  Tensor<T> lift_miso2d(const Dataset<T>& b) const {
    const Tensor<T>& hre = b.field("h_re");
    const Tensor<T>& him = b.field("h_im");
    const int N = hre.extent(0), K = spec_.k, Nt = spec_.nt;
    Tensor<T> x({N, 2, K, Nt});
    const int64_t chan = int64_t(K) * Nt;
    for (int n = 0; n < N; ++n)
      for (int64_t j = 0; j < chan; ++j) {
        x[int64_t(n) * 2 * chan + j] = hre[int64_t(n) * chan + j];
        x[int64_t(n) * 2 * chan + chan + j] = him[int64_t(n) * chan + j];
      }
    return x;
  }

  Tensor<T> lift_pc(const Dataset<T>& b) const {
    const Tensor<T>& g = b.field("gain");
    const int N = g.extent(0), K = spec_.k;
    Tensor<T> x({N, 1, K, K});
    for (int64_t i = 0; i < g.size(); ++i) x[i] = g[i];
    return x;
  }

  // ---- shared head pieces ----

  VarId const_sigma2_bcast(Tape<T>& tp, const Dataset<T>& b, int K) const {
    const Tensor<T>& s2 = b.field("sigma2");
    const int N = s2.extent(0);
    Tensor<T> t({N, K});
    for (int n = 0; n < N; ++n)
      for (int ki = 0; ki < K; ++ki) t[int64_t(n) * K + ki] = s2[n];
    return tp.constant(std::move(t));
  }

  VarId const_sqrt_ptot(Tape<T>& tp, const Dataset<T>& b) const {
    Tensor<T> t = b.field("ptot");
    for (int64_t i = 0; i < t.size(); ++i) t[i] = std::sqrt(t[i]);
    return tp.constant(std::move(t));
  }

  struct ComplexPair {
    VarId re, im;
  };

  ComplexPair tape_cmatmul(Tape<T>& tp, ComplexPair a, ComplexPair b) {
    VarId re = tp.sub(tp.bmm(a.re, b.re), tp.bmm(a.im, b.im));
    VarId im = tp.add(tp.bmm(a.re, b.im), tp.bmm(a.im, b.re));
    return {re, im};
  }

  ComplexPair tape_modulus_project(Tape<T>& tp, ComplexPair w) {
    VarId m2 = tp.add(tp.mul(w.re, w.re), tp.mul(w.im, w.im));
    VarId m = tp.add_const(tp.sqrt_eps(m2, norm_tiny()), modulus_eps());
    return {tp.div(w.re, m), tp.div(w.im, m)};
  }

  // Weighted sum-rate (bits/s/Hz) per sample from an effective digital
  // precoder A (N, Nt, K) and channel constants.
  VarId tape_digital_rate(Tape<T>& tp, ComplexPair a, VarId h_re, VarId h_im, VarId beta, VarId sig2) {
    VarId g_re = tp.add(tp.bmm(h_re, a.re), tp.bmm(h_im, a.im));
    VarId g_im = tp.sub(tp.bmm(h_re, a.im), tp.bmm(h_im, a.re));
    VarId s = tp.add(tp.mul(g_re, g_re), tp.mul(g_im, g_im));
    VarId sig = tp.take_diag(s);
    VarId row = tp.sum_axis(s, 2);
    VarId interf = tp.add(tp.sub(row, sig), sig2);
    VarId gamma = tp.div(sig, interf);
    VarId rate = tp.scale(tp.log1p_(gamma), T(1) / std::log(T(2)));
    return tp.sum_axis(tp.mul(rate, beta), 1);
  }

  ForwardResult<T> finish(Tape<T>& tp, VarId per_sample, std::map<std::string, VarId> outs) {
    ForwardResult<T> r;
    r.objective = per_sample;
    r.loss = tp.neg(tp.mean_all(per_sample));
    r.outputs = std::move(outs);
    return r;
  }

  // ---- heads ----

  ForwardResult<T> head_hybrid_common(Tape<T>& tp, ComplexPair rfp, ComplexPair bbp, const Dataset<T>& b) {
    const int K = spec_.k;
    ComplexPair rf = tape_modulus_project(tp, rfp);
    ComplexPair eff = tape_cmatmul(tp, rf, bbp);  // (N, Nt, K)
    VarId fro2 = tp.sum_axis(tp.sum_axis(tp.add(tp.mul(eff.re, eff.re), tp.mul(eff.im, eff.im)), 2), 1);
    VarId scale_v = tp.mul(tp.recip(tp.sqrt_eps(fro2, norm_tiny())), const_sqrt_ptot(tp, b));
    ComplexPair bb = {tp.bscale(bbp.re, scale_v), tp.bscale(bbp.im, scale_v)};
    ComplexPair a = {tp.bscale(eff.re, scale_v), tp.bscale(eff.im, scale_v)};
    VarId h_re = tp.constant(b.field("h_re"));
    VarId h_im = tp.constant(b.field("h_im"));
    VarId beta = tp.constant(b.field("beta"));
    VarId per = tape_digital_rate(tp, a, h_re, h_im, beta, const_sigma2_bcast(tp, b, K));
    return finish(tp, per,
                  {{"w_rf_re", rf.re}, {"w_rf_im", rf.im}, {"w_bb_re", bb.re}, {"w_bb_im", bb.im}});
  }

  ForwardResult<T> head_hybrid3d(Tape<T>& tp, VarId xl, const Dataset<T>& b) {
    const int K = spec_.k, Nt = spec_.nt, Ns = spec_.ns;
    const int N = tp.val(xl).extent(0);
    auto chan = [&](int c) { return tp.reshape(tp.narrow(xl, 1, c, 1), {N, K, Nt, Ns}); };
    VarId rf_re = tp.mean_axis(chan(0), 1);  // (N, Nt, Ns)
    VarId rf_im = tp.mean_axis(chan(1), 1);
    VarId bb_re = tp.transpose_last2(tp.mean_axis(chan(2), 2));  // (N, Ns, K)
    VarId bb_im = tp.transpose_last2(tp.mean_axis(chan(3), 2));
    return head_hybrid_common(tp, {rf_re, rf_im}, {bb_re, bb_im}, b);
  }

  ForwardResult<T> head_hybrid2d(Tape<T>& tp, VarId xl, const Dataset<T>& b) {
    const int K = spec_.k, Nt = spec_.nt, Ns = spec_.ns;
    const int N = tp.val(xl).extent(0);
    auto block = [&](int c0) { return tp.reshape(tp.narrow(xl, 1, c0, Ns), {N, Ns, K, Nt}); };
    VarId rf_re = tp.transpose_last2(tp.mean_axis(block(0), 2));      // (N, Nt, Ns)
    VarId rf_im = tp.transpose_last2(tp.mean_axis(block(Ns), 2));
    VarId bb_re = tp.mean_axis(block(2 * Ns), 3);                     // (N, Ns, K)
    VarId bb_im = tp.mean_axis(block(3 * Ns), 3);
    return head_hybrid_common(tp, {rf_re, rf_im}, {bb_re, bb_im}, b);
  }

  ForwardResult<T> head_hybrid1d(Tape<T>& tp, VarId xl, const Dataset<T>& b) {
    const int K = spec_.k, Nt = spec_.nt, Ns = spec_.ns;
    const int N = tp.val(xl).extent(0);
    VarId rf_re = tp.transpose_last2(tp.reshape(tp.narrow(xl, 1, 0, Ns), {N, Ns, Nt}));
    VarId rf_im = tp.transpose_last2(tp.reshape(tp.narrow(xl, 1, Ns, Ns), {N, Ns, Nt}));
    VarId bb_re = tp.reshape(tp.mean_axis(tp.narrow(xl, 1, 2 * Ns, Ns * K), 2), {N, Ns, K});
    VarId bb_im = tp.reshape(tp.mean_axis(tp.narrow(xl, 1, 2 * Ns + Ns * K, Ns * K), 2), {N, Ns, K});
    return head_hybrid_common(tp, {rf_re, rf_im}, {bb_re, bb_im}, b);
  }

  ForwardResult<T> head_miso2d(Tape<T>& tp, VarId xl, const Dataset<T>& b) {
    const int K = spec_.k, Nt = spec_.nt;
    const int N = tp.val(xl).extent(0);
    // X_L channels are (Re, Im) of W_BB^T on the (user, antenna) grid.
    VarId v_re = tp.transpose_last2(tp.reshape(tp.narrow(xl, 1, 0, 1), {N, K, Nt}));  // (N, Nt, K)
    VarId v_im = tp.transpose_last2(tp.reshape(tp.narrow(xl, 1, 1, 1), {N, K, Nt}));
    VarId fro2 = tp.sum_axis(tp.sum_axis(tp.add(tp.mul(v_re, v_re), tp.mul(v_im, v_im)), 2), 1);
    VarId scale_v = tp.mul(tp.recip(tp.sqrt_eps(fro2, norm_tiny())), const_sqrt_ptot(tp, b));
    ComplexPair v = {tp.bscale(v_re, scale_v), tp.bscale(v_im, scale_v)};
    VarId h_re = tp.constant(b.field("h_re"));
    VarId h_im = tp.constant(b.field("h_im"));
    VarId beta = tp.constant(b.field("beta"));
    VarId per = tape_digital_rate(tp, v, h_re, h_im, beta, const_sigma2_bcast(tp, b, K));
    return finish(tp, per, {{"w_bb_re", v.re}, {"w_bb_im", v.im}});
  }

  ForwardResult<T> head_wideband4d(Tape<T>& tp, VarId xl, const Dataset<T>& b) {
    const int M = spec_.m, K = spec_.k, Nt = spec_.nt, Ns = spec_.ns;
    const int N = tp.val(xl).extent(0);
    auto chan = [&](int c) { return tp.reshape(tp.narrow(xl, 1, c, 1), {N, M, K, Nt, Ns}); };
    // W_RF averages over users and subcarriers; W_BB^m averages over antennas.
    VarId rf_re = tp.mean_axis(tp.mean_axis(chan(0), 1), 1);  // (N, Nt, Ns)
    VarId rf_im = tp.mean_axis(tp.mean_axis(chan(1), 1), 1);
    VarId bbp_re = tp.transpose_last2(tp.mean_axis(chan(2), 3));  // (N, M, Ns, K)
    VarId bbp_im = tp.transpose_last2(tp.mean_axis(chan(3), 3));
    ComplexPair rf = tape_modulus_project(tp, {rf_re, rf_im});
    // Per-subcarrier products with the shared analog precoder.
    ComplexPair rfb = {tp.reshape(tp.broadcast_axis(rf.re, 1, M), {N * M, Nt, Ns}),
                       tp.reshape(tp.broadcast_axis(rf.im, 1, M), {N * M, Nt, Ns})};
    ComplexPair bbp = {tp.reshape(bbp_re, {N * M, Ns, K}), tp.reshape(bbp_im, {N * M, Ns, K})};
    ComplexPair eff = tape_cmatmul(tp, rfb, bbp);  // (N*M, Nt, K)
    VarId sq = tp.add(tp.mul(eff.re, eff.re), tp.mul(eff.im, eff.im));
    VarId fro2 = tp.sum_axis(tp.reshape(tp.sum_axis(tp.sum_axis(sq, 2), 1), {N, M}), 1);  // (N)
    VarId scale_v = tp.mul(tp.recip(tp.sqrt_eps(fro2, norm_tiny())), const_sqrt_ptot(tp, b));
    VarId scale_rep = rep_per_subcarrier(tp, scale_v, N, M);  // (N*M)
    ComplexPair bb = {tp.bscale(bbp.re, scale_rep), tp.bscale(bbp.im, scale_rep)};
    ComplexPair a = {tp.bscale(eff.re, scale_rep), tp.bscale(eff.im, scale_rep)};
    Tensor<T> hre = b.field("h_re");
    Tensor<T> him = b.field("h_im");
    VarId h_re = tp.constant(Tensor<T>({N * M, K, Nt}, hre.vec()));
    VarId h_im = tp.constant(Tensor<T>({N * M, K, Nt}, him.vec()));
    Tensor<T> ones({N * M, K});
    for (int64_t i = 0; i < ones.size(); ++i) ones[i] = T(1);
    VarId beta = tp.constant(std::move(ones));
    const Tensor<T>& s2 = b.field("sigma2");
    Tensor<T> s2b({N * M, K});
    for (int n = 0; n < N; ++n)
      for (int mi = 0; mi < M; ++mi)
        for (int ki = 0; ki < K; ++ki) s2b[(int64_t(n) * M + mi) * K + ki] = s2[n];
    VarId per_sub = tape_digital_rate(tp, a, h_re, h_im, beta, tp.constant(std::move(s2b)));  // (N*M)
    VarId per = tp.scale(tp.sum_axis(tp.reshape(per_sub, {N, M}), 1), T(1) / static_cast<T>(M));
    return finish(tp, per,
                  {{"w_rf_re", rf.re},
                   {"w_rf_im", rf.im},
                   {"w_bb_re", tp.reshape(bb.re, {N, M, Ns, K})},
                   {"w_bb_im", tp.reshape(bb.im, {N, M, Ns, K})}});
  }

  VarId rep_per_subcarrier(Tape<T>& tp, VarId v, int N, int M) {
    return tp.reshape(tp.broadcast_axis(v, 1, M), {N * M});
  }

  ForwardResult<T> head_pc(Tape<T>& tp, VarId xl, const Dataset<T>& b) {
    const int K = spec_.k;
    const int N = tp.val(xl).extent(0);
    VarId ow = tp.param(out_w_);
    VarId ob = tp.param(out_b_);
    param_ids_.push_back(ow);
    param_ids_.push_back(ob);
    VarId pre = tp.reshape(
        tp.orbit_mix(xl, ow, ob, out_slot_table_, out_basis_.out_size(), out_basis_.in_size(), {K}), {N, K});
    VarId pmax = tp.constant(b.field("pmax"));
    VarId p = tp.bscale(tp.logistic(pre), pmax);  // (N, K) in (0, P_M)
    const Tensor<T>& g = b.field("gain");
    Tensor<T> diag({N, K});
    for (int n = 0; n < N; ++n)
      for (int ki = 0; ki < K; ++ki) diag[int64_t(n) * K + ki] = g[(int64_t(n) * K + ki) * K + ki];
    VarId diag_c = tp.constant(std::move(diag));
    VarId g_c = tp.constant(g);
    VarId sig = tp.mul(diag_c, p);
    VarId gp = tp.reshape(tp.bmm(g_c, tp.reshape(p, {N, K, 1})), {N, K});
    VarId interf = tp.add(tp.sub(gp, sig), const_sigma2_bcast(tp, b, K));
    VarId gamma = tp.div(sig, interf);
    VarId per = tp.sum_axis(tp.scale(tp.log1p_(gamma), T(1) / std::log(T(2))), 1);
    return finish(tp, per, {{"p", p}});
  }
};

}  // namespace equinet
