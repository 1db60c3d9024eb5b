#pragma once

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "equinet/baselines.hpp"
#include "equinet/config.hpp"
#include "equinet/model.hpp"
#include "equinet/train.hpp"

namespace equinet {

// ---- dataset views as problem instances ----

inline HybridInstance hybrid_instance_at(const Dataset<double>& d, int64_t i) {
  const Tensor<double>& re = d.field("h_re");
  const Tensor<double>& im = d.field("h_im");
  const int k = re.extent(1), nt = re.extent(2);
  HybridInstance inst;
  inst.h = CxMat(k, nt);
  for (int64_t j = 0; j < int64_t(k) * nt; ++j)
    inst.h.a[static_cast<size_t>(j)] = cxd(re[i * k * nt + j], im[i * k * nt + j]);
  const Tensor<double>& beta = d.field("beta");
  inst.beta.assign(beta.data() + i * k, beta.data() + (i + 1) * k);
  inst.p_tot = d.field("ptot")[i];
  inst.sigma2 = d.field("sigma2")[i];
  return inst;
}

inline PowerControlInstance pc_instance_at(const Dataset<double>& d, int64_t i) {
  const Tensor<double>& g = d.field("gain");
  const int k = g.extent(1);
  PowerControlInstance inst;
  inst.k = k;
  inst.g.assign(g.data() + i * k * k, g.data() + (i + 1) * k * k);
  inst.p_max = d.field("pmax")[i];
  inst.sigma2 = d.field("sigma2")[i];
  return inst;
}

// ---- baseline sweeps ----

struct EvalRow {
  std::string algorithm;
  double mean_rate = 0.0;
  int64_t samples = 0;
};

// Runs one classical algorithm over every sample of a dataset. Supported
// names depend on the problem: mrt, zf, wmmse, pem (precoding) and
// wmmse_power (power control); oracle runs the random-search oracle with
// the given budget.
inline EvalRow run_baseline(const std::string& name, const RunConfig& cfg, const Dataset<double>& data,
                            int oracle_budget = 10000) {
  EvalRow row;
  row.algorithm = name;
  row.samples = data.n;
  double acc = 0;
  if (cfg.model.head == Head::PcJoint2D) {
    if (name != "wmmse_power") throw std::invalid_argument("baseline '" + name + "' does not apply to power control");
    for (int64_t i = 0; i < data.n; ++i) acc += wmmse_power(pc_instance_at(data, i)).rate;
    row.mean_rate = acc / data.n;
    return row;
  }
  if (cfg.model.head == Head::Wideband4D)
    throw std::invalid_argument("wideband baselines are not implemented; evaluate the narrowband problems");
  for (int64_t i = 0; i < data.n; ++i) {
    const HybridInstance inst = hybrid_instance_at(data, i);
    if (name == "mrt")
      acc += mrt(inst).rate;
    else if (name == "zf")
      acc += zf(inst).rate;
    else if (name == "wmmse")
      acc += wmmse(inst).rate;
    else if (name == "pem")
      acc += pem_hybrid(inst, cfg.model.ns).rate;
    else if (name == "oracle")
      acc += random_search_oracle(inst, cfg.model.ns, oracle_budget, 1000 + static_cast<uint64_t>(i)).rate;
    else
      throw std::invalid_argument("unknown baseline '" + name + "'");
  }
  row.mean_rate = acc / data.n;
  return row;
}

// ---- equivariance and constraint audit ----

template <typename T>
struct AuditReport {
  int trials = 0;
  double max_equivariance_err = 0.0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

namespace detail {

template <typename T>
Tensor<T> permute_field(const Tensor<T>& t, int axis, const Permutation& pi) {
  return permute_along(t, axis, pi);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace detail

// Checks, over `trials` random instances and group elements, that the model
// commutes with the admissible permutations and that every emitted solution
// satisfies its constraints. Tolerances follow the precision: 1e-4 for f32,
// 1e-9 for f64 on equivariance; 1e-6 on constraints.
template <typename T>
AuditReport<T> audit_model(Model<T>& model, const RunConfig& cfg, int trials, uint64_t seed) {
  AuditReport<T> rep;
  rep.trials = trials;
  const double tol_eq = sizeof(T) == 4 ? 1e-4 : 1e-9;
  const double tol_con = 1e-6;
  const ModelSpec& spec = model.spec();
  const SetSignature sig = spec.signature();
  std::mt19937_64 rng(seed ^ 0xa0d1ULL);

  auto complain = [&](int trial, const std::string& what, double err) {
    std::ostringstream ss;
    ss << "trial " << trial << ": " << what;
    if (err >= 0) ss << " (err " << err << ")";
    rep.violations.push_back(ss.str());
  };

  for (int trial = 0; trial < trials; ++trial) {
    RunConfig icfg = cfg;
    icfg.train.seed = seed + 7919ULL * static_cast<uint64_t>(trial);
    const Dataset<double> base64 = generate_split(icfg, Split::Test, 1);
    const Dataset<T> base = base64.template cast<T>();
    Tape<T> tp;
    ForwardResult<T> r = model.forward(tp, base, false);
    const GroupElement g = random_group_element(sig, rng);

    if (spec.head == Head::PcJoint2D) {
      const Permutation& pi = g.per_set[0];
      Dataset<T> perm = base;
      perm.fields["gain"] = detail::permute_field(detail::permute_field(base.field("gain"), 1, pi), 2, pi);
      Tape<T> tq;
      ForwardResult<T> r2 = model.forward(tq, perm, false);
      const Tensor<T> expect = detail::permute_field(tp.val(r.outputs.at("p")), 1, pi);
      const double err = detail::max_abs_diff(tq.val(r2.outputs.at("p")), expect);
      rep.max_equivariance_err = std::max(rep.max_equivariance_err, err);
      if (err > tol_eq) complain(trial, "power vector does not commute with the joint permutation", err);
      const Tensor<T>& p = tp.val(r.outputs.at("p"));
      const double pmax = static_cast<double>(base.field("pmax")[0]);
      for (int64_t i = 0; i < p.size(); ++i)
        if (p[i] < 0 || static_cast<double>(p[i]) > pmax + tol_con) complain(trial, "power outside [0, P_M]", p[i]);
      continue;
    }

    const bool has_rf = r.outputs.count("w_rf_re") > 0;
    // Set order differs per head: wideband signatures lead with the
    // subcarrier set, the 1D learner only has the antenna set.
    const int user_set = spec.head == Head::Wideband4D ? 1 : 0;
    const int ant_set = spec.head == Head::Hybrid1D ? 0 : (spec.head == Head::Wideband4D ? 2 : 1);
    const Permutation& p_user = g.per_set[static_cast<size_t>(user_set)];
    const Permutation& p_ant = g.per_set[static_cast<size_t>(ant_set)];

    Dataset<T> perm = base;
    const int user_axis = spec.head == Head::Wideband4D ? 2 : 1;
    const int ant_axis = spec.head == Head::Wideband4D ? 3 : 2;
    if (spec.head == Head::Hybrid1D) {
      perm.fields["h_re"] = detail::permute_field(base.field("h_re"), 2, p_ant);
      perm.fields["h_im"] = detail::permute_field(base.field("h_im"), 2, p_ant);
    } else {
      perm.fields["h_re"] =
          detail::permute_field(detail::permute_field(base.field("h_re"), user_axis, p_user), ant_axis, p_ant);
      perm.fields["h_im"] =
          detail::permute_field(detail::permute_field(base.field("h_im"), user_axis, p_user), ant_axis, p_ant);
      if (base.has("beta")) perm.fields["beta"] = detail::permute_field(base.field("beta"), 1, p_user);
    }
    if (spec.head == Head::Wideband4D) {
      const Permutation& p_sub = g.per_set[0];
      perm.fields["h_re"] = detail::permute_field(perm.field("h_re"), 1, p_sub);
      perm.fields["h_im"] = detail::permute_field(perm.field("h_im"), 1, p_sub);
    }

    Tape<T> tq;
    ForwardResult<T> r2 = model.forward(tq, perm, false);

    double err = 0;
    if (has_rf) {
      // W_RF rows permute with antennas; W_BB columns with users.
      Tensor<T> exp_rf_re = detail::permute_field(tp.val(r.outputs.at("w_rf_re")), 1, p_ant);
      Tensor<T> exp_rf_im = detail::permute_field(tp.val(r.outputs.at("w_rf_im")), 1, p_ant);
      err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_rf_re")), exp_rf_re));
      err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_rf_im")), exp_rf_im));
      const int user_out_axis = spec.head == Head::Wideband4D ? 3 : 2;
      Tensor<T> exp_bb_re = spec.head == Head::Hybrid1D
                                ? tp.val(r.outputs.at("w_bb_re"))
                                : detail::permute_field(tp.val(r.outputs.at("w_bb_re")), user_out_axis, p_user);
      Tensor<T> exp_bb_im = spec.head == Head::Hybrid1D
                                ? tp.val(r.outputs.at("w_bb_im"))
                                : detail::permute_field(tp.val(r.outputs.at("w_bb_im")), user_out_axis, p_user);
      if (spec.head == Head::Wideband4D) {
        const Permutation& p_sub = g.per_set[0];
        exp_bb_re = detail::permute_field(exp_bb_re, 1, p_sub);
        exp_bb_im = detail::permute_field(exp_bb_im, 1, p_sub);
      }
      err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_bb_re")), exp_bb_re));
      err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_bb_im")), exp_bb_im));
    } else {
      // MISO: W_BB is (Nt, K); rows permute with antennas, columns with users.
      Tensor<T> exp_re = detail::permute_field(detail::permute_field(tp.val(r.outputs.at("w_bb_re")), 1, p_ant), 2, p_user);
      Tensor<T> exp_im = detail::permute_field(detail::permute_field(tp.val(r.outputs.at("w_bb_im")), 1, p_ant), 2, p_user);
      err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_bb_re")), exp_re));
      err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_bb_im")), exp_im));
    }
    rep.max_equivariance_err = std::max(rep.max_equivariance_err, err);
    if (err > tol_eq) complain(trial, "solution does not commute with the set permutations", err);

    // Constraint audit on the unpermuted forward pass.
    const HybridInstance inst = hybrid_instance_at(base64, 0);
    if (has_rf && spec.head != Head::Wideband4D) {
      HybridSolution sol;
      const Tensor<T>& rfre = tp.val(r.outputs.at("w_rf_re"));
      const Tensor<T>& rfim = tp.val(r.outputs.at("w_rf_im"));
      const Tensor<T>& bbre = tp.val(r.outputs.at("w_bb_re"));
      const Tensor<T>& bbim = tp.val(r.outputs.at("w_bb_im"));
      sol.w_rf = CxMat(spec.nt, spec.ns);
      sol.w_bb = CxMat(spec.ns, spec.k);
      for (int64_t i = 0; i < sol.w_rf.rows * sol.w_rf.cols; ++i)
        sol.w_rf.a[static_cast<size_t>(i)] = cxd(rfre[i], rfim[i]);
      for (int64_t i = 0; i < sol.w_bb.rows * sol.w_bb.cols; ++i)
        sol.w_bb.a[static_cast<size_t>(i)] = cxd(bbre[i], bbim[i]);
      std::string why;
      if (!hybrid_solution_ok(inst, sol, tol_con, tol_con, &why)) complain(trial, why, -1);
    } else if (spec.head == Head::Wideband4D) {
      WidebandInstance winst;
      winst.p_tot = inst.p_tot;
      winst.sigma2 = inst.sigma2;
      const Tensor<double>& re = base64.field("h_re");
      const Tensor<double>& im = base64.field("h_im");
      for (int mi = 0; mi < spec.m; ++mi) {
        CxMat hm(spec.k, spec.nt);
        for (int64_t j = 0; j < int64_t(spec.k) * spec.nt; ++j)
          hm.a[static_cast<size_t>(j)] = cxd(re[int64_t(mi) * spec.k * spec.nt + j], im[int64_t(mi) * spec.k * spec.nt + j]);
        winst.h.push_back(hm);
      }
      WidebandSolution wsol;
      const Tensor<T>& rfre = tp.val(r.outputs.at("w_rf_re"));
      const Tensor<T>& rfim = tp.val(r.outputs.at("w_rf_im"));
      const Tensor<T>& bbre = tp.val(r.outputs.at("w_bb_re"));
      const Tensor<T>& bbim = tp.val(r.outputs.at("w_bb_im"));
      wsol.w_rf = CxMat(spec.nt, spec.ns);
      for (int64_t i = 0; i < int64_t(spec.nt) * spec.ns; ++i) wsol.w_rf.a[static_cast<size_t>(i)] = cxd(rfre[i], rfim[i]);
      for (int mi = 0; mi < spec.m; ++mi) {
        CxMat bb(spec.ns, spec.k);
        for (int64_t j = 0; j < int64_t(spec.ns) * spec.k; ++j)
          bb.a[static_cast<size_t>(j)] = cxd(bbre[int64_t(mi) * spec.ns * spec.k + j], bbim[int64_t(mi) * spec.ns * spec.k + j]);
        wsol.w_bb.push_back(bb);
      }
      std::string why;
      if (!wideband_solution_ok(winst, wsol, tol_con, tol_con, &why)) complain(trial, why, -1);
    } else {
      // MISO power constraint on the digital precoder
      const Tensor<T>& vre = tp.val(r.outputs.at("w_bb_re"));
      const Tensor<T>& vim = tp.val(r.outputs.at("w_bb_im"));
      double n2 = 0;
      for (int64_t i = 0; i < vre.size(); ++i)
        n2 += static_cast<double>(vre[i]) * vre[i] + static_cast<double>(vim[i]) * vim[i];
      if (std::abs(n2 - inst.p_tot) > tol_con * inst.p_tot) complain(trial, "MISO power constraint violated", n2);
    }
  }

  // Virtual-feature family: permuting a permutes W_RF columns and W_BB rows.
  if (spec.needs_virtual_feature()) {
    RunConfig icfg = cfg;
    icfg.train.seed = seed + 0xfee1ULL;
    const Dataset<T> base = generate_split(icfg, Split::Test, 1).template cast<T>();
    Tape<T> tp;
    ForwardResult<T> r = model.forward(tp, base, false);
    const std::vector<T> a0 = model.virtual_feature();
    const Permutation p3 = Permutation::random(spec.ns, rng);
    std::vector<T> a3(a0.size());
    for (int s = 0; s < spec.ns; ++s) a3[static_cast<size_t>(s)] = a0[static_cast<size_t>(p3(s))];
    model.set_virtual_feature(a3);
    Tape<T> tq;
    ForwardResult<T> r2 = model.forward(tq, base, false);
    model.set_virtual_feature(a0);
    const int rf_col_axis = 2;
    double err = detail::max_abs_diff(tq.val(r2.outputs.at("w_rf_re")),
                                      detail::permute_field(tp.val(r.outputs.at("w_rf_re")), rf_col_axis, p3));
    err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_rf_im")),
                                             detail::permute_field(tp.val(r.outputs.at("w_rf_im")), rf_col_axis, p3)));
    const int bb_row_axis = spec.head == Head::Wideband4D ? 2 : 1;
    err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_bb_re")),
                                             detail::permute_field(tp.val(r.outputs.at("w_bb_re")), bb_row_axis, p3)));
    err = std::max(err, detail::max_abs_diff(tq.val(r2.outputs.at("w_bb_im")),
                                             detail::permute_field(tp.val(r.outputs.at("w_bb_im")), bb_row_axis, p3)));
    rep.max_equivariance_err = std::max(rep.max_equivariance_err, err);
    if (err > tol_eq) rep.violations.push_back("virtual-feature permutation does not permute the solution");
  }
  return rep;
}

// ---- finite-difference gradient audit ----

struct GradcheckResult {
  std::string problem;
  double max_rel_err = 0.0;
  int64_t parameter_count = 0;
};

// Central finite differences against the tape gradient on a small random
// model of the named problem; the relative error is measured against the
// gradient scale.
inline GradcheckResult gradcheck_problem(const std::string& problem, uint64_t seed) {
  RunConfig cfg;
  cfg.train.seed = seed + 17;
  ModelSpec& s = cfg.model;
  s.norm = Norm::None;
  if (problem == "p1") {
    s.head = Head::Hybrid3D;
    s.k = 2;
    s.nt = 2;
    s.ns = 2;
    s.channels = {4, 3, 4};
  } else if (problem == "p2") {
    s.head = Head::Wideband4D;
    s.m = 2;
    s.k = 2;
    s.nt = 2;
    s.ns = 2;
    s.channels = {3, 3, 4};
    cfg.channel.kind = "wideband";
    cfg.channel.wb.m = 2;
    cfg.channel.wb.taps = 2;
  } else if (problem == "miso") {
    s.head = Head::Miso2D;
    s.k = 2;
    s.nt = 3;
    s.channels = {2, 4, 2};
  } else if (problem == "hybrid2d") {
    s.head = Head::Hybrid2D;
    s.k = 2;
    s.nt = 3;
    s.ns = 2;
    s.channels = {4, 4, 8};
  } else if (problem == "hybrid1d") {
    s.head = Head::Hybrid1D;
    s.k = 2;
    s.nt = 3;
    s.ns = 2;
    s.channels = {7, 4, 12};
  } else if (problem == "pc") {
    s.head = Head::PcJoint2D;
    s.k = 3;
    s.channels = {1, 4, 2};
    cfg.channel.kind = "pc";
  } else if (problem == "nested") {
    s.head = Head::MisoNested2D;
    s.k = 2;
    s.nt = 4;
    s.nested_groups = {2, 2};
    s.channels = {2, 4, 2};
  } else {
    throw std::invalid_argument("unknown gradcheck problem '" + problem +
                                "' (expected p1, p2, miso, hybrid2d, hybrid1d, pc or nested)");
  }

  const Dataset<double> batch = generate_split(cfg, Split::Train, 3);
  Model<double> model(s);
  model.init_params(seed);

  Tape<double> tp;
  ForwardResult<double> r = model.forward(tp, batch, false);
  tp.backward(r.loss);
  const auto& ids = model.last_param_ids();
  std::vector<Tensor<double>> analytic;
  for (auto id : ids) analytic.push_back(tp.grad(id));

  GradcheckResult res;
  res.problem = problem;
  const std::vector<Tensor<double>*> params = model.params();
  const double h = 1e-5;
  double worst = 0, scale = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    res.parameter_count += p.size();
    for (int64_t j = 0; j < p.size(); ++j) {
      const double saved = p[j];
      p[j] = saved + h;
      Tape<double> t1;
      const double lp = t1.val(model.forward(t1, batch, false).loss)[0];
      p[j] = saved - h;
      Tape<double> t2;
      const double lm = t2.val(model.forward(t2, batch, false).loss)[0];
      p[j] = saved;
      const double fd = (lp - lm) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic[pi][j]));
      scale = std::max({scale, std::abs(fd), std::abs(analytic[pi][j])});
    }
  }
  res.max_rel_err = worst / std::max(scale, 1e-12);
  return res;
}

// ---- end-to-end training pipeline ----

struct RunSummary {
  std::vector<EpochStat> history;
  double test_rate = 0.0;
};

template <typename T>
RunSummary run_training(const RunConfig& cfg, Model<T>& model, Dataset<T>* test_out = nullptr,
                        std::ostream* log = nullptr) {
  Dataset<double> train64, val64, test64;
  if (!cfg.data_path.empty()) {
    const Dataset<double> all = load_dataset(cfg.data_path);
    const int need = cfg.train.train_samples + cfg.train.val_samples + cfg.train.test_samples;
    if (all.n < need)
      throw std::invalid_argument("dataset '" + cfg.data_path + "' holds " + std::to_string(all.n) +
                                  " samples but the config needs " + std::to_string(need));
    train64 = all.slice(0, cfg.train.train_samples);
    val64 = all.slice(cfg.train.train_samples, cfg.train.val_samples);
    test64 = all.slice(cfg.train.train_samples + cfg.train.val_samples, cfg.train.test_samples);
  } else {
    train64 = generate_split(cfg, Split::Train, cfg.train.train_samples);
    val64 = generate_split(cfg, Split::Val, cfg.train.val_samples);
    test64 = generate_split(cfg, Split::Test, cfg.train.test_samples);
  }
  const Dataset<T> train = train64.template cast<T>();
  const Dataset<T> val = val64.template cast<T>();
  const Dataset<T> test = test64.template cast<T>();

  model.init_params(cfg.train.seed);
  TrainOptions opt;
  opt.batch = cfg.train.batch;
  opt.lr = cfg.train.lr;
  opt.epochs = cfg.train.epochs;
  opt.seed = cfg.train.seed;
  if (log)
    opt.on_epoch = [log](const EpochStat& st) {
      (*log) << "epoch " << st.epoch << " train " << st.train_objective << " val " << st.val_objective << "\n";
    };
  RunSummary s;
  s.history = train_model(model, train, val, opt);
  s.test_rate = evaluate_mean_objective(model, test);
  if (test_out) *test_out = test;
  return s;
}

inline std::string history_csv(const std::vector<EpochStat>& hist) {
  std::ostringstream ss;
  ss << "epoch,train_objective_bpshz,val_objective_bpshz\n";
  for (const EpochStat& st : hist) ss << st.epoch << "," << st.train_objective << "," << st.val_objective << "\n";
  return ss.str();
}

}  // namespace equinet
