// equinet: experiment runner for permutation-equivariant precoding and
// power-control learners.
//
// Exit codes: 0 success, 1 assertion/audit failure, 2 usage or config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "equinet/checkpoint.hpp"
#include "equinet/complexity.hpp"
#include "equinet/container.hpp"
#include "equinet/experiment.hpp"
#include "equinet/orbits.hpp"

namespace fs = std::filesystem;
using namespace equinet;

namespace {

int threads_from_env() {
  // Worker-count knob; all current kernels are single-threaded and
  // deterministic, so this only caps future sample-level parallelism.
  const char* v = std::getenv("EQUINET_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  if (n < 1) throw std::invalid_argument("EQUINET_THREADS must be a positive integer");
  return n;
}

int cmd_gen_channels(const std::string& config_path, const std::string& out, int samples) {
  RunConfig cfg = load_run_config(config_path);
  const int n = samples > 0 ? samples
                            : cfg.train.train_samples + cfg.train.val_samples + cfg.train.test_samples;
  const Dataset<double> d = generate_split(cfg, Split::Train, n);
  save_dataset(out, d, cfg);
  std::cout << "wrote " << n << " samples to " << out << " (+ sidecar " << out << ".json)\n";
  return 0;
}

template <typename T>
int train_run(RunConfig& cfg, const std::string& out_dir) {
  Model<T> model(cfg.model);
  std::cout << "training " << head_name(cfg.model.head) << " | " << model.trainable_count()
            << " trainable parameters | precision " << cfg.train.precision << "\n";
  RunSummary s = run_training<T>(cfg, model, nullptr, &std::cout);
  fs::create_directories(out_dir);
  save_checkpoint(out_dir, model, cfg);
  write_text_file((fs::path(out_dir) / "loss_history.csv").string(), history_csv(s.history));
  std::cout << "test-set mean sum-rate: " << s.test_rate << " bits/s/Hz\n";
  std::cout << "checkpoint written to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_run_config(config_path);
  if (cfg.train.precision == "f64") return train_run<double>(cfg, out_dir);
  return train_run<float>(cfg, out_dir);
}

template <typename T>
double model_rate_on(const std::string& ckpt, const Dataset<double>& test) {
  Model<T> model = load_checkpoint<T>(ckpt);
  const Dataset<T> t = test.cast<T>();
  return evaluate_mean_objective(model, t);
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& baseline_csv,
             const std::string& out, int samples, int oracle_budget) {
  RunConfig cfg = checkpoint_config(ckpt);
  Dataset<double> test;
  if (!data_path.empty()) {
    test = load_dataset(data_path);
    if (samples > 0 && samples < test.n) test = test.slice(0, samples);
  } else {
    test = generate_split(cfg, Split::Test, samples > 0 ? samples : cfg.train.test_samples);
  }

  std::vector<EvalRow> rows;
  EvalRow gnn;
  gnn.algorithm = "gnn";
  gnn.samples = test.n;
  gnn.mean_rate = checkpoint_precision(ckpt) == "f64" ? model_rate_on<double>(ckpt, test)
                                                      : model_rate_on<float>(ckpt, test);
  rows.push_back(gnn);

  std::stringstream names(baseline_csv);
  std::string name;
  double ref = 0.0;
  while (std::getline(names, name, ',')) {
    if (name.empty()) continue;
    rows.push_back(run_baseline(name, cfg, test, oracle_budget));
    ref = std::max(ref, rows.back().mean_rate);
  }
  if (ref == 0.0) ref = gnn.mean_rate;  // no baselines requested

  std::ostringstream csv;
  csv << "algorithm,mean_sum_rate_bpshz,relative_pct,samples,seed\n";
  for (const EvalRow& r : rows)
    csv << r.algorithm << "," << r.mean_rate << "," << 100.0 * r.mean_rate / ref << "," << r.samples << ","
        << cfg.train.seed << "\n";
  if (out.empty())
    std::cout << csv.str();
  else {
    write_text_file(out, csv.str());
    std::cout << csv.str();
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

template <typename T>
int audit_run(Model<T>& model, const RunConfig& cfg, int trials, uint64_t seed) {
  AuditReport<T> rep = audit_model(model, cfg, trials, seed);
  std::cout << "audit: " << rep.trials << " trials, max equivariance error " << rep.max_equivariance_err << "\n";
  for (const std::string& v : rep.violations) std::cout << "violation: " << v << "\n";
  if (!rep.ok()) {
    std::cout << "AUDIT FAILED\n";
    return 1;
  }
  std::cout << "audit passed\n";
  return 0;
}

int cmd_audit(const std::string& ckpt, const std::string& config_path, int trials, uint64_t seed) {
  if (ckpt.empty() == config_path.empty())
    throw std::invalid_argument("audit needs exactly one of --ckpt or --config");
  if (!ckpt.empty()) {
    RunConfig cfg = checkpoint_config(ckpt);
    if (checkpoint_precision(ckpt) == "f64") {
      Model<double> m = load_checkpoint<double>(ckpt);
      return audit_run(m, cfg, trials, seed);
    }
    Model<float> m = load_checkpoint<float>(ckpt);
    return audit_run(m, cfg, trials, seed);
  }
  RunConfig cfg = load_run_config(config_path);
  if (cfg.train.precision == "f64") {
    Model<double> m(cfg.model);
    m.init_params(seed);
    return audit_run(m, cfg, trials, seed);
  }
  Model<float> m(cfg.model);
  m.init_params(seed);
  return audit_run(m, cfg, trials, seed);
}

int cmd_orbits(const std::string& sig_path, const std::string& json_out) {
  const nlohmann::json j = nlohmann::json::parse(read_text_file(sig_path));
  SetSignature sig;
  for (const auto& js : j.at("sets")) {
    SetDesc d;
    d.size = js.at("size").get<int>();
    if (js.contains("sub_sizes")) d.sub_sizes = js.at("sub_sizes").get<std::vector<int>>();
    sig.sets.push_back(d);
  }
  if (j.contains("joint_groups")) sig.joint_groups = j.at("joint_groups").get<std::vector<std::vector<int>>>();
  AxisSpace out_space, in_space;
  out_space.set_refs = j.at("out_axes").get<std::vector<int>>();
  in_space.set_refs = j.at("in_axes").get<std::vector<int>>();

  OrbitBasis basis = enumerate_orbits(sig, out_space, in_space);
  const bool mask = j.value("mask", false);
  if (mask) basis = adjacency_mask(basis);
  std::cout << "orbits: " << basis.orbit_count() << ", retained after masking: " << basis.retained_count() << "\n";
  for (const OrbitDesc& o : basis.orbits())
    std::cout << "  orbit " << o.id << " size " << o.count << (o.masked ? " [masked]" : "") << "\n";
  if (!json_out.empty()) {
    write_text_file(json_out, basis.to_json());
    std::cout << "wrote " << json_out << "\n";
  }
  if (j.contains("expected")) {
    const auto& e = j.at("expected");
    if (e.contains("orbits") && e.at("orbits").get<int>() != basis.orbit_count()) {
      std::cout << "MISMATCH: expected " << e.at("orbits") << " orbits\n";
      return 1;
    }
    if (e.contains("retained") && e.at("retained").get<int>() != basis.retained_count()) {
      std::cout << "MISMATCH: expected " << e.at("retained") << " retained orbits\n";
      return 1;
    }
    std::cout << "expected counts confirmed\n";
  }
  return 0;
}

int cmd_complexity(const std::string& kind, int64_t cl, int64_t cl1, int64_t k, int64_t nt, int64_t ns) {
  ComplexityQuery q{layer_kind_from_name(kind), cl, cl1, k, nt, ns};
  std::cout << "kind " << kind << " C_l " << cl << " C_l+1 " << cl1 << " K " << k << " Nt " << nt << " Ns " << ns
            << "\n";
  std::cout << "flops " << flops(q) << "\n";
  std::cout << "weights " << weight_count(q) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& problem, uint64_t seed) {
  const std::vector<std::string> all = {"p1", "p2", "miso", "hybrid2d", "hybrid1d", "pc", "nested"};
  std::vector<std::string> todo = problem == "all" ? all : std::vector<std::string>{problem};
  bool ok = true;
  for (const std::string& p : todo) {
    const GradcheckResult r = gradcheck_problem(p, seed);
    const bool pass = r.max_rel_err <= 1e-6;
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " " << r.problem << ": max relative gradient error " << r.max_rel_err
              << " over " << r.parameter_count << " parameters\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equinet: permutation-equivariant GNN precoding/power-control experiments"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, data_path, baselines, sig_path, json_out;
  std::string kind = "3d", problem = "all";
  int samples = 0, trials = 100, oracle_budget = 10000;
  uint64_t seed = 0;
  int64_t cl = 1, cl1 = 1, k = 1, nt = 1, ns = 1;

  CLI::App* gen = app.add_subcommand("gen-channels", "generate a channel dataset with a JSON sidecar");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", out_path, "output .wt path")->required();
  gen->add_option("--samples", samples, "sample count (default: train+val+test from config)");

  CLI::App* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  tr->add_option("--config", config_path, "run config JSON")->required();
  tr->add_option("--out", out_path, "checkpoint directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint against baselines, CSV output");
  ev->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
  ev->add_option("--data", data_path, "dataset .wt (default: generate the config's test split)");
  ev->add_option("--baselines", baselines, "comma list: mrt,zf,wmmse,pem,oracle,wmmse_power");
  ev->add_option("--out", out_path, "output CSV path (default: stdout)");
  ev->add_option("--samples", samples, "limit evaluated samples");
  ev->add_option("--oracle-budget", oracle_budget, "random candidates for the oracle baseline");

  CLI::App* au = app.add_subcommand("audit", "equivariance and constraint audit");
  au->add_option("--ckpt", ckpt_path, "checkpoint directory");
  au->add_option("--config", config_path, "run config JSON (audits a freshly initialized model)");
  au->add_option("--trials", trials, "number of random trials");
  au->add_option("--seed", seed, "seed for instances and permutations");

  CLI::App* orb = app.add_subcommand("orbits", "enumerate orbit counts for a signature JSON");
  orb->add_option("--signature", sig_path, "signature JSON")->required();
  orb->add_option("--json", json_out, "write the orbit basis as JSON");

  CLI::App* cx = app.add_subcommand("complexity", "layer FLOPs and weight counts");
  cx->add_option("--kind", kind, "1d, 2d or 3d")->required();
  cx->add_option("--cl", cl, "input channels")->required();
  cx->add_option("--cl1", cl1, "output channels")->required();
  cx->add_option("--k", k, "users");
  cx->add_option("--nt", nt, "antennas");
  cx->add_option("--ns", ns, "RF chains");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc->add_option("--problem", problem, "p1, p2, miso, hybrid2d, hybrid1d, pc, nested or all");
  gc->add_option("--seed", seed, "weight/init seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    threads_from_env();
    if (gen->parsed()) return cmd_gen_channels(config_path, out_path, samples);
    if (tr->parsed()) return cmd_train(config_path, out_path);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_path, baselines, out_path, samples, oracle_budget);
    if (au->parsed()) return cmd_audit(ckpt_path, config_path, trials, seed);
    if (orb->parsed()) return cmd_orbits(sig_path, json_out);
    if (cx->parsed()) return cmd_complexity(kind, cl, cl1, k, nt, ns);
    if (gc->parsed()) return cmd_gradcheck(problem, seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
