#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "equinet/config.hpp"
#include "equinet/container.hpp"
#include "equinet/model.hpp"

namespace equinet {

// A checkpoint is a directory: manifest.json plus one WT1 file per
// parameter tensor and per batch-norm statistic.
template <typename T>
void save_checkpoint(const std::string& dir, Model<T>& model, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json man;
  man["version"] = 1;
  man["precision"] = sizeof(T) == 4 ? "f32" : "f64";
  man["config"] = nlohmann::json::parse(run_config_to_json(cfg));
  man["update_weight_count"] = model.update_weight_count();
  nlohmann::json orbit_ids = nlohmann::json::array();
  for (const OrbitDesc& o : model.update_basis().orbits())
    orbit_ids.push_back({{"id", o.id}, {"masked", o.masked}, {"size", o.count}});
  man["update_orbits"] = orbit_ids;

  const std::vector<Tensor<T>*> params = model.params();
  nlohmann::json files = nlohmann::json::array();
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string name = "param_" + std::to_string(i) + ".wt";
    write_wt1((fs::path(dir) / name).string(), *params[i]);
    files.push_back(name);
  }
  man["params"] = files;

  nlohmann::json bn = nlohmann::json::array();
  for (int li = 0; li < model.transition_count(); ++li) {
    const BnState<T>& st = model.bn_state(li);
    nlohmann::json e;
    e["initialized"] = st.initialized;
    e["mean"] = st.mean;
    e["var"] = st.var;
    bn.push_back(std::move(e));
  }
  man["batchnorm"] = bn;
  write_text_file((fs::path(dir) / "manifest.json").string(), man.dump(2));
}

inline RunConfig checkpoint_config(const std::string& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json man = nlohmann::json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  return parse_run_config_text(man.at("config").dump());
}

inline std::string checkpoint_precision(const std::string& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json man = nlohmann::json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  return man.at("precision").get<std::string>();
}

template <typename T>
Model<T> load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const nlohmann::json man = nlohmann::json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  const RunConfig cfg = parse_run_config_text(man.at("config").dump());
  Model<T> model(cfg.model);
  const std::vector<Tensor<T>*> params = model.params();
  const auto files = man.at("params");
  if (files.size() != params.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string path = (fs::path(dir) / files.at(i).get<std::string>()).string();
    const Tensor<double> t = read_wt1_as_f64(path);
    if (t.dims() != params[i]->dims()) throw std::runtime_error("checkpoint parameter shape mismatch");
    *params[i] = t.cast<T>();
  }
  const auto bn = man.at("batchnorm");
  for (int li = 0; li < model.transition_count(); ++li) {
    BnState<T>& st = model.bn_state(li);
    const auto& e = bn.at(static_cast<size_t>(li));
    st.initialized = e.at("initialized").get<bool>();
    const std::vector<double> mean = e.at("mean").get<std::vector<double>>();
    const std::vector<double> var = e.at("var").get<std::vector<double>>();
    st.mean.assign(mean.begin(), mean.end());
    st.var.assign(var.begin(), var.end());
  }
  return model;
}

}  // namespace equinet
