#pragma once

#include <cmath>
#include <string>

#include "equinet/channels.hpp"
#include "equinet/dataset.hpp"
#include "equinet/model.hpp"

namespace equinet {

struct ChannelConfig {
  std::string kind = "rayleigh";  // rayleigh | sv | wideband | pc
  SVParams sv;
  WidebandParams wb;
};

struct TrainConfig {
  int batch = 500;
  double lr = 1e-3;
  int epochs = 100;
  uint64_t seed = 1;
  int train_samples = 10000;
  int val_samples = 1000;
  int test_samples = 2000;
  std::string precision = "f32";  // f32 | f64
};

struct RunConfig {
  int version = 1;
  ModelSpec model;
  ChannelConfig channel;
  TrainConfig train;
  double snr_db = 10.0;
  double sigma2 = 1.0;
  double p_max = 1.0;
  std::string data_path;  // optional pre-generated dataset

  double p_tot() const { return sigma2 * std::pow(10.0, snr_db / 10.0); }
  void validate() const;
};

RunConfig parse_run_config_text(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

enum class Split { Train = 0, Val = 1, Test = 2 };

// Deterministic per (config seed, split, sample index).
Dataset<double> generate_split(const RunConfig& cfg, Split split, int count);

// Dataset container: one WT1 tensor (channel data; complex data carries a
// trailing extent-2 axis) plus a JSON sidecar at <path>.json describing the
// generator and the scalar problem fields.
void save_dataset(const std::string& path, const Dataset<double>& data, const RunConfig& cfg);
Dataset<double> load_dataset(const std::string& path);

}  // namespace equinet
