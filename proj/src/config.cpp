#include "equinet/config.hpp"

#include <json.hpp>

#include "equinet/container.hpp"

namespace equinet {

using nlohmann::json;

namespace {

uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
T require(const json& j, const std::string& field) {
  if (!j.contains(field)) throw std::invalid_argument("config is missing field '" + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config field '" + field + "' has the wrong type");
  }
}

template <typename T>
T optional(const json& j, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config field '" + field + "' has the wrong type");
  }
}

std::string expected_channel_kind(Head h) {
  switch (h) {
    case Head::Wideband4D: return "wideband";
    case Head::PcJoint2D: return "pc";
    default: return "";  // rayleigh or sv both fine
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (channel.kind != "rayleigh" && channel.kind != "sv" && channel.kind != "wideband" && channel.kind != "pc")
    throw std::invalid_argument("config field 'channel_model.kind' must be rayleigh, sv, wideband or pc");
  const std::string want = expected_channel_kind(model.head);
  if (!want.empty() && channel.kind != want)
    throw std::invalid_argument("head " + head_name(model.head) + " requires channel_model.kind '" + want + "'");
  if (model.head != Head::Wideband4D && model.head != Head::PcJoint2D &&
      (channel.kind == "wideband" || channel.kind == "pc"))
    throw std::invalid_argument("channel_model.kind '" + channel.kind + "' does not fit head " + head_name(model.head));
  if (train.batch < 1) throw std::invalid_argument("config field 'train.batch' must be >= 1");
  if (train.lr < 0) throw std::invalid_argument("config field 'train.lr' must be >= 0");
  if (train.epochs < 0) throw std::invalid_argument("config field 'train.epochs' must be >= 0");
  if (train.train_samples < 1) throw std::invalid_argument("config field 'train.train_samples' must be >= 1");
  if (train.precision != "f32" && train.precision != "f64")
    throw std::invalid_argument("config field 'train.precision' must be f32 or f64");
  if (sigma2 <= 0) throw std::invalid_argument("config field 'sigma2' must be positive");
  if (p_max <= 0) throw std::invalid_argument("config field 'p_max' must be positive");
}

RunConfig parse_run_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.version = optional<int>(j, "version", 1);
  cfg.model.head = head_from_name(require<std::string>(j, "problem"));

  const json ext = require<json>(j, "extents");
  cfg.model.k = optional<int>(ext, "k", 0);
  cfg.model.nt = optional<int>(ext, "nt", 0);
  cfg.model.ns = optional<int>(ext, "ns", 0);
  cfg.model.m = optional<int>(ext, "m", 1);
  cfg.model.nested_groups = optional<std::vector<int>>(ext, "nested", {});

  const json m = require<json>(j, "model");
  const std::vector<int> hidden = require<std::vector<int>>(m, "hidden_channels");
  cfg.model.channels.clear();
  cfg.model.channels.push_back(cfg.model.required_c1());
  for (int c : hidden) cfg.model.channels.push_back(c);
  if (cfg.model.required_cl() > 0) cfg.model.channels.push_back(cfg.model.required_cl());
  const std::string norm = optional<std::string>(m, "norm", "batch");
  if (norm == "batch")
    cfg.model.norm = Norm::Batch;
  else if (norm == "none")
    cfg.model.norm = Norm::None;
  else
    throw std::invalid_argument("config field 'model.norm' must be batch or none");
  cfg.model.virtual_feature = optional<std::vector<double>>(m, "virtual_feature", {});

  const json ch = optional<json>(j, "channel_model", json::object());
  cfg.channel.kind = optional<std::string>(ch, "kind", cfg.model.head == Head::PcJoint2D ? "pc"
                                                       : cfg.model.head == Head::Wideband4D ? "wideband"
                                                                                            : "rayleigh");
  cfg.channel.sv.n_cl = optional<int>(ch, "n_cl", 4);
  cfg.channel.sv.n_ray = optional<int>(ch, "n_ray", 5);
  cfg.channel.sv.angular_spread_deg = optional<double>(ch, "spread_deg", 10.0);
  cfg.channel.sv.d_over_lambda = optional<double>(ch, "d_over_lambda", 0.5);
  cfg.channel.wb.m = cfg.model.m;
  cfg.channel.wb.taps = optional<int>(ch, "taps", 3);
  cfg.channel.wb.rolloff = optional<double>(ch, "rolloff", 0.3);

  cfg.snr_db = optional<double>(j, "snr_db", 10.0);
  cfg.sigma2 = optional<double>(j, "sigma2", 1.0);
  cfg.p_max = optional<double>(j, "p_max", 1.0);
  cfg.data_path = optional<std::string>(j, "data", "");

  const json t = optional<json>(j, "train", json::object());
  cfg.train.batch = optional<int>(t, "batch", 500);
  cfg.train.lr = optional<double>(t, "lr", 1e-3);
  cfg.train.epochs = optional<int>(t, "epochs", 100);
  cfg.train.seed = optional<uint64_t>(t, "seed", 1);
  cfg.train.train_samples = optional<int>(t, "train_samples", 10000);
  cfg.train.val_samples = optional<int>(t, "val_samples", 1000);
  cfg.train.test_samples = optional<int>(t, "test_samples", 2000);
  cfg.train.precision = optional<std::string>(t, "precision", "f32");

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config_text(read_text_file(path)); }

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["problem"] = head_name(cfg.model.head);
  j["extents"] = {{"k", cfg.model.k}, {"nt", cfg.model.nt}, {"ns", cfg.model.ns}, {"m", cfg.model.m}};
  if (!cfg.model.nested_groups.empty()) j["extents"]["nested"] = cfg.model.nested_groups;
  std::vector<int> hidden = cfg.model.channels;
  hidden.erase(hidden.begin());
  if (cfg.model.required_cl() > 0) hidden.pop_back();
  j["model"] = {{"hidden_channels", hidden}, {"norm", cfg.model.norm == Norm::Batch ? "batch" : "none"}};
  if (!cfg.model.virtual_feature.empty()) j["model"]["virtual_feature"] = cfg.model.virtual_feature;
  j["channel_model"] = {{"kind", cfg.channel.kind},
                        {"n_cl", cfg.channel.sv.n_cl},
                        {"n_ray", cfg.channel.sv.n_ray},
                        {"spread_deg", cfg.channel.sv.angular_spread_deg},
                        {"d_over_lambda", cfg.channel.sv.d_over_lambda},
                        {"taps", cfg.channel.wb.taps},
                        {"rolloff", cfg.channel.wb.rolloff}};
  j["snr_db"] = cfg.snr_db;
  j["sigma2"] = cfg.sigma2;
  j["p_max"] = cfg.p_max;
  j["train"] = {{"batch", cfg.train.batch},
                {"lr", cfg.train.lr},
                {"epochs", cfg.train.epochs},
                {"seed", cfg.train.seed},
                {"train_samples", cfg.train.train_samples},
                {"val_samples", cfg.train.val_samples},
                {"test_samples", cfg.train.test_samples},
                {"precision", cfg.train.precision}};
  if (!cfg.data_path.empty()) j["data"] = cfg.data_path;
  return j.dump(2);
}

Dataset<double> generate_split(const RunConfig& cfg, Split split, int count) {
  Dataset<double> d;
  d.n = count;
  const uint64_t base = mix64(cfg.train.seed, 0x100 + static_cast<uint64_t>(split));
  const int K = cfg.model.k, Nt = cfg.model.nt, M = cfg.model.m;
  if (cfg.channel.kind == "pc") {
    Tensor<double> g({count, K, K});
    for (int i = 0; i < count; ++i) {
      const std::vector<double> gi = gen_pc_gains(K, mix64(base, static_cast<uint64_t>(i)));
      for (int64_t j = 0; j < int64_t(K) * K; ++j) g[int64_t(i) * K * K + j] = gi[static_cast<size_t>(j)];
    }
    d.fields["gain"] = std::move(g);
    d.fields["pmax"] = Tensor<double>::full({count}, cfg.p_max);
    d.fields["sigma2"] = Tensor<double>::full({count}, cfg.sigma2);
    return d;
  }
  if (cfg.channel.kind == "wideband") {
    Tensor<double> hre({count, M, K, Nt}), him({count, M, K, Nt});
    for (int i = 0; i < count; ++i) {
      const std::vector<CxMat> h = gen_wideband(K, Nt, cfg.channel.sv, cfg.channel.wb, mix64(base, static_cast<uint64_t>(i)));
      for (int mi = 0; mi < M; ++mi)
        for (int64_t j = 0; j < int64_t(K) * Nt; ++j) {
          hre[((int64_t(i) * M + mi) * K * Nt) + j] = h[static_cast<size_t>(mi)].a[static_cast<size_t>(j)].real();
          him[((int64_t(i) * M + mi) * K * Nt) + j] = h[static_cast<size_t>(mi)].a[static_cast<size_t>(j)].imag();
        }
    }
    d.fields["h_re"] = std::move(hre);
    d.fields["h_im"] = std::move(him);
  } else {
    Tensor<double> hre({count, K, Nt}), him({count, K, Nt});
    for (int i = 0; i < count; ++i) {
      const uint64_t s = mix64(base, static_cast<uint64_t>(i));
      const CxMat h = cfg.channel.kind == "sv" ? gen_sv_narrowband(K, Nt, cfg.channel.sv, s) : gen_rayleigh_iid(K, Nt, s);
      for (int64_t j = 0; j < int64_t(K) * Nt; ++j) {
        hre[int64_t(i) * K * Nt + j] = h.a[static_cast<size_t>(j)].real();
        him[int64_t(i) * K * Nt + j] = h.a[static_cast<size_t>(j)].imag();
      }
    }
    d.fields["h_re"] = std::move(hre);
    d.fields["h_im"] = std::move(him);
  }
  d.fields["beta"] = Tensor<double>::full({count, K}, 1.0);
  d.fields["ptot"] = Tensor<double>::full({count}, cfg.p_tot());
  d.fields["sigma2"] = Tensor<double>::full({count}, cfg.sigma2);
  return d;
}

void save_dataset(const std::string& path, const Dataset<double>& data, const RunConfig& cfg) {
  json side;
  side["version"] = 1;
  side["problem"] = head_name(cfg.model.head);
  side["config"] = json::parse(run_config_to_json(cfg));
  side["samples"] = data.n;
  if (cfg.channel.kind == "pc") {
    write_wt1(path, data.field("gain"));
    side["complex"] = false;
    side["field"] = "gain";
  } else {
    const Tensor<double>& re = data.field("h_re");
    const Tensor<double>& im = data.field("h_im");
    std::vector<int> dims = re.dims();
    dims.push_back(2);
    Tensor<double> packed(dims);
    for (int64_t i = 0; i < re.size(); ++i) {
      packed[2 * i] = re[i];
      packed[2 * i + 1] = im[i];
    }
    write_wt1(path, packed);
    side["complex"] = true;
    side["field"] = "h";
  }
  write_text_file(path + ".json", side.dump(2));
}

Dataset<double> load_dataset(const std::string& path) {
  const json side = json::parse(read_text_file(path + ".json"));
  RunConfig cfg = parse_run_config_text(side.at("config").dump());
  Tensor<double> t = read_wt1_as_f64(path);
  Dataset<double> d;
  d.n = t.extent(0);
  const int count = t.extent(0);
  if (!side.at("complex").get<bool>()) {
    d.fields["gain"] = std::move(t);
    d.fields["pmax"] = Tensor<double>::full({count}, cfg.p_max);
    d.fields["sigma2"] = Tensor<double>::full({count}, cfg.sigma2);
    return d;
  }
  std::vector<int> dims = t.dims();
  if (dims.back() != 2) throw std::runtime_error("complex dataset tensor must end in an extent-2 axis");
  dims.pop_back();
  Tensor<double> re(dims), im(dims);
  for (int64_t i = 0; i < re.size(); ++i) {
    re[i] = t[2 * i];
    im[i] = t[2 * i + 1];
  }
  d.fields["h_re"] = std::move(re);
  d.fields["h_im"] = std::move(im);
  d.fields["beta"] = Tensor<double>::full({count, cfg.model.k}, 1.0);
  d.fields["ptot"] = Tensor<double>::full({count}, cfg.p_tot());
  d.fields["sigma2"] = Tensor<double>::full({count}, cfg.sigma2);
  return d;
}

}  // namespace equinet
