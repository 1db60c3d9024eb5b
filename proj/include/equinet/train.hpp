#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "equinet/dataset.hpp"
#include "equinet/model.hpp"

namespace equinet {

// Standard Adam with bias correction. Moments are stored per parameter
// tensor in the order of Model::params().
template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<Tensor<T>> m, v;

  void init(const std::vector<Tensor<T>*>& params) {
    m.clear();
    v.clear();
    for (const Tensor<T>* p : params) {
      m.emplace_back(p->dims());
      v.emplace_back(p->dims());
    }
    step = 0;
  }

  void update(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (params.size() != m.size() || grads.size() != m.size())
      throw std::invalid_argument("adam: parameter/moment count mismatch");
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& w = *params[i];
      const Tensor<T>& g = *grads[i];
      Tensor<T>& mi = m[i];
      Tensor<T>& vi = v[i];
      for (int64_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * gj;
        const double vj = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * gj * gj;
        mi[j] = static_cast<T>(mj);
        vi[j] = static_cast<T>(vj);
        w[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
      }
    }
  }
};

struct EpochStat {
  int epoch = 0;
  double train_objective = 0.0;  // mean sum-rate over the epoch's batches
  double val_objective = 0.0;
};

struct TrainOptions {
  int batch = 500;
  double lr = 1e-3;
  int epochs = 100;
  uint64_t seed = 1;
  std::function<void(const EpochStat&)> on_epoch;  // optional progress hook
};

// Mean objective (sum-rate) over a dataset in inference mode.
template <typename T>
double evaluate_mean_objective(Model<T>& model, const Dataset<T>& data, int chunk = 512) {
  double acc = 0;
  for (int64_t start = 0; start < data.n; start += chunk) {
    const int64_t count = std::min<int64_t>(chunk, data.n - start);
    Dataset<T> part = data.slice(start, count);
    Tape<T> tape;
    ForwardResult<T> r = model.forward(tape, part, false);
    const Tensor<T>& obj = tape.val(r.objective);
    for (int64_t i = 0; i < obj.size(); ++i) acc += static_cast<double>(obj[i]);
  }
  return acc / static_cast<double>(data.n);
}

template <typename T>
std::vector<double> per_sample_objective(Model<T>& model, const Dataset<T>& data, int chunk = 512) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(data.n));
  for (int64_t start = 0; start < data.n; start += chunk) {
    const int64_t count = std::min<int64_t>(chunk, data.n - start);
    Dataset<T> part = data.slice(start, count);
    Tape<T> tape;
    ForwardResult<T> r = model.forward(tape, part, false);
    const Tensor<T>& obj = tape.val(r.objective);
    for (int64_t i = 0; i < obj.size(); ++i) out.push_back(static_cast<double>(obj[i]));
  }
  return out;
}

// Minimizes the mean negative objective over shuffled mini-batches.
// Deterministic given the seed. Throws on a non-finite loss, naming the
// offending batch.
template <typename T>
std::vector<EpochStat> train_model(Model<T>& model, const Dataset<T>& train_data, const Dataset<T>& val_data,
                                   const TrainOptions& opt) {
  AdamState<T> adam;
  adam.lr = opt.lr;
  std::vector<Tensor<T>*> params = model.params();
  adam.init(params);
  std::mt19937_64 shuffle_rng(opt.seed + 0x5a11ULL);
  std::vector<int64_t> order(static_cast<size_t>(train_data.n));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::vector<EpochStat> history;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_obj = 0;
    int64_t seen = 0;
    int batch_index = 0;
    for (int64_t start = 0; start < train_data.n; start += opt.batch, ++batch_index) {
      const int64_t count = std::min<int64_t>(opt.batch, train_data.n - start);
      Dataset<T> batch = train_data.gather(std::span<const int64_t>(order.data() + start, static_cast<size_t>(count)));
      Tape<T> tape;
      ForwardResult<T> r = model.forward(tape, batch, true);
      const double loss = static_cast<double>(tape.val(r.loss)[0]);
      if (!std::isfinite(loss))
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_index));
      epoch_obj += -loss * static_cast<double>(count);
      seen += count;
      tape.backward(r.loss);
      const std::vector<typename Tape<T>::VarId>& ids = model.last_param_ids();
      std::vector<const Tensor<T>*> grads;
      grads.reserve(ids.size());
      for (auto id : ids) grads.push_back(&tape.grad(id));
      adam.update(params, grads);
    }
    EpochStat st;
    st.epoch = epoch;
    st.train_objective = epoch_obj / static_cast<double>(seen);
    st.val_objective = val_data.n > 0 ? evaluate_mean_objective(model, val_data) : 0.0;
    history.push_back(st);
    if (opt.on_epoch) opt.on_epoch(st);
  }
  return history;
}

}  // namespace equinet
