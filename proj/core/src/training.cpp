#include "jamlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "jamlab/errors.hpp"
#include "jamlab/ops.hpp"

namespace jamlab {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr_max > 0.0) || lr_min < 0.0 || lr_min > lr_max) {
    throw ConfigError("train: need 0 <= lr_min <= lr_max and lr_max > 0");
  }
  double total = 0.0;
  for (double r : split) {
    if (r < 0.0) throw ConfigError("train.split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("train.split ratios must sum to 1");
  if (monte_carlo_runs == 0) throw ConfigError("train.monte_carlo_runs must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},       {"batch_size", c.batch_size},
                     {"lr_max", c.lr_max},       {"lr_min", c.lr_min},
                     {"split", c.split},         {"master_seed", c.master_seed},
                     {"monte_carlo_runs", c.monte_carlo_runs}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "epochs") {
        c.epochs = v.get<std::size_t>();
      } else if (k == "batch_size") {
        c.batch_size = v.get<std::size_t>();
      } else if (k == "lr_max") {
        c.lr_max = v.get<double>();
      } else if (k == "lr_min") {
        c.lr_min = v.get<double>();
      } else if (k == "split") {
        c.split = v.get<std::array<double, 3>>();
      } else if (k == "master_seed") {
        c.master_seed = v.get<std::uint64_t>();
      } else if (k == "monte_carlo_runs") {
        c.monte_carlo_runs = v.get<std::size_t>();
      } else {
        throw ConfigError("unknown train key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

void FeatureDataset::append(std::span<const float> tfi_pixels, std::span<const float> psd_pixels, std::size_t label,
                            double jnr) {
  if (tfi_pixels.size() != side * side || psd_pixels.size() != side * side) {
    throw std::invalid_argument("FeatureDataset: image size does not match side " + std::to_string(side));
  }
  tfi.insert(tfi.end(), tfi_pixels.begin(), tfi_pixels.end());
  psd.insert(psd.end(), psd_pixels.begin(), psd_pixels.end());
  labels.push_back(label);
  jnr_db.push_back(jnr);
}

template <typename T>
Batch<T> make_batch(const FeatureDataset& data, std::span<const std::size_t> indices) {
  const std::size_t px = data.side * data.side;
  std::vector<T> tfi(indices.size() * px);
  std::vector<T> psd(indices.size() * px);
  Batch<T> b;
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t s = indices[i];
    if (s >= data.size()) throw std::out_of_range("make_batch: sample index " + std::to_string(s) + " out of range");
    std::copy_n(data.tfi.begin() + static_cast<std::ptrdiff_t>(s * px), px, tfi.begin() + static_cast<std::ptrdiff_t>(i * px));
    std::copy_n(data.psd.begin() + static_cast<std::ptrdiff_t>(s * px), px, psd.begin() + static_cast<std::ptrdiff_t>(i * px));
    b.labels.push_back(data.labels[s]);
  }
  const nn::Shape shape{indices.size(), 1, data.side, data.side};
  b.tfi = nn::Tensor<T>(shape, std::move(tfi));
  b.psd = nn::Tensor<T>(shape, std::move(psd));
  return b;
}

void shuffle_indices(std::vector<std::size_t>& v, RandomStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

namespace {

void slice_into(const std::vector<std::size_t>& members, const std::array<double, 3>& ratios, SplitIndices& out) {
  const std::size_t n = members.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
  const std::size_t a = std::min(n, n_train);
  out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(a));
  out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(a),
                 members.begin() + static_cast<std::ptrdiff_t>(a + n_val));
  out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(a + n_val), members.end());
}

}  // namespace

SplitIndices split_dataset(std::span<const StratumKey> keys, const std::array<double, 3>& ratios, std::uint64_t seed,
                           std::vector<std::string>* warnings) {
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw std::invalid_argument("split_dataset: negative ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split_dataset: ratios must sum to 1");

  // JNR levels are keyed at 1e-6 dB resolution so float noise cannot split a stratum.
  std::map<std::pair<std::size_t, long long>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    strata[{keys[i].class_label, std::llround(keys[i].jnr_db * 1e6)}].push_back(i);
  }
  SplitIndices out;
  std::vector<std::size_t> pool;
  for (auto& [key, members] : strata) {
    RandomStream rng(stable_hash({seed, key.first, static_cast<std::uint64_t>(key.second)}));
    shuffle_indices(members, rng);
    if (members.size() < 10) {
      if (warnings != nullptr) {
        warnings->push_back("stratum (class " + std::to_string(key.first) + ", JNR " +
                            std::to_string(static_cast<double>(key.second) * 1e-6) + " dB) has only " +
                            std::to_string(members.size()) + " samples; split proportionally from a shared pool");
      }
      pool.insert(pool.end(), members.begin(), members.end());
      continue;
    }
    slice_into(members, ratios, out);
  }
  if (!pool.empty()) {
    RandomStream rng(stable_hash({seed, 0xfa11bacull}));
    shuffle_indices(pool, rng);
    slice_into(pool, ratios, out);
  }
  return out;
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr_max, double lr_min) {
  if (total_epochs == 0 || epoch > total_epochs) {
    throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(total_epochs) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

namespace nn {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels, T eps) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size() || labels.empty()) {
    throw std::invalid_argument("cross_entropy: probs " + shape_str(probs.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = probs.dim(0);
  const std::size_t k = probs.dim(1);
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    loss -= std::log(probs[i * k + labels[i]] + eps);
  }
  loss /= static_cast<T>(b);
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return make_result<T>(Shape{}, {loss}, {probs}, "cross_entropy", [y = std::move(y), b, k, eps](Node<T>& node) {
    auto gp = node.inputs[0]->grad_buffer();
    const auto& p = node.inputs[0]->data;
    const T scale = node.grad[0] / static_cast<T>(b);
    for (std::size_t i = 0; i < b; ++i) gp[i * k + y[i]] -= scale / (p[i * k + y[i]] + eps);
  });
}

template <typename T>
void adam_step(std::span<const NamedTensor<T>> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T{0});
      state.v.emplace_back(p.tensor.numel(), T{0});
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.numel()) {
      throw std::invalid_argument("adam_step: shape of '" + params[i].name + "' changed");
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, t));
  const T lr = static_cast<T>(state.lr);
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].tensor;
    if (!p.requires_grad()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = p.has_grad();
    const auto g = p.grad();
    auto w = p.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T gj = has ? g[j] : T{0};
      m[j] = b1 * m[j] + (T{1} - b1) * gj;
      v[j] = b2 * v[j] + (T{1} - b2) * gj * gj;
      const T m_hat = m[j] / c1;
      const T v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    p.zero_grad();
  }
}

}  // namespace nn

template <typename T>
EpochStats train_epoch(nn::Skanet<T>& model, const FeatureDataset& data, std::span<const std::size_t> indices,
                       nn::AdamState<T>& adam, std::size_t batch_size, RandomStream& rng,
                       const std::function<void(double)>& on_batch) {
  if (indices.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("train_epoch: batch_size must be positive");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  shuffle_indices(order, rng);
  const auto params = model.parameters();

  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    batches.emplace_back(start, std::min(order.size(), start + batch_size));
  }
  if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
    batches[batches.size() - 2].second = batches.back().second;
    batches.pop_back();
  }

  EpochStats stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& [lo, hi] : batches) {
    const auto batch = make_batch<T>(data, std::span(order).subspan(lo, hi - lo));
    const auto probs = model.forward(batch.tfi, batch.psd, nn::Mode::Train, &rng);
    const auto loss = nn::cross_entropy(probs, std::span<const std::size_t>(batch.labels));
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw NumericError("non-finite training loss at batch starting " + std::to_string(lo));
    }
    nn::backward(loss);
    nn::adam_step<T>(params, adam);
    if (on_batch) on_batch(value);
    const std::size_t k = probs.dim(1);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      const auto row = probs.values().subspan(i * k, k);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (pred == batch.labels[i]) ++correct;
    }
    loss_sum += value * static_cast<double>(hi - lo);
    stats.samples += hi - lo;
  }
  stats.loss = loss_sum / static_cast<double>(stats.samples);
  stats.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(stats.samples);
  return stats;
}

template <typename T>
EvalOutput evaluate(nn::Skanet<T>& model, const FeatureDataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  nn::NoGradGuard no_grad;
  EvalOutput out;
  out.predictions.reserve(indices.size());
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < indices.size(); lo += batch_size) {
    const std::size_t hi = std::min(indices.size(), lo + batch_size);
    const auto batch = make_batch<T>(data, indices.subspan(lo, hi - lo));
    const auto probs = model.forward(batch.tfi, batch.psd, nn::Mode::Eval);
    const auto loss = nn::cross_entropy(probs, std::span<const std::size_t>(batch.labels));
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(hi - lo);
    const std::size_t k = probs.dim(1);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      const auto row = probs.values().subspan(i * k, k);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      out.predictions.push_back(pred);
      if (pred == batch.labels[i]) ++correct;
    }
  }
  out.loss = loss_sum / static_cast<double>(indices.size());
  out.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(indices.size());
  return out;
}

std::string epoch_log_header() { return "epoch,lr,train_loss,val_loss,val_oa"; }

std::string format_epoch_log(const EpochLogLine& line) {
  std::ostringstream os;
  os.precision(8);
  os << line.epoch << ',' << line.lr << ',' << line.train_loss << ',' << line.val_loss << ',' << line.val_accuracy;
  return os.str();
}

template <typename T>
std::vector<EpochLogLine> fit(nn::Skanet<T>& model, const FeatureDataset& data, const SplitIndices& split,
                              const TrainConfig& cfg, std::uint64_t run_seed, std::ostream* log) {
  cfg.validate();
  if (split.train.empty() && cfg.epochs > 0) throw std::invalid_argument("fit: empty training split");
  nn::AdamState<T> adam;
  RandomStream rng(stable_hash({run_seed, 0x7261696eull}));
  std::vector<EpochLogLine> lines;
  if (log != nullptr) *log << epoch_log_header() << '\n';
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    EpochLogLine line;
    line.epoch = e + 1;
    line.lr = cosine_lr(e, cfg.epochs, cfg.lr_max, cfg.lr_min);
    adam.lr = line.lr;
    line.train_loss = train_epoch(model, data, split.train, adam, cfg.batch_size, rng).loss;
    if (!split.val.empty()) {
      const auto v = evaluate(model, data, split.val, cfg.batch_size);
      line.val_loss = v.loss;
      line.val_accuracy = v.accuracy;
    }
    if (log != nullptr) *log << format_epoch_log(line) << std::endl;
    lines.push_back(line);
  }
  return lines;
}

#define JAMLAB_INSTANTIATE_TRAINING(T)                                                                         \
  template Batch<T> make_batch(const FeatureDataset&, std::span<const std::size_t>);                          \
  template nn::Tensor<T> nn::cross_entropy(const nn::Tensor<T>&, std::span<const std::size_t>, T);            \
  template void nn::adam_step(std::span<const nn::NamedTensor<T>>, nn::AdamState<T>&);                        \
  template EpochStats train_epoch(nn::Skanet<T>&, const FeatureDataset&, std::span<const std::size_t>,        \
                                  nn::AdamState<T>&, std::size_t, RandomStream&,                              \
                                  const std::function<void(double)>&);                                        \
  template EvalOutput evaluate(nn::Skanet<T>&, const FeatureDataset&, std::span<const std::size_t>,           \
                               std::size_t);                                                                  \
  template std::vector<EpochLogLine> fit(nn::Skanet<T>&, const FeatureDataset&, const SplitIndices&,          \
                                         const TrainConfig&, std::uint64_t, std::ostream*);

JAMLAB_INSTANTIATE_TRAINING(float)
JAMLAB_INSTANTIATE_TRAINING(double)

#undef JAMLAB_INSTANTIATE_TRAINING

}  // namespace jamlab
