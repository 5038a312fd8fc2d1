#include "jamlab/skanet.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "jamlab/errors.hpp"

namespace jamlab::nn {

namespace {

constexpr std::string_view kAblationNames[] = {"full", "no_sk_acb", "no_psd_stream", "no_se_fusion"};

std::string idx(std::string_view base, std::size_t i) { return std::string(base) + std::to_string(i + 1); }

template <typename T>
void push_bn(std::vector<NamedTensor<T>>& out, const std::string& prefix, const BatchNorm<T>& bn) {
  out.push_back({prefix + ".gamma", bn.gamma});
  out.push_back({prefix + ".beta", bn.beta});
}

template <typename T>
void push_bn_buffers(std::vector<NamedTensor<T>>& out, const std::string& prefix, const BatchNorm<T>& bn) {
  out.push_back({prefix + ".running_mean", bn.running_mean});
  out.push_back({prefix + ".running_var", bn.running_var});
  out.push_back({prefix + ".batches_tracked", bn.batches_tracked});
}

template <typename T>
void push_linear(std::vector<NamedTensor<T>>& out, const std::string& prefix, const LinearParams<T>& p) {
  out.push_back({prefix + ".weight", p.weight});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias});
}

template <typename T>
void push_acb(std::vector<NamedTensor<T>>& out, const std::string& prefix, const AcbLayer<T>& layer) {
  if (layer.is_fused()) {
    out.push_back({prefix + ".fused.kernel", layer.fused->kernel});
    out.push_back({prefix + ".fused.bias", layer.fused->bias});
    return;
  }
  out.push_back({prefix + ".k3x3", layer.params.k3x3});
  out.push_back({prefix + ".k1x3", layer.params.k1x3});
  out.push_back({prefix + ".k3x1", layer.params.k3x1});
  push_bn(out, prefix + ".bn3x3", layer.params.bn3x3);
  push_bn(out, prefix + ".bn1x3", layer.params.bn1x3);
  push_bn(out, prefix + ".bn3x1", layer.params.bn3x1);
}

template <typename T>
void push_acb_buffers(std::vector<NamedTensor<T>>& out, const std::string& prefix, const AcbLayer<T>& layer) {
  if (layer.is_fused()) return;
  push_bn_buffers(out, prefix + ".bn3x3", layer.params.bn3x3);
  push_bn_buffers(out, prefix + ".bn1x3", layer.params.bn1x3);
  push_bn_buffers(out, prefix + ".bn3x1", layer.params.bn3x1);
}

template <typename T>
void push_stream(std::vector<NamedTensor<T>>& out, const std::string& prefix, const Stream<T>& s, bool buffers) {
  auto conv_bn = [&](const std::string& p, const ConvBn<T>& c) {
    if (buffers) {
      push_bn_buffers(out, p + ".bn", c.bn);
    } else {
      out.push_back({p + ".kernel", c.kernel});
      push_bn(out, p + ".bn", c.bn);
    }
  };
  conv_bn(prefix + ".stem", s.stem);
  for (std::size_t si = 0; si < s.stages.size(); ++si) {
    const Stage<T>& st = s.stages[si];
    const std::string sp = prefix + "." + idx("stage", si);
    for (std::size_t b = 0; b < st.sk_blocks.size(); ++b) {
      const SkAcbBlock<T>& blk = st.sk_blocks[b];
      const std::string bp = sp + "." + idx("block", b);
      for (std::size_t m = 0; m < blk.branches.size(); ++m) {
        if (buffers) {
          push_acb_buffers(out, bp + "." + idx("branch", m), blk.branches[m]);
        } else {
          push_acb(out, bp + "." + idx("branch", m), blk.branches[m]);
        }
      }
      if (!buffers) {
        out.push_back({bp + ".reduce.weight", blk.reduce_weight});
        out.push_back({bp + ".reduce.bias", blk.reduce_bias});
        for (std::size_t m = 0; m < blk.attention.size(); ++m) {
          out.push_back({bp + ".attention." + std::string(1, static_cast<char>('a' + m)), blk.attention[m]});
        }
      }
    }
    for (std::size_t b = 0; b < st.acb_blocks.size(); ++b) {
      const std::string bp = sp + "." + idx("block", b) + ".acb";
      if (buffers) {
        push_acb_buffers(out, bp, st.acb_blocks[b]);
      } else {
        push_acb(out, bp, st.acb_blocks[b]);
      }
    }
    if (st.downsample) conv_bn(sp + ".downsample", *st.downsample);
  }
}

template <typename T>
void check_image_batch(const Tensor<T>& x, std::size_t side, const char* what) {
  if (!x.defined() || x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != side || x.dim(3) != side) {
    throw std::invalid_argument(std::string(what) + ": expected [B, 1, " + std::to_string(side) + ", " +
                                std::to_string(side) + "], got " +
                                (x.defined() ? shape_str(x.shape()) : std::string("<undefined>")));
  }
}

std::size_t scaled(std::size_t c, std::size_t divisor) { return std::max<std::size_t>(1, c / divisor); }

}  // namespace

std::string_view ablation_name(Ablation a) { return kAblationNames[static_cast<std::size_t>(a)]; }

Ablation parse_ablation(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kAblationNames); ++i) {
    if (kAblationNames[i] == name) return static_cast<Ablation>(i);
  }
  throw ConfigError("unknown ablation '" + std::string(name) +
                    "' (expected full, no_sk_acb, no_psd_stream or no_se_fusion)");
}

const std::vector<Ablation>& all_ablations() {
  static const std::vector<Ablation> v{Ablation::Full, Ablation::NoSkAcb, Ablation::NoPsdStream,
                                       Ablation::NoSeFusion};
  return v;
}

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() { return width_scaled(4, 64); }

ModelConfig ModelConfig::width_scaled(std::size_t divisor, std::size_t input_side) {
  if (divisor == 0) throw ConfigError("width divisor must be positive");
  ModelConfig c;
  c.input_side = input_side;
  c.stft_stem_channels = scaled(c.stft_stem_channels, divisor);
  c.psd_stem_channels = scaled(c.psd_stem_channels, divisor);
  for (auto& s : c.stft_stages) s.channels = scaled(s.channels, divisor);
  for (auto& s : c.psd_stages) s.channels = scaled(s.channels, divisor);
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
  if (input_side < 2) fail("input_side must be at least 2");
  if (stft_stem_channels == 0 || psd_stem_channels == 0) fail("stem channels must be positive");
  for (const auto& s : stft_stages) {
    if (s.channels == 0 || s.blocks == 0) fail("stft stages need positive channels and blocks");
  }
  for (const auto& s : psd_stages) {
    if (s.channels == 0 || s.blocks == 0) fail("psd stages need positive channels and blocks");
  }
  if (sk_dilations.size() < 2) fail("sk_dilations needs at least two branches");
  for (auto d : sk_dilations) {
    if (d == 0) fail("sk_dilations entries must be positive");
  }
  if (sk_reduction == 0 || se_reduction == 0) fail("reduction ratios must be positive");
  if (has_se_fusion() && se_hidden() == 0) fail("se_reduction larger than the fused feature width");
  if (head_hidden == 0 || num_classes < 2) fail("head_hidden must be positive and num_classes at least 2");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
}

std::size_t ModelConfig::stft_features() const {
  return stft_stages.empty() ? stft_stem_channels : stft_stages.back().channels;
}

std::size_t ModelConfig::psd_features() const {
  return psd_stages.empty() ? psd_stem_channels : psd_stages.back().channels;
}

std::size_t ModelConfig::head_features() const {
  return stft_features() + (has_psd_stream() ? psd_features() : 0);
}

std::size_t ModelConfig::sk_dim(std::size_t channels) const {
  return std::max(channels / sk_reduction, sk_min_dim);
}

namespace {

nlohmann::json stages_to_json(const std::vector<StageSpec>& stages) {
  auto arr = nlohmann::json::array();
  for (const auto& s : stages) arr.push_back({{"channels", s.channels}, {"blocks", s.blocks}, {"downsample", s.downsample}});
  return arr;
}

std::vector<StageSpec> stages_from_json(const nlohmann::json& j, const char* key) {
  if (!j.is_array()) throw ConfigError(std::string("model.") + key + " must be an array");
  std::vector<StageSpec> out;
  for (const auto& e : j) {
    StageSpec s;
    if (e.is_number_unsigned()) {
      s.channels = e.get<std::size_t>();
    } else if (e.is_object()) {
      for (const auto& [k, v] : e.items()) {
        if (k == "channels") {
          s.channels = v.get<std::size_t>();
        } else if (k == "blocks") {
          s.blocks = v.get<std::size_t>();
        } else if (k == "downsample") {
          s.downsample = v.get<bool>();
        } else {
          throw ConfigError(std::string("model.") + key + ": unknown stage key '" + k + "'");
        }
      }
    } else {
      throw ConfigError(std::string("model.") + key + ": stage must be an integer or an object");
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_side", c.input_side},
                     {"stft_stem_channels", c.stft_stem_channels},
                     {"stft_stages", stages_to_json(c.stft_stages)},
                     {"psd_stem_channels", c.psd_stem_channels},
                     {"psd_stages", stages_to_json(c.psd_stages)},
                     {"sk_dilations", c.sk_dilations},
                     {"sk_reduction", c.sk_reduction},
                     {"sk_min_dim", c.sk_min_dim},
                     {"se_reduction", c.se_reduction},
                     {"head_hidden", c.head_hidden},
                     {"num_classes", c.num_classes},
                     {"dropout_p", c.dropout_p},
                     {"ablation", std::string(ablation_name(c.ablation))}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "input_side") {
        c.input_side = v.get<std::size_t>();
      } else if (k == "stft_stem_channels") {
        c.stft_stem_channels = v.get<std::size_t>();
      } else if (k == "stft_stages") {
        c.stft_stages = stages_from_json(v, "stft_stages");
      } else if (k == "psd_stem_channels") {
        c.psd_stem_channels = v.get<std::size_t>();
      } else if (k == "psd_stages") {
        c.psd_stages = stages_from_json(v, "psd_stages");
      } else if (k == "sk_dilations") {
        c.sk_dilations = v.get<std::vector<std::size_t>>();
      } else if (k == "sk_reduction") {
        c.sk_reduction = v.get<std::size_t>();
      } else if (k == "sk_min_dim") {
        c.sk_min_dim = v.get<std::size_t>();
      } else if (k == "se_reduction") {
        c.se_reduction = v.get<std::size_t>();
      } else if (k == "head_hidden") {
        c.head_hidden = v.get<std::size_t>();
      } else if (k == "num_classes") {
        c.num_classes = v.get<std::size_t>();
      } else if (k == "dropout_p") {
        c.dropout_p = v.get<double>();
      } else if (k == "ablation") {
        c.ablation = parse_ablation(v.get<std::string>());
      } else {
        throw ConfigError("unknown model key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

template <typename T>
Tensor<T> kaiming_normal(Shape shape, RandomStream& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(dist(rng));
  Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(uniform(rng, -bound, bound));
  Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
ConvBn<T> ConvBn<T>::create(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                            RandomStream& rng) {
  ConvBn<T> c;
  c.kernel = kaiming_normal<T>({c_out, c_in, k, k}, rng);
  c.bn = BatchNorm<T>(c_out);
  c.opt = Conv2dOptions{stride, k / 2, k / 2, 1};
  return c;
}

template <typename T>
Tensor<T> conv_bn_swish(const Tensor<T>& x, ConvBn<T>& layer, Mode mode) {
  return swish(batch_norm(conv2d(x, layer.kernel, Tensor<T>{}, layer.opt), layer.bn, mode));
}

Conv2dOptions acb_conv_options(std::size_t kh, std::size_t kw, std::size_t stride, std::size_t dilation) {
  return Conv2dOptions{stride, kh == 3 ? dilation : 0, kw == 3 ? dilation : 0, dilation};
}

template <typename T>
AcbParams<T> AcbParams<T>::create(std::size_t c_in, std::size_t c_out, std::size_t stride, std::size_t dilation,
                                  RandomStream& rng) {
  AcbParams<T> p;
  p.k3x3 = kaiming_normal<T>({c_out, c_in, 3, 3}, rng);
  p.k1x3 = kaiming_normal<T>({c_out, c_in, 1, 3}, rng);
  p.k3x1 = kaiming_normal<T>({c_out, c_in, 3, 1}, rng);
  p.bn3x3 = BatchNorm<T>(c_out);
  p.bn1x3 = BatchNorm<T>(c_out);
  p.bn3x1 = BatchNorm<T>(c_out);
  p.stride = stride;
  p.dilation = dilation;
  return p;
}

template <typename T>
void AcbParams<T>::validate() const {
  const Shape s3{out_channels(), in_channels(), 3, 3};
  const Shape s13{out_channels(), in_channels(), 1, 3};
  const Shape s31{out_channels(), in_channels(), 3, 1};
  if (k3x3.shape() != s3 || k1x3.shape() != s13 || k3x1.shape() != s31) {
    throw std::invalid_argument("AcbParams: inconsistent kernel shapes " + shape_str(k3x3.shape()) + ", " +
                                shape_str(k1x3.shape()) + ", " + shape_str(k3x1.shape()));
  }
  if (bn3x3.channels() != out_channels() || bn1x3.channels() != out_channels() ||
      bn3x1.channels() != out_channels()) {
    throw std::invalid_argument("AcbParams: BN channel count differs from kernel output channels");
  }
  if (stride == 0 || dilation == 0) throw std::invalid_argument("AcbParams: stride and dilation must be positive");
}

template <typename T>
bool AcbParams<T>::stats_populated() const {
  return bn3x3.stats_populated() && bn1x3.stats_populated() && bn3x1.stats_populated();
}

template <typename T>
Tensor<T> acb_preactivation(const Tensor<T>& x, AcbParams<T>& p, Mode mode) {
  p.validate();
  const auto a = batch_norm(conv2d(x, p.k3x3, Tensor<T>{}, acb_conv_options(3, 3, p.stride, p.dilation)), p.bn3x3, mode);
  const auto b = batch_norm(conv2d(x, p.k1x3, Tensor<T>{}, acb_conv_options(1, 3, p.stride, p.dilation)), p.bn1x3, mode);
  const auto c = batch_norm(conv2d(x, p.k3x1, Tensor<T>{}, acb_conv_options(3, 1, p.stride, p.dilation)), p.bn3x1, mode);
  return add(add(a, b), c);
}

template <typename T>
Tensor<T> acb_forward(const Tensor<T>& x, AcbParams<T>& p, Mode mode) {
  return swish(acb_preactivation(x, p, mode));
}

template <typename T>
FusedAcb<T> acb_fuse(const AcbParams<T>& p) {
  p.validate();
  if (!p.stats_populated()) {
    throw std::logic_error("acb_fuse: BN running statistics are not populated; run Train-mode passes or load them first");
  }
  const std::size_t co = p.out_channels();
  const std::size_t ci = p.in_channels();
  std::vector<T> kernel(co * ci * 9, T{0});
  std::vector<T> bias(co, T{0});
  auto fold = [&](const Tensor<T>& k, const BatchNorm<T>& bn, std::size_t kh, std::size_t kw) {
    const std::size_t row0 = kh == 1 ? 1 : 0;
    const std::size_t col0 = kw == 1 ? 1 : 0;
    for (std::size_t o = 0; o < co; ++o) {
      const T inv = T{1} / std::sqrt(bn.running_var[o] + bn.eps);
      const T scale = bn.gamma[o] * inv;
      bias[o] += bn.beta[o] - bn.gamma[o] * bn.running_mean[o] * inv;
      for (std::size_t c = 0; c < ci; ++c) {
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            kernel[((o * ci + c) * 3 + row0 + i) * 3 + col0 + j] += scale * k[((o * ci + c) * kh + i) * kw + j];
          }
        }
      }
    }
  };
  fold(p.k3x3, p.bn3x3, 3, 3);
  fold(p.k1x3, p.bn1x3, 1, 3);
  fold(p.k3x1, p.bn3x1, 3, 1);
  return FusedAcb<T>{Tensor<T>({co, ci, 3, 3}, std::move(kernel)), Tensor<T>({co}, std::move(bias)), p.stride,
                     p.dilation};
}

template <typename T>
Tensor<T> fused_preactivation(const Tensor<T>& x, const FusedAcb<T>& f) {
  return conv2d(x, f.kernel, f.bias, acb_conv_options(3, 3, f.stride, f.dilation));
}

template <typename T>
Tensor<T> fused_forward(const Tensor<T>& x, const FusedAcb<T>& f) {
  return swish(fused_preactivation(x, f));
}

template <typename T>
Tensor<T> acb_layer_forward(const Tensor<T>& x, AcbLayer<T>& layer, Mode mode) {
  if (layer.is_fused()) {
    if (mode == Mode::Train) throw std::logic_error("a fused ACB is inference-only; Train mode needs the branch form");
    return fused_forward(x, *layer.fused);
  }
  return acb_forward(x, layer.params, mode);
}

template <typename T>
SkAcbBlock<T> SkAcbBlock<T>::create(std::size_t c_in, std::size_t c_out, const std::vector<std::size_t>& dilations,
                                    std::size_t d, RandomStream& rng) {
  SkAcbBlock<T> blk;
  for (std::size_t dil : dilations) blk.branches.push_back({AcbParams<T>::create(c_in, c_out, 1, dil, rng), {}});
  blk.reduce_weight = uniform_fan_in<T>({d, c_out}, c_out, rng);
  blk.reduce_bias = uniform_fan_in<T>({d}, c_out, rng);
  for (std::size_t m = 0; m < dilations.size(); ++m) {
    auto a = uniform_fan_in<T>({c_out, d}, d, rng);
    a.set_requires_grad(true);
    blk.attention.push_back(a);
  }
  return blk;
}

template <typename T>
Tensor<T> sk_acb_forward(const Tensor<T>& x, SkAcbBlock<T>& blk, Mode mode, SkTrace<T>* trace) {
  const std::size_t m_count = blk.branches.size();
  if (m_count == 0 || blk.attention.size() != m_count) {
    throw std::invalid_argument("sk_acb_forward: need one attention matrix per branch");
  }
  if (x.rank() != 4 || x.dim(1) != blk.branches.front().in_channels()) {
    throw std::invalid_argument("sk_acb_forward: input " + shape_str(x.shape()) + " does not have " +
                                std::to_string(blk.branches.front().in_channels()) + " channels");
  }
  std::vector<Tensor<T>> branch_out;
  branch_out.reserve(m_count);
  for (auto& b : blk.branches) branch_out.push_back(acb_layer_forward(x, b, mode));
  Tensor<T> u = branch_out.front();
  for (std::size_t m = 1; m < m_count; ++m) u = add(u, branch_out[m]);
  const auto s = global_avg_pool(u);
  const auto z = relu(linear(s, blk.reduce_weight, blk.reduce_bias));
  const std::size_t batch = x.dim(0);
  const std::size_t c = blk.channels();
  std::vector<Tensor<T>> logits;
  logits.reserve(m_count);
  for (const auto& a : blk.attention) logits.push_back(reshape(linear(z, a, Tensor<T>{}), {batch, 1, c}));
  const auto weights = softmax(concat(logits, 1), 1);
  Tensor<T> v;
  for (std::size_t m = 0; m < m_count; ++m) {
    const auto term = scale_channels(branch_out[m], select(weights, 1, m));
    v = v.defined() ? add(v, term) : term;
  }
  if (trace != nullptr) *trace = SkTrace<T>{branch_out, u, s, z, weights};
  return v;
}

template <typename T>
LinearParams<T> LinearParams<T>::create(std::size_t n_in, std::size_t n_out, bool with_bias, RandomStream& rng) {
  LinearParams<T> p;
  p.weight = uniform_fan_in<T>({n_out, n_in}, n_in, rng);
  if (with_bias) p.bias = uniform_fan_in<T>({n_out}, n_in, rng);
  return p;
}

template <typename T>
Tensor<T> stream_forward(const Tensor<T>& x, Stream<T>& s, Mode mode) {
  Tensor<T> h = conv_bn_swish(x, s.stem, mode);
  for (auto& st : s.stages) {
    for (auto& blk : st.sk_blocks) h = sk_acb_forward(h, blk, mode);
    for (auto& acb : st.acb_blocks) h = acb_layer_forward(h, acb, mode);
    if (st.downsample) h = conv_bn_swish(h, *st.downsample, mode);
  }
  return global_avg_pool(h);
}

template <typename T>
Tensor<T> se_fuse(const Tensor<T>& f_stft, const Tensor<T>& f_psd, const SeFusionParams<T>& p, Tensor<T>* gate) {
  const auto cat = concat<T>({f_stft, f_psd}, 1);
  if (cat.dim(1) != p.fc1.in_features() || p.fc2.out_features() != cat.dim(1)) {
    throw std::invalid_argument("se_fuse: concatenated width " + std::to_string(cat.dim(1)) +
                                " does not match the SE layers (" + std::to_string(p.fc1.in_features()) + ")");
  }
  const auto w = sigmoid(linear(relu(linear(cat, p.fc1)), p.fc2));
  if (gate != nullptr) *gate = w;
  return mul(w, cat);
}

template <typename T>
Tensor<T> classify(const Tensor<T>& features, HeadParams<T>& head, Mode mode, RandomStream* rng, Tensor<T>* logits) {
  if (features.rank() != 2 || features.dim(1) != head.fc1.in_features()) {
    throw std::invalid_argument("classify: expected [B, " + std::to_string(head.fc1.in_features()) + "], got " +
                                shape_str(features.shape()));
  }
  Tensor<T> h = swish(batch_norm(linear(features, head.fc1), head.bn, mode));
  if (mode == Mode::Train && head.dropout_p > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("classify: Train-mode dropout needs a random stream");
    h = dropout(h, head.dropout_p, mode, *rng);
  }
  const auto z = linear(h, head.fc2);
  if (logits != nullptr) *logits = z;
  return softmax(z, 1);
}

template <typename T>
Skanet<T>::Skanet(const ModelConfig& config, RandomStream& rng) : config_(config) {
  config_.validate();
  build(rng);
}

template <typename T>
Skanet<T>::Skanet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  RandomStream rng(seed);
  build(rng);
}

template <typename T>
void Skanet<T>::build(RandomStream& rng) {
  const ModelConfig& c = config_;
  stft_.stem = ConvBn<T>::create(1, c.stft_stem_channels, 3, 2, rng);
  std::size_t ch = c.stft_stem_channels;
  for (const auto& spec : c.stft_stages) {
    Stage<T> st;
    for (std::size_t b = 0; b < spec.blocks; ++b) {
      const std::size_t c_in = b == 0 ? ch : spec.channels;
      if (c.uses_sk()) {
        st.sk_blocks.push_back(SkAcbBlock<T>::create(c_in, spec.channels, c.sk_dilations, c.sk_dim(spec.channels), rng));
      } else {
        st.acb_blocks.push_back({AcbParams<T>::create(c_in, spec.channels, 1, 1, rng), {}});
      }
    }
    if (spec.downsample) st.downsample = ConvBn<T>::create(spec.channels, spec.channels, 3, 2, rng);
    stft_.stages.push_back(std::move(st));
    ch = spec.channels;
  }
  stft_.out_channels = ch;

  if (c.has_psd_stream()) {
    psd_.stem = ConvBn<T>::create(1, c.psd_stem_channels, 3, 2, rng);
    ch = c.psd_stem_channels;
    for (const auto& spec : c.psd_stages) {
      Stage<T> st;
      for (std::size_t b = 0; b < spec.blocks; ++b) {
        st.acb_blocks.push_back({AcbParams<T>::create(b == 0 ? ch : spec.channels, spec.channels, 1, 1, rng), {}});
      }
      if (spec.downsample) st.downsample = ConvBn<T>::create(spec.channels, spec.channels, 3, 2, rng);
      psd_.stages.push_back(std::move(st));
      ch = spec.channels;
    }
    psd_.out_channels = ch;
  }

  const std::size_t f = c.head_features();
  if (c.has_se_fusion()) {
    se_ = SeFusionParams<T>{LinearParams<T>::create(f, c.se_hidden(), true, rng),
                            LinearParams<T>::create(c.se_hidden(), f, true, rng)};
  }
  head_.fc1 = LinearParams<T>::create(f, c.head_hidden, true, rng);
  head_.bn = BatchNorm<T>(c.head_hidden);
  head_.fc2 = LinearParams<T>::create(c.head_hidden, c.num_classes, true, rng);
  head_.dropout_p = c.dropout_p;
}

template <typename T>
Tensor<T> Skanet<T>::stft_features(const Tensor<T>& x_tfi, Mode mode) {
  check_image_batch(x_tfi, config_.input_side, "stft stream input");
  return stream_forward(x_tfi, stft_, mode);
}

template <typename T>
Tensor<T> Skanet<T>::psd_features(const Tensor<T>& x_psd, Mode mode) {
  if (!config_.has_psd_stream()) throw std::logic_error("this model variant has no PSD stream");
  check_image_batch(x_psd, config_.input_side, "psd stream input");
  return stream_forward(x_psd, psd_, mode);
}

template <typename T>
Tensor<T> Skanet<T>::forward(const Tensor<T>& x_tfi, const Tensor<T>& x_psd, Mode mode, RandomStream* rng) {
  const auto f_stft = stft_features(x_tfi, mode);
  Tensor<T> features = f_stft;
  if (config_.has_psd_stream()) {
    if (x_psd.defined() && x_psd.rank() >= 1 && x_psd.dim(0) != x_tfi.dim(0)) {
      throw std::invalid_argument("forward: TFI batch " + std::to_string(x_tfi.dim(0)) + " vs PSD batch " +
                                  std::to_string(x_psd.dim(0)));
    }
    const auto f_psd = psd_features(x_psd, mode);
    features = se_ ? se_fuse(f_stft, f_psd, *se_) : concat<T>({f_stft, f_psd}, 1);
  }
  return classify(features, head_, mode, rng);
}

template <typename T>
std::vector<NamedTensor<T>> Skanet<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  push_stream(out, "stft_stream", stft_, false);
  if (config_.has_psd_stream()) push_stream(out, "psd_stream", psd_, false);
  if (se_) {
    push_linear(out, "se.fc1", se_->fc1);
    push_linear(out, "se.fc2", se_->fc2);
  }
  push_linear(out, "head.fc1", head_.fc1);
  push_bn(out, "head.bn", head_.bn);
  push_linear(out, "head.fc2", head_.fc2);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Skanet<T>::buffers() const {
  std::vector<NamedTensor<T>> out;
  push_stream(out, "stft_stream", stft_, true);
  if (config_.has_psd_stream()) push_stream(out, "psd_stream", psd_, true);
  push_bn_buffers(out, "head.bn", head_.bn);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Skanet<T>::state() const {
  auto out = parameters();
  auto b = buffers();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

template <typename T>
std::size_t Skanet<T>::count_params() const {
  const auto p = parameters();
  return count_scalars<T>(p);
}

template <typename T>
template <typename F>
void Skanet<T>::for_each_acb(F&& f) {
  for (Stream<T>* s : {&stft_, &psd_}) {
    for (auto& st : s->stages) {
      for (auto& blk : st.sk_blocks) {
        for (auto& b : blk.branches) f(b);
      }
      for (auto& a : st.acb_blocks) f(a);
    }
  }
}

template <typename T>
void Skanet<T>::fuse() {
  if (fused_) return;
  std::vector<FusedAcb<T>> fused;
  for_each_acb([&](AcbLayer<T>& layer) { fused.push_back(acb_fuse(layer.params)); });
  std::size_t i = 0;
  for_each_acb([&](AcbLayer<T>& layer) {
    layer.fused = std::move(fused[i++]);
    layer.params = AcbParams<T>{};
  });
  fused_ = true;
}

template <typename T>
void Skanet<T>::adopt_fused_layout() {
  if (fused_) return;
  for_each_acb([&](AcbLayer<T>& layer) {
    const std::size_t co = layer.params.out_channels();
    const std::size_t ci = layer.params.in_channels();
    layer.fused = FusedAcb<T>{Tensor<T>({co, ci, 3, 3}), Tensor<T>({co}), layer.params.stride, layer.params.dilation};
    layer.params = AcbParams<T>{};
  });
  fused_ = true;
}

std::size_t count_params(const ModelConfig& config) {
  return Skanet<float>(config, std::uint64_t{0}).count_params();
}

#define JAMLAB_INSTANTIATE_SKANET(T)                                                                     \
  template Tensor<T> kaiming_normal(Shape, RandomStream&);                                               \
  template Tensor<T> uniform_fan_in(Shape, std::size_t, RandomStream&);                                  \
  template struct ConvBn<T>;                                                                             \
  template Tensor<T> conv_bn_swish(const Tensor<T>&, ConvBn<T>&, Mode);                                  \
  template struct AcbParams<T>;                                                                          \
  template Tensor<T> acb_preactivation(const Tensor<T>&, AcbParams<T>&, Mode);                           \
  template Tensor<T> acb_forward(const Tensor<T>&, AcbParams<T>&, Mode);                                 \
  template FusedAcb<T> acb_fuse(const AcbParams<T>&);                                                    \
  template Tensor<T> fused_preactivation(const Tensor<T>&, const FusedAcb<T>&);                          \
  template Tensor<T> fused_forward(const Tensor<T>&, const FusedAcb<T>&);                                \
  template Tensor<T> acb_layer_forward(const Tensor<T>&, AcbLayer<T>&, Mode);                            \
  template struct SkAcbBlock<T>;                                                                         \
  template Tensor<T> sk_acb_forward(const Tensor<T>&, SkAcbBlock<T>&, Mode, SkTrace<T>*);                \
  template struct LinearParams<T>;                                                                       \
  template Tensor<T> stream_forward(const Tensor<T>&, Stream<T>&, Mode);                                 \
  template Tensor<T> se_fuse(const Tensor<T>&, const Tensor<T>&, const SeFusionParams<T>&, Tensor<T>*);  \
  template Tensor<T> classify(const Tensor<T>&, HeadParams<T>&, Mode, RandomStream*, Tensor<T>*);        \
  template class Skanet<T>;

JAMLAB_INSTANTIATE_SKANET(float)
JAMLAB_INSTANTIATE_SKANET(double)

#undef JAMLAB_INSTANTIATE_SKANET

}  // namespace jamlab::nn
