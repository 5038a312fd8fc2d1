#include "jamlab/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "jamlab/signal.hpp"

namespace jamlab {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names)
    : k_(num_classes), names_(std::move(class_names)), counts_(num_classes * num_classes, 0) {
  if (k_ == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
  if (names_.empty()) {
    for (std::size_t i = 0; i < k_; ++i) names_.push_back("class" + std::to_string(i));
  }
  if (names_.size() != k_) throw std::invalid_argument("ConfusionMatrix: class name count differs from K");
}

ConfusionMatrix ConfusionMatrix::for_compound_classes() {
  std::vector<std::string> names;
  for (auto c : all_classes()) names.emplace_back(class_name(c));
  return ConfusionMatrix(kNumClasses, std::move(names));
}

void ConfusionMatrix::update(std::size_t true_label, std::size_t predicted_label) {
  if (true_label >= k_ || predicted_label >= k_) {
    throw std::out_of_range("ConfusionMatrix: label pair (" + std::to_string(true_label) + ", " +
                            std::to_string(predicted_label) + ") outside K = " + std::to_string(k_));
  }
  ++counts_[true_label * k_ + predicted_label];
}

std::uint64_t ConfusionMatrix::at(std::size_t true_label, std::size_t predicted_label) const {
  if (true_label >= k_ || predicted_label >= k_) throw std::out_of_range("ConfusionMatrix: index out of range");
  return counts_[true_label * k_ + predicted_label];
}

void ConfusionMatrix::set(std::size_t true_label, std::size_t predicted_label, std::uint64_t count) {
  if (true_label >= k_ || predicted_label >= k_) throw std::out_of_range("ConfusionMatrix: index out of range");
  counts_[true_label * k_ + predicted_label] = count;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += counts_[i * k_ + i];
  return s;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix::merge: K mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::domain_error("overall_accuracy: empty confusion matrix");
  return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<ClassMetrics> precision_recall_f1(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  std::vector<ClassMetrics> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics& m = out[c];
    m.tp = cm.at(c, c);
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      m.fp += cm.at(o, c);
      m.fn += cm.at(c, o);
    }
    m.support = m.tp + m.fn;
    m.precision_undefined = m.tp + m.fp == 0;
    m.recall_undefined = m.tp + m.fn == 0;
    m.precision = m.precision_undefined ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    m.recall = m.recall_undefined ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    m.f1 = m.tp == 0 ? 0.0 : static_cast<double>(2 * m.tp) / static_cast<double>(2 * m.tp + m.fp + m.fn);
  }
  return out;
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& n : cm.class_names()) os << ',' << n;
  os << '\n';
  for (std::size_t t = 0; t < cm.num_classes(); ++t) {
    os << cm.class_names()[t];
    for (std::size_t p = 0; p < cm.num_classes(); ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

std::string metrics_to_csv(const ConfusionMatrix& cm, const std::vector<ClassMetrics>& metrics) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "class,precision,recall,f1,tp,fp,fn,support,degenerate\n";
  for (std::size_t c = 0; c < metrics.size(); ++c) {
    const auto& m = metrics[c];
    std::string flag = m.precision_undefined && m.recall_undefined ? "precision+recall"
                       : m.precision_undefined                     ? "precision"
                       : m.recall_undefined                        ? "recall"
                                                                   : "";
    os << cm.class_names().at(c) << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',' << m.tp << ','
       << m.fp << ',' << m.fn << ',' << m.support << ',' << flag << '\n';
  }
  return os.str();
}

std::vector<JnrAccuracy> accuracy_by_jnr(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                                         std::span<const double> jnr_db) {
  if (labels.size() != predictions.size() || labels.size() != jnr_db.size()) {
    throw std::invalid_argument("accuracy_by_jnr: labels, predictions and JNR lengths differ");
  }
  std::map<long long, JnrAccuracy> levels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& row = levels[std::llround(jnr_db[i] * 1e6)];
    row.jnr_db = jnr_db[i];
    ++row.samples;
    if (labels[i] == predictions[i]) ++row.correct;
  }
  std::vector<JnrAccuracy> out;
  for (auto& [key, row] : levels) {
    row.accuracy = 100.0 * static_cast<double>(row.correct) / static_cast<double>(row.samples);
    out.push_back(row);
  }
  return out;
}

std::string jnr_table_to_csv(const std::vector<JnrAccuracy>& rows) {
  std::ostringstream os;
  os << std::setprecision(10) << "jnr_db,samples,correct,accuracy\n";
  for (const auto& r : rows) os << r.jnr_db << ',' << r.samples << ',' << r.correct << ',' << r.accuracy << '\n';
  return os.str();
}

std::uint64_t flops_conv_layer(std::size_t h_out, std::size_t w_out, std::size_t kh, std::size_t kw, std::size_t c_in,
                               std::size_t c_out) {
  return std::uint64_t{2} * h_out * w_out * kh * kw * c_in * c_out;
}

std::uint64_t flops_conv_layer(std::size_t h_out, std::size_t w_out, std::size_t ksize, std::size_t c_in,
                               std::size_t c_out) {
  return flops_conv_layer(h_out, w_out, ksize, ksize, c_in, c_out);
}

std::uint64_t flops_linear_layer(std::size_t n_in, std::size_t n_out) {
  if (n_in == 0) throw std::invalid_argument("flops_linear_layer: N_in must be positive");
  return (std::uint64_t{2} * n_in - 1) * n_out;
}

void FlopsReport::add(FlopsRow row) {
  (row.kind == LayerKind::Conv ? conv_total : linear_total) += row.flops;
  rows.push_back(std::move(row));
}

std::string FlopsReport::to_table() const {
  std::size_t name_w = 5;
  std::size_t shape_w = 5;
  for (const auto& r : rows) {
    name_w = std::max(name_w, r.name.size());
    shape_w = std::max(shape_w, r.shape.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "layer" << "  " << std::setw(6) << "kind" << "  "
     << std::setw(static_cast<int>(shape_w)) << "shape" << "  " << std::right << std::setw(16) << "flops" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.name << "  " << std::setw(6)
       << (r.kind == LayerKind::Conv ? "conv" : "linear") << "  " << std::setw(static_cast<int>(shape_w)) << r.shape
       << "  " << std::right << std::setw(16) << r.flops << '\n';
  }
  os << "conv total:   " << conv_total << '\n'
     << "linear total: " << linear_total << '\n'
     << "total:        " << total() << " (" << std::fixed << std::setprecision(3)
     << static_cast<double>(total()) / 1e9 << " GFLOPs)\n";
  return os.str();
}

std::string FlopsReport::to_csv() const {
  std::ostringstream os;
  os << "layer,kind,shape,flops\n";
  for (const auto& r : rows) {
    os << r.name << ',' << (r.kind == LayerKind::Conv ? "conv" : "linear") << ",\"" << r.shape << "\"," << r.flops
       << '\n';
  }
  os << "conv_total,conv,," << conv_total << '\n' << "linear_total,linear,," << linear_total << '\n'
     << "total,,," << total() << '\n';
  return os.str();
}

namespace {

struct Walker {
  FlopsReport report;
  std::size_t c = 1;
  std::size_t h = 0;
  std::size_t w = 0;

  void conv(const std::string& name, std::size_t c_out, std::size_t kh, std::size_t kw, const nn::Conv2dOptions& opt,
            bool advance = true) {
    const auto out = nn::conv2d_output_shape({1, c, h, w}, {c_out, c, kh, kw}, opt);
    std::ostringstream shape;
    shape << kh << 'x' << kw << ' ' << c << "->" << c_out << " @" << out[2] << 'x' << out[3];
    if (opt.stride != 1) shape << " s" << opt.stride;
    if (opt.dilation != 1) shape << " d" << opt.dilation;
    report.add({name, LayerKind::Conv, shape.str(), flops_conv_layer(out[2], out[3], kh, kw, c, c_out)});
    if (advance) {
      c = c_out;
      h = out[2];
      w = out[3];
    }
  }

  void linear(const std::string& name, std::size_t n_in, std::size_t n_out) {
    report.add({name, LayerKind::Linear, std::to_string(n_in) + "->" + std::to_string(n_out),
                flops_linear_layer(n_in, n_out)});
  }

  void acb(const std::string& name, std::size_t c_out, std::size_t dilation, bool train_form, bool advance) {
    if (!train_form) {
      conv(name, c_out, 3, 3, nn::acb_conv_options(3, 3, 1, dilation), advance);
      return;
    }
    conv(name + ".k3x3", c_out, 3, 3, nn::acb_conv_options(3, 3, 1, dilation), false);
    conv(name + ".k1x3", c_out, 1, 3, nn::acb_conv_options(1, 3, 1, dilation), false);
    conv(name + ".k3x1", c_out, 3, 1, nn::acb_conv_options(3, 1, 1, dilation), advance);
  }
};

std::string stage_name(const std::string& stream, std::size_t s, std::size_t b) {
  return stream + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
}

}  // namespace

FlopsReport flops_model(const nn::ModelConfig& config, bool train_form) {
  config.validate();
  Walker walk;
  const nn::Conv2dOptions stem_opt{2, 1, 1, 1};
  const nn::Conv2dOptions down_opt{2, 1, 1, 1};

  walk.h = walk.w = config.input_side;
  walk.c = 1;
  walk.conv("stft_stream.stem", config.stft_stem_channels, 3, 3, stem_opt);
  for (std::size_t s = 0; s < config.stft_stages.size(); ++s) {
    const auto& spec = config.stft_stages[s];
    for (std::size_t b = 0; b < spec.blocks; ++b) {
      const std::string bp = stage_name("stft_stream", s, b);
      if (config.uses_sk()) {
        for (std::size_t m = 0; m < config.sk_dilations.size(); ++m) {
          const bool last = m + 1 == config.sk_dilations.size();
          walk.acb(bp + ".branch" + std::to_string(m + 1), spec.channels, config.sk_dilations[m], train_form, last);
        }
        const std::size_t d = config.sk_dim(spec.channels);
        walk.linear(bp + ".reduce", spec.channels, d);
        for (std::size_t m = 0; m < config.sk_dilations.size(); ++m) {
          walk.linear(bp + ".attention." + std::string(1, static_cast<char>('a' + m)), d, spec.channels);
        }
      } else {
        walk.acb(bp + ".acb", spec.channels, 1, train_form, true);
      }
    }
    if (spec.downsample) {
      walk.conv("stft_stream.stage" + std::to_string(s + 1) + ".downsample", spec.channels, 3, 3, down_opt);
    }
  }

  if (config.has_psd_stream()) {
    walk.h = walk.w = config.input_side;
    walk.c = 1;
    walk.conv("psd_stream.stem", config.psd_stem_channels, 3, 3, stem_opt);
    for (std::size_t s = 0; s < config.psd_stages.size(); ++s) {
      const auto& spec = config.psd_stages[s];
      for (std::size_t b = 0; b < spec.blocks; ++b) {
        walk.acb(stage_name("psd_stream", s, b) + ".acb", spec.channels, 1, train_form, true);
      }
      if (spec.downsample) {
        walk.conv("psd_stream.stage" + std::to_string(s + 1) + ".downsample", spec.channels, 3, 3, down_opt);
      }
    }
  }

  const std::size_t f = config.head_features();
  if (config.has_se_fusion()) {
    walk.linear("se.fc1", f, config.se_hidden());
    walk.linear("se.fc2", config.se_hidden(), f);
  }
  walk.linear("head.fc1", f, config.head_hidden);
  walk.linear("head.fc2", config.head_hidden, config.num_classes);
  return walk.report;
}

FlopsReport flops_sequential(const std::vector<LayerSpec>& layers, std::size_t c, std::size_t h, std::size_t w) {
  Walker walk;
  walk.c = c;
  walk.h = h;
  walk.w = w;
  std::size_t features = c * h * w;
  bool flat = false;
  for (const auto& layer : layers) {
    if (const auto* cv = std::get_if<ConvLayerSpec>(&layer)) {
      if (flat) throw std::invalid_argument("flops_sequential: conv layer '" + cv->name + "' after a linear layer");
      if (cv->c_in != walk.c) {
        throw std::invalid_argument("flops_sequential: layer '" + cv->name + "' expects " + std::to_string(cv->c_in) +
                                    " channels, input has " + std::to_string(walk.c));
      }
      walk.conv(cv->name, cv->c_out, cv->kh, cv->kw, cv->opt);
      features = walk.c * walk.h * walk.w;
    } else {
      const auto& ln = std::get<LinearLayerSpec>(layer);
      if (ln.n_in != features) {
        throw std::invalid_argument("flops_sequential: layer '" + ln.name + "' expects " + std::to_string(ln.n_in) +
                                    " inputs, previous layer yields " + std::to_string(features));
      }
      walk.linear(ln.name, ln.n_in, ln.n_out);
      features = ln.n_out;
      flat = true;
    }
  }
  return walk.report;
}

}  // namespace jamlab
