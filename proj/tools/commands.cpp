#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <streambuf>

#include "jamlab/errors.hpp"
#include "jamlab/rng.hpp"

namespace jamlab::cli {

namespace {

constexpr std::uint64_t kSplitTag = 0x73706c6974ull;  // "split"
constexpr std::uint64_t kInitTag = 0x696e6974ull;     // "init"

/// Duplicates everything written to it into two streams (the second may be null).
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    const auto ch = traits_type::to_char_type(c);
    if (a_->sputc(ch) == traits_type::eof()) return traits_type::eof();
    if (b_ != nullptr) b_->sputc(ch);
    return c;
  }
  int sync() override {
    const int r = a_->pubsync();
    if (b_ != nullptr) b_->pubsync();
    return r;
  }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

void say(const Context& ctx, const std::string& line) {
  if (ctx.out != nullptr) *ctx.out << line << '\n';
}

void note(const Context& ctx, const std::string& line) {
  if (ctx.log != nullptr) *ctx.log << line << std::endl;
}

ProgressFn progress_printer(const Context& ctx, const std::string& what) {
  if (ctx.log == nullptr) return {};
  return [&ctx, what](std::size_t done, std::size_t total) {
    const std::size_t step = std::max<std::size_t>(1, total / 20);
    if (done % step == 0 || done == total) *ctx.log << what << ' ' << done << '/' << total << std::endl;
  };
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

std::vector<StratumKey> stratum_keys(const Manifest& m) {
  std::vector<StratumKey> keys;
  keys.reserve(m.records.size());
  for (const auto& r : m.records) keys.push_back({class_index(r.class_label), r.jnr_db});
  return keys;
}

struct LoadedData {
  Manifest manifest;
  FeatureDataset data;
};

LoadedData load_dataset(const fs::path& dataset, std::size_t expected_side) {
  LoadedData d;
  d.manifest = read_manifest(dataset / kManifestName);
  d.data = load_features(dataset, d.manifest);
  if (d.data.size() == 0) throw IoError("dataset '" + dataset.string() + "' has no records");
  if (expected_side != 0 && d.data.side != expected_side) {
    throw ConfigError("dataset images are " + std::to_string(d.data.side) + " px, model expects " +
                      std::to_string(expected_side));
  }
  return d;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::uint64_t run_seed_for(std::uint64_t seed, std::size_t run) { return stable_hash({seed, run}); }

struct RunOutcome {
  std::vector<EpochLogLine> log;
  double test_accuracy = 0.0;
};

RunOutcome train_one(nn::Skanet<float>& model, const LoadedData& d, const SplitIndices& split, const RunConfig& cfg,
                     std::uint64_t run_seed, const fs::path& log_path, const Context& ctx) {
  ensure_dir(log_path.parent_path());
  std::ofstream file(log_path);
  if (!file) throw IoError("cannot open '" + log_path.string() + "' for writing");
  TeeBuf tee(file.rdbuf(), ctx.log != nullptr ? ctx.log->rdbuf() : nullptr);
  std::ostream log(&tee);
  RunOutcome r;
  r.log = fit(model, d.data, split, cfg.train, run_seed, &log);
  log.flush();
  if (!split.test.empty()) r.test_accuracy = evaluate(model, d.data, split.test, cfg.train.batch_size).accuracy;
  return r;
}

nlohmann::json split_info(const RunConfig& cfg) {
  return {{"split_seed", stable_hash({cfg.seed, kSplitTag})}, {"split_ratios", cfg.train.split}};
}

SplitIndices split_from_info(const Manifest& m, const nlohmann::json& info) {
  const auto keys = stratum_keys(m);
  return split_dataset(keys, info.at("split_ratios").get<std::array<double, 3>>(),
                       info.at("split_seed").get<std::uint64_t>());
}

}  // namespace

SynthResult cmd_synth(const RunConfig& cfg, const fs::path& out, const Context& ctx) {
  cfg.validate();
  ensure_dir(out);
  echo_config(cfg, out);
  SynthResult r;
  r.manifest = generate_dataset(cfg.generation, out, cfg.jobs, progress_printer(ctx, "synth"));
  say(ctx, "wrote " + std::to_string(r.manifest.records.size()) + " samples to " + out.string());
  return r;
}

Manifest cmd_featurize(const RunConfig& cfg, const fs::path& dataset, const Context& ctx) {
  cfg.validate();
  auto m = featurize_dataset(dataset, cfg.generation.features, cfg.jobs, progress_printer(ctx, "featurize"));
  echo_config(cfg, dataset);
  say(ctx, "featurized " + std::to_string(m.records.size()) + " samples in " + dataset.string());
  return m;
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& dataset, const fs::path& out, const Context& ctx) {
  cfg.validate();
  const auto d = load_dataset(dataset, cfg.model.input_side);
  ensure_dir(out);
  echo_config(cfg, out);
  const auto info = split_info(cfg);
  std::vector<std::string> warnings;
  const auto split = split_dataset(stratum_keys(d.manifest), cfg.train.split, info.at("split_seed").get<std::uint64_t>(),
                                   &warnings);
  for (const auto& w : warnings) note(ctx, "warning: " + w);
  note(ctx, "split: " + std::to_string(split.train.size()) + " train, " + std::to_string(split.val.size()) + " val, " +
                std::to_string(split.test.size()) + " test");

  TrainResult result;
  std::vector<double> accs;
  for (std::size_t run = 0; run < cfg.train.monte_carlo_runs; ++run) {
    TrainRun tr;
    tr.run = run;
    tr.run_seed = run_seed_for(cfg.seed, run);
    nn::Skanet<float> model(cfg.model, stable_hash({tr.run_seed, kInitTag}));
    const fs::path run_dir = out / ("run" + std::to_string(run));
    note(ctx, "run " + std::to_string(run) + ": " + std::to_string(model.count_params()) + " parameters");
    auto outcome = train_one(model, d, split, cfg, tr.run_seed, run_dir / "train_log.csv", ctx);
    tr.log = std::move(outcome.log);
    tr.test_accuracy = outcome.test_accuracy;
    nlohmann::json extra = info;
    extra["run"] = run;
    extra["run_seed"] = tr.run_seed;
    tr.checkpoint = run_dir / "model.jlc";
    save_checkpoint(model, tr.checkpoint, extra);
    if (run == 0) fs::copy_file(tr.checkpoint, out / "model.jlc", fs::copy_options::overwrite_existing);
    accs.push_back(tr.test_accuracy);
    std::ostringstream line;
    line << std::fixed << std::setprecision(2) << "run " << run << ": test OA " << tr.test_accuracy << " %";
    say(ctx, line.str());
    result.runs.push_back(std::move(tr));
  }
  std::tie(result.mean_test_accuracy, result.std_test_accuracy) = mean_std(accs);
  nlohmann::json summary{{"test_accuracy", accs},
                         {"mean_test_accuracy", result.mean_test_accuracy},
                         {"std_test_accuracy", result.std_test_accuracy},
                         {"train_samples", split.train.size()},
                         {"val_samples", split.val.size()},
                         {"test_samples", split.test.size()}};
  write_text_file(out / "summary.json", summary.dump(2) + "\n");
  std::ostringstream line;
  line << std::fixed << std::setprecision(2) << "test OA over " << accs.size() << " run(s): " << result.mean_test_accuracy
       << " +/- " << result.std_test_accuracy << " %";
  say(ctx, line.str());
  return result;
}

EvalResult cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out,
                    const std::string& subset, const Context& ctx) {
  nlohmann::json extra;
  auto model = load_checkpoint<float>(checkpoint, &extra);
  const auto d = load_dataset(dataset, model.config().input_side);
  std::vector<std::size_t> indices;
  if (subset == "all") {
    indices.resize(d.data.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  } else if (subset == "test") {
    if (!extra.contains("split_seed")) throw ConfigError("checkpoint carries no split; use --subset all");
    indices = split_from_info(d.manifest, extra).test;
  } else {
    throw ConfigError("unknown subset '" + subset + "' (expected test or all)");
  }
  if (indices.empty()) throw ConfigError("the selected subset is empty");

  const auto ev = evaluate(model, d.data, indices, 64);
  const std::size_t k = model.config().num_classes;
  EvalResult r{k == kNumClasses ? ConfusionMatrix::for_compound_classes() : ConfusionMatrix(k), {}, {}, 0.0};
  std::vector<std::size_t> labels;
  std::vector<double> jnrs;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    labels.push_back(d.data.labels[indices[i]]);
    jnrs.push_back(d.data.jnr_db[indices[i]]);
    r.confusion.update(labels.back(), ev.predictions[i]);
  }
  r.metrics = precision_recall_f1(r.confusion);
  r.by_jnr = accuracy_by_jnr(labels, ev.predictions, jnrs);
  r.overall_accuracy = overall_accuracy(r.confusion);

  ensure_dir(out);
  write_text_file(out / "confusion.csv", confusion_to_csv(r.confusion));
  write_text_file(out / "metrics.csv", metrics_to_csv(r.confusion, r.metrics));
  write_text_file(out / "jnr_accuracy.csv", jnr_table_to_csv(r.by_jnr));
  plot_confusion(r.confusion, out / "confusion.pgm");
  plot_jnr_curve(r.by_jnr, out / "jnr_accuracy.pgm");
  nlohmann::json summary{{"checkpoint", checkpoint.string()},
                         {"subset", subset},
                         {"samples", indices.size()},
                         {"overall_accuracy", r.overall_accuracy},
                         {"loss", ev.loss}};
  write_text_file(out / "summary.json", summary.dump(2) + "\n");

  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << "OA " << r.overall_accuracy << " % on " << indices.size() << " samples ("
     << subset << ")\n";
  os << std::left << std::setw(12) << "class" << std::right << std::setw(10) << "precision" << std::setw(10) << "recall"
     << std::setw(10) << "f1" << '\n';
  for (std::size_t c = 0; c < r.metrics.size(); ++c) {
    os << std::left << std::setw(12) << r.confusion.class_names()[c] << std::right << std::setprecision(4)
       << std::setw(10) << r.metrics[c].precision << std::setw(10) << r.metrics[c].recall << std::setw(10)
       << r.metrics[c].f1 << '\n';
  }
  for (const auto& j : r.by_jnr) {
    os << std::setprecision(1) << "JNR " << j.jnr_db << " dB: " << std::setprecision(2) << j.accuracy << " % ("
       << j.samples << ")\n";
  }
  if (ctx.out != nullptr) *ctx.out << os.str();
  return r;
}

FuseResult cmd_fuse(const fs::path& checkpoint, const fs::path& out, const std::optional<fs::path>& dataset,
                    std::size_t probe_count, const Context& ctx) {
  nlohmann::json extra;
  auto reference = load_checkpoint<float>(checkpoint, &extra);
  if (reference.is_fused()) throw ConfigError("'" + checkpoint.string() + "' is already in fused form");
  auto fused = load_checkpoint<float>(checkpoint);
  fused.fuse();

  const std::size_t side = reference.config().input_side;
  nn::Tensor<float> tfi;
  nn::Tensor<float> psd;
  if (dataset) {
    const auto d = load_dataset(*dataset, side);
    std::vector<std::size_t> idx(std::min(probe_count, d.data.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto batch = make_batch<float>(d.data, idx);
    tfi = batch.tfi;
    psd = batch.psd;
  } else {
    RandomStream rng(stable_hash({extra.value("run_seed", std::uint64_t{0}), 0x70726f6265ull}));
    std::vector<float> a(probe_count * side * side);
    std::vector<float> b(a.size());
    for (auto& v : a) v = static_cast<float>(uniform(rng, 0.0, 1.0));
    for (auto& v : b) v = static_cast<float>(uniform(rng, 0.0, 1.0));
    tfi = nn::Tensor<float>({probe_count, 1, side, side}, std::move(a));
    psd = nn::Tensor<float>({probe_count, 1, side, side}, std::move(b));
  }
  nn::NoGradGuard no_grad;
  const auto p_ref = reference.forward(tfi, psd, nn::Mode::Eval);
  const auto p_fused = fused.forward(tfi, psd, nn::Mode::Eval);
  FuseResult r;
  r.probes = tfi.dim(0);
  std::size_t argmax_mismatch = 0;
  const std::size_t k = p_ref.dim(1);
  for (std::size_t i = 0; i < p_ref.numel(); ++i) {
    r.max_abs_prob_diff = std::max(r.max_abs_prob_diff, static_cast<double>(std::abs(p_ref[i] - p_fused[i])));
  }
  for (std::size_t b = 0; b < r.probes; ++b) {
    const auto ra = p_ref.values().subspan(b * k, k);
    const auto rb = p_fused.values().subspan(b * k, k);
    if (std::max_element(ra.begin(), ra.end()) - ra.begin() != std::max_element(rb.begin(), rb.end()) - rb.begin()) {
      ++argmax_mismatch;
    }
  }

  ensure_dir(out);
  r.fused_checkpoint = out / "fused.jlc";
  extra["fused_from"] = checkpoint.filename().string();
  save_checkpoint(fused, r.fused_checkpoint, extra);
  nlohmann::json report{{"source", checkpoint.string()},
                        {"probes", r.probes},
                        {"probe_source", dataset ? "dataset" : "uniform random images"},
                        {"max_abs_probability_difference", r.max_abs_prob_diff},
                        {"argmax_mismatches", argmax_mismatch},
                        {"params_train_form", reference.count_params()},
                        {"params_fused_form", fused.count_params()}};
  write_text_file(out / "fuse_report.json", report.dump(2) + "\n");
  std::ostringstream os;
  os << "fused " << reference.count_params() << " -> " << fused.count_params() << " parameters; max |dp| = "
     << std::scientific << std::setprecision(3) << r.max_abs_prob_diff << " over " << r.probes << " probes, "
     << argmax_mismatch << " argmax changes";
  say(ctx, os.str());
  return r;
}

FlopsReport cmd_flops(const RunConfig& cfg, bool train_form, const std::optional<fs::path>& out, const Context& ctx) {
  FlopsReport report;
  if (cfg.flops) {
    report = flops_sequential(cfg.flops->layers, cfg.flops->c, cfg.flops->h, cfg.flops->w);
  } else {
    cfg.model.validate();
    report = flops_model(cfg.model, train_form);
  }
  if (ctx.out != nullptr) *ctx.out << report.to_table();
  if (!cfg.flops && ctx.out != nullptr) {
    *ctx.out << "parameters:   " << nn::count_params(cfg.model) << '\n';
  }
  if (out) {
    ensure_dir(*out);
    echo_config(cfg, *out);
    write_text_file(*out / "flops.csv", report.to_csv());
    write_text_file(*out / "flops.txt", report.to_table());
  }
  return report;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const fs::path& dataset, const fs::path& out,
                                    const Context& ctx) {
  cfg.validate();
  const auto d = load_dataset(dataset, cfg.model.input_side);
  ensure_dir(out);
  echo_config(cfg, out);
  const auto info = split_info(cfg);
  const auto split = split_dataset(stratum_keys(d.manifest), cfg.train.split, info.at("split_seed").get<std::uint64_t>());

  std::vector<AblationRow> rows;
  std::string per_run = "variant,run,run_seed,test_oa\n";
  for (auto variant : nn::all_ablations()) {
    RunConfig vc = cfg;
    vc.model.ablation = variant;
    AblationRow row;
    row.variant = variant;
    row.params = nn::count_params(vc.model);
    for (std::size_t run = 0; run < cfg.train.monte_carlo_runs; ++run) {
      const auto run_seed = run_seed_for(cfg.seed, run);
      nn::Skanet<float> model(vc.model, stable_hash({run_seed, kInitTag}));
      note(ctx, std::string(nn::ablation_name(variant)) + " run " + std::to_string(run));
      const fs::path log_path = out / std::string(nn::ablation_name(variant)) / ("run" + std::to_string(run)) / "train_log.csv";
      const auto outcome = train_one(model, d, split, vc, run_seed, log_path, ctx);
      row.test_accuracy.push_back(outcome.test_accuracy);
      std::ostringstream line;
      line << nn::ablation_name(variant) << ',' << run << ',' << run_seed << ',' << std::setprecision(10)
           << outcome.test_accuracy << '\n';
      per_run += line.str();
    }
    std::tie(row.mean, row.stddev) = mean_std(row.test_accuracy);
    rows.push_back(row);
  }
  write_text_file(out / "ablation_runs.csv", per_run);
  std::ostringstream csv;
  std::ostringstream table;
  csv << "variant,params,mean_test_oa,std_test_oa,runs\n";
  table << std::left << std::setw(16) << "variant" << std::right << std::setw(12) << "params" << std::setw(12) << "OA %"
        << std::setw(10) << "std" << std::setw(12) << "delta" << '\n';
  for (const auto& r : rows) {
    csv << nn::ablation_name(r.variant) << ',' << r.params << ',' << std::setprecision(10) << r.mean << ',' << r.stddev
        << ',' << r.test_accuracy.size() << '\n';
    table << std::left << std::setw(16) << nn::ablation_name(r.variant) << std::right << std::setw(12) << r.params
          << std::fixed << std::setprecision(2) << std::setw(12) << r.mean << std::setw(10) << r.stddev << std::setw(12)
          << r.mean - rows.front().mean << '\n';
    table.unsetf(std::ios::fixed);
  }
  write_text_file(out / "ablation.csv", csv.str());
  write_text_file(out / "ablation.txt", table.str());
  if (ctx.out != nullptr) *ctx.out << table.str();
  return rows;
}

void write_pgm(const fs::path& path, std::size_t width, std::size_t height, const std::vector<unsigned char>& pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::string data = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  data.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_text_file(path, data);
}

void plot_confusion(const ConfusionMatrix& cm, const fs::path& path, std::size_t cell) {
  const std::size_t k = cm.num_classes();
  const std::size_t side = k * cell;
  std::vector<unsigned char> px(side * side, 255);
  for (std::size_t t = 0; t < k; ++t) {
    std::uint64_t row_total = 0;
    for (std::size_t p = 0; p < k; ++p) row_total += cm.at(t, p);
    for (std::size_t p = 0; p < k; ++p) {
      const double frac = row_total == 0 ? 0.0 : static_cast<double>(cm.at(t, p)) / static_cast<double>(row_total);
      const auto shade = static_cast<unsigned char>(std::lround(255.0 * (1.0 - frac)));
      for (std::size_t y = 1; y + 1 < cell; ++y) {
        for (std::size_t x = 1; x + 1 < cell; ++x) px[(t * cell + y) * side + p * cell + x] = shade;
      }
    }
  }
  write_pgm(path, side, side, px);
}

void plot_jnr_curve(const std::vector<JnrAccuracy>& rows, const fs::path& path) {
  constexpr std::size_t w = 320;
  constexpr std::size_t h = 200;
  constexpr std::size_t margin = 10;
  std::vector<unsigned char> px(w * h, 255);
  auto set = [&](long x, long y, unsigned char v) {
    if (x >= 0 && y >= 0 && x < static_cast<long>(w) && y < static_cast<long>(h)) px[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = v;
  };
  for (std::size_t x = margin; x < w - margin; ++x) {
    set(static_cast<long>(x), static_cast<long>(h - margin), 0);
    set(static_cast<long>(x), static_cast<long>(margin), 160);
  }
  for (std::size_t y = margin; y <= h - margin; ++y) set(static_cast<long>(margin), static_cast<long>(y), 0);
  if (rows.empty()) {
    write_pgm(path, w, h, px);
    return;
  }
  const double lo = rows.front().jnr_db;
  const double hi = rows.back().jnr_db;
  auto to_xy = [&](const JnrAccuracy& r) {
    const double fx = hi > lo ? (r.jnr_db - lo) / (hi - lo) : 0.5;
    const double x = static_cast<double>(margin) + fx * static_cast<double>(w - 2 * margin);
    const double y = static_cast<double>(h - margin) - r.accuracy / 100.0 * static_cast<double>(h - 2 * margin);
    return std::pair<long, long>{std::lround(x), std::lround(y)};
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto [x1, y1] = to_xy(rows[i]);
    for (long dy = -2; dy <= 2; ++dy) {
      for (long dx = -2; dx <= 2; ++dx) set(x1 + dx, y1 + dy, 0);
    }
    if (i + 1 == rows.size()) break;
    const auto [x2, y2] = to_xy(rows[i + 1]);
    const long steps = std::max({std::abs(x2 - x1), std::abs(y2 - y1), 1L});
    for (long s = 0; s <= steps; ++s) {
      set(x1 + (x2 - x1) * s / steps, y1 + (y2 - y1) * s / steps, 64);
    }
  }
  write_pgm(path, w, h, px);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  return 1;
}

}  // namespace jamlab::cli
