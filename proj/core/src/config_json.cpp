#include "jamlab/config_json.hpp"

#include <string>

#include "jamlab/errors.hpp"

namespace jamlab {

void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || k == a;
    if (!known) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

namespace {

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& out, const char* where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace

void to_json(nlohmann::json& j, const SampleClock& c) {
  j = {{"sample_rate_hz", c.sample_rate_hz}, {"num_samples", c.num_samples}};
}

void from_json(const nlohmann::json& j, SampleClock& c) {
  require_known_keys(j, {"sample_rate_hz", "num_samples"}, "clock");
  read_opt(j, "sample_rate_hz", c.sample_rate_hz, "clock");
  read_opt(j, "num_samples", c.num_samples, "clock");
}

void to_json(nlohmann::json& j, WindowKind k) {
  j = k == WindowKind::Hann ? "hann" : k == WindowKind::Hamming ? "hamming" : "rectangular";
}

void from_json(const nlohmann::json& j, WindowKind& k) {
  const auto s = j.get<std::string>();
  if (s == "hann") {
    k = WindowKind::Hann;
  } else if (s == "hamming") {
    k = WindowKind::Hamming;
  } else if (s == "rectangular") {
    k = WindowKind::Rectangular;
  } else {
    throw ConfigError("unknown window '" + s + "' (expected hann, hamming or rectangular)");
  }
}

void to_json(nlohmann::json& j, const WelchConfig& c) {
  j = {{"segment_len", c.segment_len},
       {"overlap_fraction", c.overlap_fraction},
       {"fft_size", c.fft_size},
       {"window", c.window}};
}

void from_json(const nlohmann::json& j, WelchConfig& c) {
  require_known_keys(j, {"segment_len", "overlap_fraction", "fft_size", "window"}, "features.welch");
  read_opt(j, "segment_len", c.segment_len, "features.welch");
  read_opt(j, "overlap_fraction", c.overlap_fraction, "features.welch");
  read_opt(j, "fft_size", c.fft_size, "features.welch");
  read_opt(j, "window", c.window, "features.welch");
}

void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = {{"image_side", c.image_side},
       {"stft_window_continuous", c.stft_window_continuous},
       {"stft_window_burst", c.stft_window_burst},
       {"stft_overlap", c.stft_overlap},
       {"stft_fft_size", c.stft_fft_size},
       {"welch", c.welch},
       {"epsilon", c.epsilon},
       {"dynamic_range_db", c.dynamic_range_db}};
}

void from_json(const nlohmann::json& j, FeatureConfig& c) {
  require_known_keys(j,
                     {"image_side", "stft_window_continuous", "stft_window_burst", "stft_overlap", "stft_fft_size",
                      "welch", "epsilon", "dynamic_range_db"},
                     "features");
  read_opt(j, "image_side", c.image_side, "features");
  read_opt(j, "stft_window_continuous", c.stft_window_continuous, "features");
  read_opt(j, "stft_window_burst", c.stft_window_burst, "features");
  read_opt(j, "stft_overlap", c.stft_overlap, "features");
  read_opt(j, "stft_fft_size", c.stft_fft_size, "features");
  if (j.contains("welch")) from_json(j.at("welch"), c.welch);
  read_opt(j, "epsilon", c.epsilon, "features");
  read_opt(j, "dynamic_range_db", c.dynamic_range_db, "features");
}

void to_json(nlohmann::json& j, const DrawRanges& c) {
  j = {{"stj_carrier_max_hz", c.stj_carrier_max_hz},
       {"mtj_min_tones", c.mtj_min_tones},
       {"mtj_max_tones", c.mtj_max_tones},
       {"mtj_min_spacing_hz", c.mtj_min_spacing_hz},
       {"mtj_max_spacing_hz", c.mtj_max_spacing_hz},
       {"lfm_bandwidth_hz", c.lfm_bandwidth_hz},
       {"lfm_period_s", c.lfm_period_s},
       {"pulse_duty", c.pulse_duty},
       {"pulse_pri_divisor", c.pulse_pri_divisor},
       {"pbnj_min_bw_fraction", c.pbnj_min_bw_fraction},
       {"pbnj_max_bw_fraction", c.pbnj_max_bw_fraction}};
}

void from_json(const nlohmann::json& j, DrawRanges& c) {
  const char* w = "ranges";
  require_known_keys(j,
                     {"stj_carrier_max_hz", "mtj_min_tones", "mtj_max_tones", "mtj_min_spacing_hz",
                      "mtj_max_spacing_hz", "lfm_bandwidth_hz", "lfm_period_s", "pulse_duty", "pulse_pri_divisor",
                      "pbnj_min_bw_fraction", "pbnj_max_bw_fraction"},
                     w);
  read_opt(j, "stj_carrier_max_hz", c.stj_carrier_max_hz, w);
  read_opt(j, "mtj_min_tones", c.mtj_min_tones, w);
  read_opt(j, "mtj_max_tones", c.mtj_max_tones, w);
  read_opt(j, "mtj_min_spacing_hz", c.mtj_min_spacing_hz, w);
  read_opt(j, "mtj_max_spacing_hz", c.mtj_max_spacing_hz, w);
  read_opt(j, "lfm_bandwidth_hz", c.lfm_bandwidth_hz, w);
  read_opt(j, "lfm_period_s", c.lfm_period_s, w);
  read_opt(j, "pulse_duty", c.pulse_duty, w);
  read_opt(j, "pulse_pri_divisor", c.pulse_pri_divisor, w);
  read_opt(j, "pbnj_min_bw_fraction", c.pbnj_min_bw_fraction, w);
  read_opt(j, "pbnj_max_bw_fraction", c.pbnj_max_bw_fraction, w);
}

void to_json(nlohmann::json& j, const DatasetGrid& c) {
  auto classes = nlohmann::json::array();
  for (auto cl : c.classes) classes.push_back(std::string(class_name(cl)));
  j = {{"classes", classes},         {"jnr_min_db", c.jnr_min_db},     {"jnr_max_db", c.jnr_max_db},
       {"jnr_step_db", c.jnr_step_db}, {"realizations", c.realizations}, {"pr_min_db", c.pr_min_db},
       {"pr_max_db", c.pr_max_db}};
}

void from_json(const nlohmann::json& j, DatasetGrid& c) {
  const char* w = "grid";
  require_known_keys(j, {"classes", "jnr_min_db", "jnr_max_db", "jnr_step_db", "realizations", "pr_min_db", "pr_max_db"},
                     w);
  if (j.contains("classes")) {
    std::vector<std::string> names;
    read_opt(j, "classes", names, w);
    c.classes.clear();
    for (const auto& n : names) {
      const auto cl = parse_class_name(n);
      if (!cl) throw ConfigError("grid.classes: unknown class '" + n + "'");
      c.classes.push_back(*cl);
    }
  }
  read_opt(j, "jnr_min_db", c.jnr_min_db, w);
  read_opt(j, "jnr_max_db", c.jnr_max_db, w);
  read_opt(j, "jnr_step_db", c.jnr_step_db, w);
  read_opt(j, "realizations", c.realizations, w);
  read_opt(j, "pr_min_db", c.pr_min_db, w);
  read_opt(j, "pr_max_db", c.pr_max_db, w);
}

void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = {{"clock", c.clock},
       {"grid", c.grid},
       {"features", c.features},
       {"ranges", c.ranges},
       {"master_seed", c.master_seed},
       {"write_features", c.write_features}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
  require_known_keys(j, {"clock", "grid", "features", "ranges", "master_seed", "write_features"}, "generation");
  if (j.contains("clock")) from_json(j.at("clock"), c.clock);
  if (j.contains("grid")) from_json(j.at("grid"), c.grid);
  if (j.contains("features")) from_json(j.at("features"), c.features);
  if (j.contains("ranges")) from_json(j.at("ranges"), c.ranges);
  read_opt(j, "master_seed", c.master_seed, "generation");
  read_opt(j, "write_features", c.write_features, "generation");
}

}  // namespace jamlab
