#include "jamlab/run_config.hpp"

#include "jamlab/config_json.hpp"
#include "jamlab/errors.hpp"

namespace jamlab {

std::string_view scale_name(Scale s) { return s == Scale::Paper ? "paper" : "desk"; }

Scale parse_scale(std::string_view name) {
  if (name == "paper") return Scale::Paper;
  if (name == "desk") return Scale::Desk;
  throw ConfigError("unknown scale '" + std::string(name) + "' (expected paper or desk)");
}

RunConfig RunConfig::defaults(Scale scale) {
  RunConfig c;
  c.scale = scale;
  if (scale == Scale::Desk) {
    c.generation.features.image_side = 64;
    c.generation.grid.jnr_min_db = 0.0;
    c.generation.grid.jnr_max_db = 10.0;
    c.generation.grid.jnr_step_db = 10.0;
    c.generation.grid.realizations = 100;
    c.model = nn::ModelConfig::desk();
    c.train.epochs = 20;
    c.train.monte_carlo_runs = 1;
  }
  return c;
}

void RunConfig::validate() const {
  generation.clock.validate();
  generation.grid.validate();
  generation.features.welch.validate(generation.clock.num_samples);
  model.validate();
  train.validate();
  if (model.input_side != generation.features.image_side) {
    throw ConfigError("model.input_side (" + std::to_string(model.input_side) + ") differs from features.image_side (" +
                      std::to_string(generation.features.image_side) + ")");
  }
  if (jobs == 0) throw ConfigError("jobs must be positive");
}

namespace {

nlohmann::json layer_to_json(const LayerSpec& l) {
  if (const auto* c = std::get_if<ConvLayerSpec>(&l)) {
    return {{"type", "conv"},
            {"name", c->name},
            {"c_in", c->c_in},
            {"c_out", c->c_out},
            {"kernel", {c->kh, c->kw}},
            {"stride", c->opt.stride},
            {"padding", {c->opt.pad_h, c->opt.pad_w}},
            {"dilation", c->opt.dilation}};
  }
  const auto& ln = std::get<LinearLayerSpec>(l);
  return {{"type", "linear"}, {"name", ln.name}, {"n_in", ln.n_in}, {"n_out", ln.n_out}};
}

LayerSpec layer_from_json(const nlohmann::json& j, std::size_t pos) {
  const std::string where = "flops.layers[" + std::to_string(pos) + "]";
  const auto type = j.value("type", std::string());
  if (type == "conv") {
    require_known_keys(j, {"type", "name", "c_in", "c_out", "kernel", "stride", "padding", "dilation"}, where.c_str());
    ConvLayerSpec c;
    c.name = j.value("name", "conv" + std::to_string(pos + 1));
    c.c_in = j.at("c_in").get<std::size_t>();
    c.c_out = j.at("c_out").get<std::size_t>();
    const auto k = j.value("kernel", std::vector<std::size_t>{3, 3});
    if (k.size() != 2) throw ConfigError(where + ".kernel must be [kh, kw]");
    c.kh = k[0];
    c.kw = k[1];
    c.opt.stride = j.value("stride", std::size_t{1});
    const auto p = j.value("padding", std::vector<std::size_t>{0, 0});
    if (p.size() != 2) throw ConfigError(where + ".padding must be [ph, pw]");
    c.opt.pad_h = p[0];
    c.opt.pad_w = p[1];
    c.opt.dilation = j.value("dilation", std::size_t{1});
    return c;
  }
  if (type == "linear") {
    require_known_keys(j, {"type", "name", "n_in", "n_out"}, where.c_str());
    LinearLayerSpec ln;
    ln.name = j.value("name", "linear" + std::to_string(pos + 1));
    ln.n_in = j.at("n_in").get<std::size_t>();
    ln.n_out = j.at("n_out").get<std::size_t>();
    return ln;
  }
  throw ConfigError(where + ".type must be conv or linear");
}

void apply_set(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  auto value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json::json_pointer ptr;
  std::size_t start = 0;
  while (start <= key.size()) {
    const auto dot = key.find('.', start);
    ptr /= key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (!root.contains(ptr.parent_pointer()) || !root.at(ptr.parent_pointer()).is_object()) {
    throw ConfigError("--set: '" + key + "' does not name a config field");
  }
  root[ptr] = value;
}

}  // namespace

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json train = c.train;
  train.erase("master_seed");
  j = {{"scale", std::string(scale_name(c.scale))},
       {"seed", c.seed},
       {"jobs", c.jobs},
       {"clock", c.generation.clock},
       {"grid", c.generation.grid},
       {"features", c.generation.features},
       {"ranges", c.generation.ranges},
       {"write_features", c.generation.write_features},
       {"model", c.model},
       {"train", train}};
  if (c.flops) {
    auto layers = nlohmann::json::array();
    for (const auto& l : c.flops->layers) layers.push_back(layer_to_json(l));
    j["flops"] = {{"input", {c.flops->c, c.flops->h, c.flops->w}}, {"layers", layers}};
  }
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  require_known_keys(j,
                     {"scale", "seed", "jobs", "clock", "grid", "features", "ranges", "write_features", "model",
                      "train", "flops"},
                     "config");
  try {
    if (j.contains("scale")) c.scale = parse_scale(j.at("scale").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("jobs")) c.jobs = j.at("jobs").get<std::size_t>();
    if (j.contains("clock")) from_json(j.at("clock"), c.generation.clock);
    if (j.contains("grid")) from_json(j.at("grid"), c.generation.grid);
    if (j.contains("features")) from_json(j.at("features"), c.generation.features);
    if (j.contains("ranges")) from_json(j.at("ranges"), c.generation.ranges);
    if (j.contains("write_features")) c.generation.write_features = j.at("write_features").get<bool>();
    if (j.contains("model")) nn::from_json(j.at("model"), c.model);
    if (j.contains("train")) {
      if (j.at("train").contains("master_seed")) throw ConfigError("train.master_seed is set through the top-level seed");
      from_json(j.at("train"), c.train);
    }
    if (j.contains("flops") && !j.at("flops").is_null()) {
      const auto& f = j.at("flops");
      require_known_keys(f, {"input", "layers"}, "flops");
      FlopsSpec spec;
      const auto in = f.value("input", std::vector<std::size_t>{1, 1, 1});
      if (in.size() != 3) throw ConfigError("flops.input must be [C, H, W]");
      spec.c = in[0];
      spec.h = in[1];
      spec.w = in[2];
      const auto& layers = f.at("layers");
      for (std::size_t i = 0; i < layers.size(); ++i) spec.layers.push_back(layer_from_json(layers[i], i));
      c.flops = spec;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.generation.master_seed = c.seed;
  c.train.master_seed = c.seed;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& overrides) {
  nlohmann::json from_file = nlohmann::json::object();
  if (file) {
    const auto text = read_text_file(*file);
    from_file = nlohmann::json::parse(text, nullptr, false);
    if (from_file.is_discarded() || !from_file.is_object()) {
      throw ConfigError("'" + file->string() + "' is not a JSON object");
    }
  }
  Scale scale = Scale::Paper;
  if (overrides.scale) {
    scale = *overrides.scale;
  } else if (from_file.contains("scale")) {
    if (!from_file.at("scale").is_string()) throw ConfigError("scale must be a string");
    scale = parse_scale(from_file.at("scale").get<std::string>());
  }
  nlohmann::json merged = RunConfig::defaults(scale);
  merged.merge_patch(from_file);
  merged["scale"] = std::string(scale_name(scale));
  for (const auto& s : overrides.sets) apply_set(merged, s);
  if (overrides.seed) merged["seed"] = *overrides.seed;
  if (overrides.jobs) merged["jobs"] = *overrides.jobs;
  RunConfig cfg;
  from_json(merged, cfg);
  cfg.validate();
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  write_text_file(dir / "effective_config.json", nlohmann::json(cfg).dump(2) + "\n");
}

}  // namespace jamlab
