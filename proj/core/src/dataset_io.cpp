#include "jamlab/dataset_io.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "jamlab/config_json.hpp"
#include "jamlab/errors.hpp"
#include "jamlab/rng.hpp"

namespace jamlab {

namespace {

constexpr char kTensorMagic[4] = {'J', 'L', 'T', '1'};
constexpr char kCheckpointMagic[4] = {'J', 'L', 'C', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr const char* kIncompleteMarker = ".incomplete";

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
}

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    v = byteswap_if_big(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  template <typename U>
  void put_array(std::span<const U> values) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const char*>(values.data());
      bytes_.insert(bytes_.end(), p, p + values.size_bytes());
    } else {
      for (U v : values) put(v);
    }
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::span<const char> bytes() const { return bytes_; }
  void reserve(std::size_t n) { bytes_.reserve(n); }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string data, fs::path origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return byteswap_if_big(v);
  }
  template <typename U>
  void get_array(std::span<U> out, const char* field) {
    need(out.size_bytes(), field);
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
    if constexpr (std::endian::native != std::endian::little) {
      for (U& v : out) v = byteswap_if_big(v);
    }
  }
  std::string get_bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void corrupt(const std::string& what) const {
    throw CorruptFileError(origin_.string() + ": " + what);
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) corrupt(std::string("truncated while reading ") + field);
  }

  std::string data_;
  fs::path origin_;
  std::size_t pos_ = 0;
};

std::string read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return ss.str();
}

template <typename T>
void write_tensor_impl(const fs::path& path, std::span<const T> values, const std::vector<std::uint64_t>& dims,
                       DType dtype) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  if (n != values.size()) {
    throw std::invalid_argument("write_tensor: " + std::to_string(values.size()) + " values for " +
                                std::to_string(n) + "-element dims");
  }
  ByteWriter w;
  w.reserve(12 + dims.size() * 8 + values.size_bytes());
  w.put_bytes(std::string_view(kTensorMagic, 4));
  w.put(static_cast<std::uint32_t>(dtype));
  w.put(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.put(d);
  w.put_array(values);
  write_file_atomic(path, w.bytes());
}

TensorHeader parse_tensor_header(ByteReader& r) {
  if (r.get_bytes(4, "magic") != std::string_view(kTensorMagic, 4)) r.corrupt("bad magic (expected JLT1)");
  TensorHeader h;
  const auto dtype = r.get<std::uint32_t>("dtype");
  if (dtype != static_cast<std::uint32_t>(DType::Float32) && dtype != static_cast<std::uint32_t>(DType::Float64)) {
    r.corrupt("unknown dtype code " + std::to_string(dtype));
  }
  h.dtype = static_cast<DType>(dtype);
  const auto rank = r.get<std::uint32_t>("rank");
  if (rank > 16) r.corrupt("implausible rank " + std::to_string(rank));
  for (std::uint32_t i = 0; i < rank; ++i) h.dims.push_back(r.get<std::uint64_t>("dims"));
  return h;
}

std::size_t dtype_size(DType d) { return d == DType::Float32 ? 4 : 8; }

template <typename T>
void read_payload(ByteReader& r, DType dtype, std::span<T> out) {
  if (dtype == DType::Float32) {
    if constexpr (std::is_same_v<T, float>) {
      r.get_array(out, "payload");
    } else {
      std::vector<float> tmp(out.size());
      r.get_array(std::span<float>(tmp), "payload");
      std::copy(tmp.begin(), tmp.end(), out.begin());
    }
  } else {
    if constexpr (std::is_same_v<T, double>) {
      r.get_array(out, "payload");
    } else {
      std::vector<double> tmp(out.size());
      r.get_array(std::span<double>(tmp), "payload");
      std::transform(tmp.begin(), tmp.end(), out.begin(), [](double v) { return static_cast<T>(v); });
    }
  }
}

std::string sample_id_for(CompoundClass c, std::size_t jnr_index, std::size_t realization) {
  std::ostringstream os;
  os << class_name(c) << "_j" << std::setw(3) << std::setfill('0') << jnr_index << "_r" << std::setw(6)
     << realization;
  return os.str();
}

nlohmann::json record_to_json(const SampleRecord& r) {
  return {{"sample_id", r.sample_id},
          {"class", std::string(class_name(r.class_label))},
          {"label", class_index(r.class_label)},
          {"jnr_index", r.jnr_index},
          {"realization", r.realization},
          {"jnr_db", r.jnr_db},
          {"pr_db", r.pr_db},
          {"sample_seed", r.sample_seed},
          {"stft_window_len", r.stft_window_len},
          {"signal", r.signal_path},
          {"tfi", r.tfi_path},
          {"psd", r.psd_path}};
}

SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  const auto cls = parse_class_name(j.at("class").get<std::string>());
  if (!cls) throw std::invalid_argument("unknown class '" + j.at("class").get<std::string>() + "'");
  r.class_label = *cls;
  r.jnr_index = j.at("jnr_index").get<std::size_t>();
  r.realization = j.at("realization").get<std::size_t>();
  r.jnr_db = j.at("jnr_db").get<double>();
  r.pr_db = j.at("pr_db").get<double>();
  r.sample_seed = j.at("sample_seed").get<std::uint64_t>();
  r.stft_window_len = j.at("stft_window_len").get<std::size_t>();
  r.signal_path = j.at("signal").get<std::string>();
  r.tfi_path = j.value("tfi", std::string());
  r.psd_path = j.value("psd", std::string());
  return r;
}

bool tensor_file_ok(const fs::path& path, std::uint64_t side) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return false;
  try {
    const auto h = read_tensor_header(path);
    return h.dtype == DType::Float32 && h.dims == std::vector<std::uint64_t>{side, side} &&
           fs::file_size(path) == 12 + 16 + side * side * 4;
  } catch (const std::exception&) {
    return false;
  }
}

bool signal_file_ok(const fs::path& path, std::size_t n) {
  std::error_code ec;
  return fs::exists(path, ec) && fs::file_size(path, ec) == n * 8;
}

/// Runs fn(i) for i in [0, count) on up to `jobs` threads; rethrows the first failure.
template <typename F>
void parallel_for(std::size_t count, std::size_t jobs, F&& fn, const ProgressFn& progress) {
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
        break;
      }
      const std::size_t d = done.fetch_add(1) + 1;
      if (progress) {
        std::lock_guard lock(mu);
        progress(d, count);
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

void write_feature_files(const fs::path& root, SampleRecord& rec, const ComplexSignal& stored,
                         const FeatureConfig& features) {
  const auto pair = featurize(stored, features, rec.stft_window_len);
  const std::string base = std::string(class_name(rec.class_label)) + "/" + rec.sample_id;
  rec.tfi_path = base + ".tfi.jlt";
  rec.psd_path = base + ".psd.jlt";
  const std::vector<std::uint64_t> dims{features.image_side, features.image_side};
  write_tensor(root / rec.tfi_path, std::span<const float>(pair.tfi.pixels), dims);
  write_tensor(root / rec.psd_path, std::span<const float>(pair.psd.pixels), dims);
}

}  // namespace

std::uint64_t TensorHeader::numel() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_file_atomic(const fs::path& path, std::span<const char> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure on '" + tmp.string() + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_text_file(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::string read_text_file(const fs::path& path) { return read_binary(path); }

void write_tensor(const fs::path& path, std::span<const float> values, const std::vector<std::uint64_t>& dims) {
  write_tensor_impl(path, values, dims, DType::Float32);
}

void write_tensor(const fs::path& path, std::span<const double> values, const std::vector<std::uint64_t>& dims) {
  write_tensor_impl(path, values, dims, DType::Float64);
}

TensorHeader read_tensor_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string head(12, '\0');
  in.read(head.data(), 12);
  head.resize(static_cast<std::size_t>(in.gcount()));
  ByteReader r(head, path);
  if (r.get_bytes(4, "magic") != std::string_view(kTensorMagic, 4)) r.corrupt("bad magic (expected JLT1)");
  r.get<std::uint32_t>("dtype");
  const auto rank = r.get<std::uint32_t>("rank");
  if (rank > 16) r.corrupt("implausible rank " + std::to_string(rank));
  std::string rest(rank * 8, '\0');
  in.read(rest.data(), static_cast<std::streamsize>(rest.size()));
  rest.resize(static_cast<std::size_t>(in.gcount()));
  ByteReader full(head + rest, path);
  return parse_tensor_header(full);
}

template <typename T>
std::vector<T> read_tensor(const fs::path& path, TensorHeader* header) {
  ByteReader r(read_binary(path), path);
  const TensorHeader h = parse_tensor_header(r);
  const std::uint64_t n = h.numel();
  if (r.remaining() != n * dtype_size(h.dtype)) {
    r.corrupt("payload is " + std::to_string(r.remaining()) + " bytes, dims imply " +
              std::to_string(n * dtype_size(h.dtype)));
  }
  std::vector<T> out(n);
  read_payload(r, h.dtype, std::span<T>(out));
  if (header != nullptr) *header = h;
  return out;
}

template std::vector<float> read_tensor(const fs::path&, TensorHeader*);
template std::vector<double> read_tensor(const fs::path&, TensorHeader*);

void write_signal(const fs::path& path, const ComplexSignal& signal) {
  std::vector<float> iq(signal.size() * 2);
  for (std::size_t i = 0; i < signal.size(); ++i) {
    iq[2 * i] = static_cast<float>(signal.samples[i].real());
    iq[2 * i + 1] = static_cast<float>(signal.samples[i].imag());
  }
  ByteWriter w;
  w.put_array(std::span<const float>(iq));
  write_file_atomic(path, w.bytes());
}

ComplexSignal read_signal(const fs::path& path, SampleClock clock) {
  ByteReader r(read_binary(path), path);
  if (r.remaining() % 8 != 0) {
    r.corrupt("size " + std::to_string(r.remaining()) + " is not a whole number of cf32 pairs");
  }
  const std::size_t n = r.remaining() / 8;
  if (clock.num_samples != 0 && clock.num_samples != n) {
    r.corrupt("holds " + std::to_string(n) + " samples, expected " + std::to_string(clock.num_samples));
  }
  std::vector<float> iq(2 * n);
  r.get_array(std::span<float>(iq), "samples");
  ComplexSignal s;
  clock.num_samples = n;
  s.clock = clock;
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.samples[i] = Complex(iq[2 * i], iq[2 * i + 1]);
  return s;
}

ComplexSignal quantize_cf32(const ComplexSignal& signal) {
  ComplexSignal q = signal;
  for (auto& v : q.samples) v = Complex(static_cast<float>(v.real()), static_cast<float>(v.imag()));
  return q;
}

std::vector<CompoundClass> DatasetGrid::effective_classes() const {
  if (!classes.empty()) return classes;
  const auto all = all_classes();
  return {all.begin(), all.end()};
}

std::vector<double> DatasetGrid::jnr_levels() const {
  validate();
  std::vector<double> out;
  const auto count = static_cast<std::size_t>(std::floor((jnr_max_db - jnr_min_db) / jnr_step_db + 1e-9)) + 1;
  for (std::size_t i = 0; i < count; ++i) out.push_back(jnr_min_db + static_cast<double>(i) * jnr_step_db);
  return out;
}

std::size_t DatasetGrid::cell_count() const {
  return effective_classes().size() * jnr_levels().size() * realizations;
}

void DatasetGrid::validate() const {
  if (!(jnr_step_db > 0.0)) throw ConfigError("grid.jnr_step_db must be positive");
  if (!std::isfinite(jnr_min_db) || !std::isfinite(jnr_max_db)) throw ConfigError("grid JNR bounds must be finite");
  if (!(jnr_max_db >= jnr_min_db)) throw ConfigError("grid.jnr_max_db must not be below jnr_min_db");
  if (realizations == 0) throw ConfigError("grid.realizations must be positive");
  if (!(pr_max_db >= pr_min_db)) throw ConfigError("grid.pr_max_db must not be below pr_min_db");
  std::vector<CompoundClass> seen;
  for (auto c : classes) {
    if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
      throw ConfigError("grid.classes lists " + std::string(class_name(c)) + " twice");
    }
    seen.push_back(c);
  }
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::string text = nlohmann::json{{"format", "jamlab-manifest"},
                                    {"version", Manifest::kSchemaVersion},
                                    {"config", manifest.config},
                                    {"records", manifest.records.size()}}
                         .dump();
  text += '\n';
  for (const auto& r : manifest.records) {
    text += record_to_json(r).dump();
    text += '\n';
  }
  write_text_file(path, text);
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw CorruptFileError(path.string() + ": empty manifest");
  Manifest m;
  std::size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "jamlab-manifest") {
      throw CorruptFileError(path.string() + ": header field 'format' is not jamlab-manifest");
    }
    if (header.value("version", 0) != Manifest::kSchemaVersion) {
      throw CorruptFileError(path.string() + ": unsupported manifest version " +
                             std::to_string(header.value("version", 0)));
    }
    m.config = header.at("config");
    expected = header.at("records").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(path.string() + ": bad manifest header: " + e.what());
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw CorruptFileError(path.string() + ":" + std::to_string(lineno) + ": bad record: " + e.what());
    }
  }
  if (m.records.size() != expected) {
    throw CorruptFileError(path.string() + ": header promises " + std::to_string(expected) + " records, found " +
                           std::to_string(m.records.size()));
  }
  return m;
}

SynthesizedSample synthesize_cell(const GenerationConfig& cfg, std::size_t class_pos, std::size_t jnr_index,
                                  std::size_t realization) {
  const auto classes = cfg.grid.effective_classes();
  const auto levels = cfg.grid.jnr_levels();
  if (class_pos >= classes.size() || jnr_index >= levels.size() || realization >= cfg.grid.realizations) {
    throw std::out_of_range("synthesize_cell: cell outside the grid");
  }
  const CompoundClass c = classes[class_pos];
  SynthesizedSample s;
  SampleRecord& r = s.record;
  r.class_label = c;
  r.jnr_index = jnr_index;
  r.realization = realization;
  r.jnr_db = levels[jnr_index];
  r.sample_seed = sample_seed(cfg.master_seed, class_index(c), jnr_index, realization);
  r.sample_id = sample_id_for(c, jnr_index, realization);
  r.stft_window_len = cfg.features.window_for(c);
  r.signal_path = std::string(class_name(c)) + "/" + r.sample_id + ".cf32";

  RandomStream rng(r.sample_seed);
  s.spec = draw_compound(c, cfg.grid.pr_min_db, cfg.grid.pr_max_db, cfg.clock, rng, cfg.ranges);
  r.pr_db = s.spec.power_ratio_db;
  const auto jam = mix_compound(s.spec, cfg.clock, rng);
  s.signal = add_awgn(jam, NoiseSpec{r.jnr_db}, rng);
  return s;
}

Manifest generate_dataset(const GenerationConfig& cfg, const fs::path& out_dir, std::size_t jobs,
                          const ProgressFn& progress) {
  cfg.clock.validate();
  cfg.grid.validate();
  const nlohmann::json snapshot = cfg;
  const fs::path manifest_path = out_dir / kManifestName;
  const fs::path marker = out_dir / kIncompleteMarker;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  if (fs::exists(marker)) {
    const auto previous = nlohmann::json::parse(read_text_file(marker), nullptr, false);
    if (previous != snapshot) {
      throw ConfigError("'" + out_dir.string() + "' holds a partial dataset generated with a different config");
    }
  } else if (fs::exists(manifest_path)) {
    const auto existing = read_manifest(manifest_path);
    if (existing.config != snapshot) {
      throw ConfigError("'" + out_dir.string() + "' already holds a dataset generated with a different config");
    }
  }
  write_text_file(marker, snapshot.dump());

  const auto classes = cfg.grid.effective_classes();
  for (auto c : classes) fs::create_directories(out_dir / std::string(class_name(c)), ec);
  const std::size_t n_jnr = cfg.grid.jnr_levels().size();
  const std::size_t n_real = cfg.grid.realizations;
  const std::size_t total = classes.size() * n_jnr * n_real;

  Manifest manifest;
  manifest.config = snapshot;
  manifest.records.resize(total);
  parallel_for(
      total, jobs,
      [&](std::size_t i) {
        const std::size_t class_pos = i / (n_jnr * n_real);
        const std::size_t jnr_index = (i / n_real) % n_jnr;
        const std::size_t realization = i % n_real;
        auto sample = synthesize_cell(cfg, class_pos, jnr_index, realization);
        SampleRecord& rec = sample.record;
        const std::string base = std::string(class_name(rec.class_label)) + "/" + rec.sample_id;
        const bool have_signal = signal_file_ok(out_dir / rec.signal_path, cfg.clock.num_samples);
        const bool have_features = tensor_file_ok(out_dir / (base + ".tfi.jlt"), cfg.features.image_side) &&
                                   tensor_file_ok(out_dir / (base + ".psd.jlt"), cfg.features.image_side);
        const auto stored = quantize_cf32(sample.signal);
        if (!have_signal) write_signal(out_dir / rec.signal_path, stored);
        if (cfg.write_features) {
          if (have_features) {
            rec.tfi_path = base + ".tfi.jlt";
            rec.psd_path = base + ".psd.jlt";
          } else {
            write_feature_files(out_dir, rec, stored, cfg.features);
          }
        }
        manifest.records[i] = std::move(rec);
      },
      progress);

  write_manifest(manifest_path, manifest);
  fs::remove(marker, ec);
  return manifest;
}

Manifest featurize_dataset(const fs::path& dataset_dir, const FeatureConfig& features, std::size_t jobs,
                           const ProgressFn& progress) {
  Manifest manifest = read_manifest(dataset_dir / kManifestName);
  GenerationConfig gen;
  try {
    from_json(manifest.config, gen);
  } catch (const ConfigError& e) {
    throw CorruptFileError((dataset_dir / kManifestName).string() + ": config snapshot: " + e.what());
  }
  gen.features = features;
  gen.write_features = true;
  parallel_for(
      manifest.records.size(), jobs,
      [&](std::size_t i) {
        SampleRecord& rec = manifest.records[i];
        rec.stft_window_len = features.window_for(rec.class_label);
        const auto stored = read_signal(dataset_dir / rec.signal_path, gen.clock);
        write_feature_files(dataset_dir, rec, stored, features);
      },
      progress);
  manifest.config = gen;
  write_manifest(dataset_dir / kManifestName, manifest);
  return manifest;
}

FeatureDataset load_features(const fs::path& dataset_dir, const Manifest& manifest) {
  FeatureDataset data;
  for (const auto& rec : manifest.records) {
    if (rec.tfi_path.empty() || rec.psd_path.empty()) {
      throw IoError("record " + rec.sample_id + " has no feature images; run featurize first");
    }
    TensorHeader ht;
    TensorHeader hp;
    const auto tfi = read_tensor<float>(dataset_dir / rec.tfi_path, &ht);
    const auto psd = read_tensor<float>(dataset_dir / rec.psd_path, &hp);
    if (ht.dims.size() != 2 || ht.dims[0] != ht.dims[1] || hp.dims != ht.dims) {
      throw CorruptFileError(rec.sample_id + ": feature images are not matching square 2-D tensors");
    }
    if (data.side == 0) data.side = ht.dims[0];
    if (data.side != ht.dims[0]) {
      throw CorruptFileError(rec.sample_id + ": image side " + std::to_string(ht.dims[0]) + " differs from " +
                             std::to_string(data.side));
    }
    data.append(tfi, psd, class_index(rec.class_label), rec.jnr_db);
  }
  return data;
}

namespace {

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}

nlohmann::json parse_checkpoint_header(ByteReader& r) {
  if (r.get_bytes(4, "magic") != std::string_view(kCheckpointMagic, 4)) r.corrupt("bad magic (expected JLC1)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.corrupt("unsupported checkpoint version " + std::to_string(version));
  const auto len = r.get<std::uint64_t>("header length");
  if (len > r.remaining()) r.corrupt("header length exceeds file size");
  auto header = nlohmann::json::parse(r.get_bytes(len, "header"), nullptr, false);
  if (header.is_discarded() || !header.is_object()) r.corrupt("header is not valid JSON");
  if (header.value("format", "") != "jamlab-checkpoint") r.corrupt("header field 'format' mismatch");
  return header;
}

}  // namespace

template <typename T>
void save_checkpoint(const nn::Skanet<T>& model, const fs::path& path, const nlohmann::json& extra) {
  const auto state = model.state();
  auto index = nlohmann::json::array();
  std::size_t payload = 0;
  for (const auto& t : state) {
    index.push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
    payload += t.tensor.numel() * sizeof(T);
  }
  const nlohmann::json header{{"format", "jamlab-checkpoint"},
                              {"dtype", dtype_name<T>()},
                              {"fused", model.is_fused()},
                              {"model", model.config()},
                              {"tensors", index},
                              {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  const std::string text = header.dump();
  ByteWriter w;
  w.reserve(16 + text.size() + payload);
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(text.size()));
  w.put_bytes(text);
  for (const auto& t : state) w.put_array(t.tensor.values());
  write_file_atomic(path, w.bytes());
}

nlohmann::json read_checkpoint_header(const fs::path& path) {
  ByteReader r(read_binary(path), path);
  return parse_checkpoint_header(r);
}

template <typename T>
nn::Skanet<T> load_checkpoint(const fs::path& path, nlohmann::json* extra) {
  ByteReader r(read_binary(path), path);
  const auto header = parse_checkpoint_header(r);
  nn::ModelConfig cfg;
  DType dtype = DType::Float32;
  try {
    from_json(header.at("model"), cfg);
    const auto dt = header.at("dtype").get<std::string>();
    if (dt == "float64") {
      dtype = DType::Float64;
    } else if (dt != "float32") {
      r.corrupt("unknown dtype '" + dt + "'");
    }
  } catch (const CorruptFileError&) {
    throw;
  } catch (const std::exception& e) {
    r.corrupt(std::string("bad header: ") + e.what());
  }
  nn::Skanet<T> model(cfg, std::uint64_t{0});
  if (header.value("fused", false)) model.adopt_fused_layout();
  const auto state = model.state();
  std::map<std::string, nn::Tensor<T>> by_name;
  for (const auto& t : state) by_name.emplace(t.name, t.tensor);
  const auto& index = header.at("tensors");
  if (index.size() != state.size()) {
    r.corrupt("holds " + std::to_string(index.size()) + " tensors, the configured model has " +
              std::to_string(state.size()));
  }
  for (const auto& entry : index) {
    const auto name = entry.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end()) r.corrupt("tensor '" + name + "' does not exist in the configured model");
    nn::Tensor<T> t = it->second;
    const auto shape = entry.at("shape").get<nn::Shape>();
    if (shape != t.shape()) {
      r.corrupt("tensor '" + name + "' has shape " + nn::shape_str(shape) + ", model expects " +
                nn::shape_str(t.shape()));
    }
    read_payload(r, dtype, t.mutable_values());
  }
  if (r.remaining() != 0) r.corrupt(std::to_string(r.remaining()) + " trailing bytes after the last tensor");
  if (extra != nullptr) *extra = header.value("extra", nlohmann::json::object());
  return model;
}

template void save_checkpoint(const nn::Skanet<float>&, const fs::path&, const nlohmann::json&);
template void save_checkpoint(const nn::Skanet<double>&, const fs::path&, const nlohmann::json&);
template nn::Skanet<float> load_checkpoint(const fs::path&, nlohmann::json*);
template nn::Skanet<double> load_checkpoint(const fs::path&, nlohmann::json*);

}  // namespace jamlab
