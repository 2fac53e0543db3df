#pragma once

// File formats: binary checkpoints and CSV datasets.
//
// Checkpoint layout (all integers little-endian):
//   "PLGN" | u32 format version | u32 header byte length | UTF-8 JSON header |
//   parameter blob of f32 values in canonical order
// The JSON header carries the architecture, prior specs and proportions.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "plugen/backbone.hpp"
#include "plugen/error.hpp"
#include "plugen/flow.hpp"
#include "plugen/priors.hpp"
#include "plugen/training.hpp"

namespace plugen {

inline constexpr std::array<char, 4> kCheckpointMagic{'P', 'L', 'G', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw SchemaError("checkpoint: truncated header");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void put_f32(std::ostream& os, double v) {
  const auto f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

inline double get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

inline std::ifstream open_in(const std::filesystem::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(p, mode);
  if (!is) throw MissingFileError("cannot open " + p.string());
  return is;
}

inline std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, mode);
  if (!os) throw MissingFileError("cannot write " + p.string());
  return os;
}

}  // namespace detail

/// Parsed checkpoint: JSON header plus the decoded parameter blob.
struct RawCheckpoint {
  nlohmann::json header;
  Vec params;
};

inline void write_checkpoint(std::ostream& os, const nlohmann::json& header, std::span<const double> params) {
  const std::string text = header.dump();
  os.write(kCheckpointMagic.data(), 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : params) detail::put_f32(os, v);
}

inline RawCheckpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic.data(), 4) != 0)
    throw SchemaError("checkpoint: bad magic bytes");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw SchemaError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t len = detail::get_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw SchemaError("checkpoint: truncated JSON header");
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: malformed JSON header: ") + e.what());
  }
  const auto count = raw.header.value("param_count", std::uint64_t{0});
  raw.params.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) raw.params.push_back(detail::get_f32(is));
  if (is.peek() != std::char_traits<char>::eof()) throw SchemaError("checkpoint: trailing bytes after blob");
  return raw;
}

/// Rounds every parameter to single precision, the checkpoint storage type.
inline void quantize_to_float(NiceFlow& flow) {
  flow.for_each_tensor([](std::span<double> t) {
    for (double& v : t) v = static_cast<double>(static_cast<float>(v));
  });
}

inline void quantize_to_float(Mlp& mlp) {
  mlp.for_each_tensor([](std::span<double> t) {
    for (double& v : t) v = static_cast<double>(static_cast<float>(v));
  });
}

// --- JSON for priors and architecture ---------------------------------------

inline nlohmann::json to_json(const LabelSpec& s) {
  nlohmann::json j{{"kind", label_kind_name(s.kind)}};
  if (s.kind == LabelKind::binary) {
    j.update({{"m0", s.m0}, {"m1", s.m1}, {"p0", s.p0}, {"p1", s.p1}, {"n0", s.n0}, {"n1", s.n1},
              {"imbalance_scaling", s.imbalance_scaling}});
  } else {
    j["kde_support"] = s.kde_support;
  }
  return j;
}

inline LabelKind parse_label_kind(const std::string& s) {
  if (s == "binary") return LabelKind::binary;
  if (s == "continuous") return LabelKind::continuous;
  throw SchemaError("unknown attribute kind '" + s + "'");
}

inline LabelSpec label_spec_from_json(const nlohmann::json& j) {
  LabelSpec s;
  s.kind = parse_label_kind(j.at("kind").get<std::string>());
  if (s.kind == LabelKind::binary) {
    s.m0 = j.at("m0").get<double>();
    s.m1 = j.at("m1").get<double>();
    s.p0 = j.at("p0").get<double>();
    s.p1 = j.at("p1").get<double>();
    s.n0 = j.value("n0", std::int64_t{0});
    s.n1 = j.value("n1", std::int64_t{0});
    s.imbalance_scaling = j.value("imbalance_scaling", true);
  } else {
    s.kde_support = j.at("kde_support").get<Vec>();
  }
  s.validate();
  return s;
}

inline nlohmann::json mlp_descriptor(const Mlp& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) layers.push_back({l.in, l.out});
  return layers;
}

inline Mlp mlp_from_descriptor(const nlohmann::json& layers) {
  std::vector<DenseLayer> ls;
  for (const auto& l : layers) ls.emplace_back(l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>());
  if (ls.empty()) throw SchemaError("checkpoint: empty network descriptor");
  try {
    return Mlp(std::move(ls));
  } catch (const ContractViolation& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

// --- flow checkpoints --------------------------------------------------------

struct FlowCheckpoint {
  NiceFlow flow;
  std::vector<LabelSpec> specs;
  Vec sigma_gen;  // per attribute, the final training sigma
};

inline nlohmann::json flow_header(const FlowCheckpoint& ck) {
  nlohmann::json couplings = nlohmann::json::array();
  for (const auto& c : ck.flow.couplings) {
    std::vector<int> mask;
    for (bool b : c.mask) mask.push_back(b ? 1 : 0);
    couplings.push_back({{"mask", mask}, {"layers", mlp_descriptor(c.conditioner)}});
  }
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& s : ck.specs) specs.push_back(to_json(s));
  return {{"kind", "flow"},
          {"dims", ck.flow.dims},
          {"k_labels", ck.flow.k_labels},
          {"couplings", couplings},
          {"priors", specs},
          {"sigma_gen", ck.sigma_gen},
          {"param_count", ck.flow.param_count()}};
}

inline void save_flow(const std::filesystem::path& path, const FlowCheckpoint& ck) {
  auto os = detail::open_out(path, std::ios::binary);
  write_checkpoint(os, flow_header(ck), ck.flow.flatten());
  if (!os) throw MissingFileError("write failed: " + path.string());
}

inline FlowCheckpoint load_flow(const std::filesystem::path& path) {
  auto is = detail::open_in(path, std::ios::binary);
  const RawCheckpoint raw = read_checkpoint(is);
  const auto& h = raw.header;
  try {
    if (h.at("kind").get<std::string>() != "flow") throw SchemaError("checkpoint: not a flow checkpoint");
    FlowCheckpoint ck;
    ck.flow.dims = h.at("dims").get<std::size_t>();
    ck.flow.k_labels = h.at("k_labels").get<std::size_t>();
    for (const auto& c : h.at("couplings")) {
      std::vector<bool> mask;
      for (int b : c.at("mask").get<std::vector<int>>()) mask.push_back(b != 0);
      CouplingLayer layer;
      layer.mask = std::move(mask);
      layer.index_mask();
      layer.conditioner = mlp_from_descriptor(c.at("layers"));
      ck.flow.couplings.push_back(std::move(layer));
    }
    ck.flow.scaling.log_scale.assign(ck.flow.dims, 0.0);
    ck.flow.validate();
    for (const auto& s : h.at("priors")) ck.specs.push_back(label_spec_from_json(s));
    if (ck.specs.size() != ck.flow.k_labels) throw SchemaError("checkpoint: prior count != K");
    ck.sigma_gen = h.at("sigma_gen").get<Vec>();
    if (raw.params.size() != ck.flow.param_count()) throw SchemaError("checkpoint: parameter blob size mismatch");
    ck.flow.assign(raw.params);
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  } catch (const ContractViolation& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

// --- backbone checkpoints ----------------------------------------------------

inline nlohmann::json to_json(const SyntheticConfig& c) {
  std::vector<std::string> kinds;
  for (auto k : c.kinds) kinds.emplace_back(label_kind_name(k));
  return {{"dims", c.dims},
          {"k_labels", c.k_labels},
          {"obs_dims", c.obs_dims},
          {"seed", c.seed},
          {"attributes", kinds},
          {"positive_rates", c.positive_rates},
          {"continuous_scale", c.continuous_scale},
          {"nonlinearity", c.nonlinearity},
          {"identity_mixing", c.identity_mixing},
          {"identity_observation", c.identity_observation}};
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  c.dims = j.at("dims").get<std::size_t>();
  c.k_labels = j.at("k_labels").get<std::size_t>();
  c.obs_dims = j.at("obs_dims").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& k : j.at("attributes")) c.kinds.push_back(parse_label_kind(k.get<std::string>()));
  c.positive_rates = j.at("positive_rates").get<Vec>();
  c.continuous_scale = j.at("continuous_scale").get<double>();
  c.nonlinearity = j.at("nonlinearity").get<double>();
  c.identity_mixing = j.value("identity_mixing", false);
  c.identity_observation = j.value("identity_observation", false);
  return c;
}

/// The synthetic process is fully determined by its configuration, so its
/// checkpoint is a header with an empty blob.
inline void save_synthetic(const std::filesystem::path& path, const SyntheticConfig& cfg) {
  auto os = detail::open_out(path, std::ios::binary);
  write_checkpoint(os, {{"kind", "synthetic"}, {"synthetic", to_json(cfg)}, {"param_count", 0}}, {});
}

inline void save_autoencoder(const std::filesystem::path& path, const ToyAutoencoder& ae, const SyntheticConfig& truth) {
  Vec params = flatten(ae.encoder, ae.decoder);
  auto os = detail::open_out(path, std::ios::binary);
  write_checkpoint(os,
                   {{"kind", "autoencoder"},
                    {"encoder", mlp_descriptor(ae.encoder)},
                    {"decoder", mlp_descriptor(ae.decoder)},
                    {"synthetic", to_json(truth)},
                    {"param_count", params.size()}},
                   params);
}

struct BackboneCheckpoint {
  std::string kind;           // "synthetic" or "autoencoder"
  SyntheticConfig synthetic;  // the data-generating process (oracle)
  ToyAutoencoder ae;          // only for kind == "autoencoder"
};

inline BackboneCheckpoint load_backbone(const std::filesystem::path& path) {
  auto is = detail::open_in(path, std::ios::binary);
  const RawCheckpoint raw = read_checkpoint(is);
  try {
    BackboneCheckpoint ck;
    ck.kind = raw.header.at("kind").get<std::string>();
    ck.synthetic = synthetic_config_from_json(raw.header.at("synthetic"));
    if (ck.kind == "autoencoder") {
      ck.ae.encoder = mlp_from_descriptor(raw.header.at("encoder"));
      ck.ae.decoder = mlp_from_descriptor(raw.header.at("decoder"));
      if (raw.params.size() != ck.ae.encoder.param_count() + ck.ae.decoder.param_count())
        throw SchemaError("checkpoint: autoencoder blob size mismatch");
      assign(ck.ae.encoder, ck.ae.decoder, raw.params);
      ck.ae.trained = true;
    } else if (ck.kind != "synthetic") {
      throw SchemaError("checkpoint: unknown backbone kind '" + ck.kind + "'");
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

// --- CSV ---------------------------------------------------------------------

/// Shortest decimal that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw SchemaError("csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> column_names(char prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::string(1, prefix) + std::to_string(i));
  return out;
}

namespace detail {

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << cells[i];
  }
  os << '\n';
}

inline void append_numbers(std::vector<std::string>& cells, std::span<const double> v) {
  for (double x : v) cells.push_back(format_number(x));
}

inline void append_labels(std::vector<std::string>& cells, const LabelVector& y) {
  for (const auto& v : y) cells.push_back(v ? format_number(*v) : std::string("?"));
}

/// Counts leading columns named <prefix>0, <prefix>1, ... starting at `from`.
inline std::size_t count_prefixed(const std::vector<std::string_view>& header, std::size_t from, char prefix) {
  std::size_t n = 0;
  while (from + n < header.size() && header[from + n] == std::string(1, prefix) + std::to_string(n)) ++n;
  return n;
}

inline Label parse_label(std::string_view cell, std::size_t line) {
  if (cell == "?") return kMissing;
  return parse_number(cell, line);
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

/// Header z0..z{N-1},y0..y{K-1}; missing labels are written as '?'.
inline void write_latent_csv(std::ostream& os, const LatentDataset& data) {
  std::vector<std::string> header = column_names('z', data.dims);
  for (auto& h : column_names('y', data.k_labels)) header.push_back(h);
  detail::write_row(os, header);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<std::string> cells;
    detail::append_numbers(cells, data.latents[i]);
    detail::append_labels(cells, data.labels[i]);
    detail::write_row(os, cells);
  }
}

inline LatentDataset read_latent_csv(std::istream& is, const std::vector<LabelKind>& kinds) {
  std::string line;
  if (!std::getline(is, line)) throw SchemaError("latent csv: missing header");
  line = detail::strip_cr(line);
  const auto header = split_csv(line);
  const std::size_t n = detail::count_prefixed(header, 0, 'z');
  const std::size_t k = detail::count_prefixed(header, n, 'y');
  if (n == 0 || k == 0 || n + k != header.size()) throw SchemaError("latent csv: header must be z0..z{N-1},y0..y{K-1}");
  if (k != kinds.size())
    throw DimensionError("latent csv: " + std::to_string(k) + " label columns but " + std::to_string(kinds.size()) +
                         " attributes configured");
  LatentDataset data;
  data.dims = n;
  data.k_labels = k;
  data.kinds = kinds;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != n + k) throw SchemaError("latent csv line " + std::to_string(lineno) + ": wrong column count");
    Vec z;
    for (std::size_t i = 0; i < n; ++i) z.push_back(parse_number(cells[i], lineno));
    LabelVector y;
    for (std::size_t i = 0; i < k; ++i) y.push_back(detail::parse_label(cells[n + i], lineno));
    data.latents.push_back(std::move(z));
    data.labels.push_back(std::move(y));
  }
  data.validate();
  return data;
}

/// Observations with ground-truth factors: header x..,t..,y..
inline void write_observation_csv(std::ostream& os, const std::vector<SynthSample>& samples, std::size_t obs_dims,
                                  std::size_t dims, std::size_t k) {
  std::vector<std::string> header = column_names('x', obs_dims);
  for (auto& h : column_names('t', dims)) header.push_back(h);
  for (auto& h : column_names('y', k)) header.push_back(h);
  detail::write_row(os, header);
  for (const auto& s : samples) {
    std::vector<std::string> cells;
    detail::append_numbers(cells, s.x);
    detail::append_numbers(cells, s.t);
    detail::append_labels(cells, s.y);
    detail::write_row(os, cells);
  }
}

inline std::vector<SynthSample> read_observation_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw SchemaError("observation csv: missing header");
  line = detail::strip_cr(line);
  const auto header = split_csv(line);
  const std::size_t nx = detail::count_prefixed(header, 0, 'x');
  const std::size_t nt = detail::count_prefixed(header, nx, 't');
  const std::size_t ny = detail::count_prefixed(header, nx + nt, 'y');
  if (nx == 0 || nx + nt + ny != header.size()) throw SchemaError("observation csv: header must be x..,t..,y..");
  std::vector<SynthSample> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw SchemaError("observation csv line " + std::to_string(lineno) + ": wrong column count");
    SynthSample s;
    for (std::size_t i = 0; i < nx; ++i) s.x.push_back(parse_number(cells[i], lineno));
    for (std::size_t i = 0; i < nt; ++i) s.t.push_back(parse_number(cells[nx + i], lineno));
    for (std::size_t i = 0; i < ny; ++i) s.y.push_back(detail::parse_label(cells[nx + nt + i], lineno));
    out.push_back(std::move(s));
  }
  return out;
}

/// Sample rows: optional leading columns, then x..,z..,c..,s..
struct SampleCsvWriter {
  std::ostream& os;
  std::vector<std::string> lead;

  void header(std::size_t obs_dims, std::size_t dims, std::size_t k) {
    std::vector<std::string> h = lead;
    for (auto& c : column_names('x', obs_dims)) h.push_back(c);
    for (auto& c : column_names('z', dims)) h.push_back(c);
    for (auto& c : column_names('c', k)) h.push_back(c);
    for (auto& c : column_names('s', dims - k)) h.push_back(c);
    detail::write_row(os, h);
  }

  void row(const std::vector<std::string>& lead_cells, const Vec& x, const Vec& z, const Vec& c, const Vec& s) {
    std::vector<std::string> cells = lead_cells;
    detail::append_numbers(cells, x);
    detail::append_numbers(cells, z);
    detail::append_numbers(cells, c);
    detail::append_numbers(cells, s);
    detail::write_row(os, cells);
  }
};

inline void write_history(std::ostream& os, const std::vector<EpochRecord>& history) {
  for (const auto& r : history)
    os << nlohmann::json{{"epoch", r.epoch}, {"sigma_t", r.sigma_t}, {"mean_nll", r.mean_nll}}.dump() << '\n';
}

}  // namespace plugen
