#include "geostack/store.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace geostack {

namespace {

constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kFlagAnchorsNormalized = 1u;

class Writer {
 public:
  void raw(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const char*>(data);
    buf_.insert(buf_.end(), bytes, bytes + size);
  }
  void magic(const char m[4]) { raw(m, 4); }
  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }
  void matrix_rowmajor(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        f64(m(i, j));
      }
    }
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  void raw(void* out, std::size_t size) {
    if (pos_ + size > buf_.size()) {
      throw StoreError(StoreErrc::truncated_payload,
                       "file payload is shorter than its header declares");
    }
    std::memcpy(out, buf_.data() + pos_, size);
    pos_ += size;
  }
  void expect_magic(const char m[4], const char* what) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, m, 4) != 0) {
      throw StoreError(StoreErrc::bad_magic,
                       std::string(what) + ": bad magic");
    }
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof(v));
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof(v));
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof(v));
    return v;
  }
  Eigen::MatrixXd matrix_rowmajor(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        m(i, j) = f64();
      }
    }
    return m;
  }
  std::string str() {
    const std::uint32_t len = u32();
    std::string s(len, '\0');
    raw(s.data(), len);
    return s;
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw StoreError(StoreErrc::io, "cannot open " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw StoreError(StoreErrc::io, "read failure on " + path.string());
  }
  return bytes;
}

// Write-to-temp-then-rename so readers never observe partial files.
void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw StoreError(StoreErrc::io, "cannot write " + tmp.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw StoreError(StoreErrc::io, "write failure on " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw StoreError(StoreErrc::io,
                     "rename to " + path.string() + " failed: " + ec.message());
  }
}

void check_version(std::uint32_t version, const char* what) {
  if (version != kFormatVersion) {
    throw StoreError(StoreErrc::version_mismatch,
                     std::string(what) + ": unsupported format version " +
                         std::to_string(version));
  }
}

}  // namespace

void save_dataset(const EmbeddingDataset& data,
                  const std::filesystem::path& path) {
  data.validate();
  Writer w;
  w.magic("GSEM");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(data.dim()));
  w.u64(static_cast<std::uint64_t>(data.num_samples()));
  w.u32(static_cast<std::uint32_t>(data.num_classes()));
  w.u32(kFlagAnchorsNormalized);
  w.matrix_rowmajor(data.image_features);
  for (std::int32_t label : data.labels) {
    w.u32(static_cast<std::uint32_t>(label));
  }
  w.matrix_rowmajor(data.text_anchors);
  w.str(data.domain_id);
  for (Eigen::Index c = 0; c < data.num_classes(); ++c) {
    w.str(data.class_names.empty()
              ? std::string()
              : data.class_names[static_cast<std::size_t>(c)]);
  }
  atomic_write(path, w.bytes());
}

EmbeddingDataset load_dataset(const std::filesystem::path& path) {
  Reader r(slurp(path));
  r.expect_magic("GSEM", "dataset");
  check_version(r.u32(), "dataset");
  const auto dim = static_cast<Eigen::Index>(r.u32());
  const auto n = static_cast<Eigen::Index>(r.u64());
  const auto classes = static_cast<Eigen::Index>(r.u32());
  const std::uint32_t flags = r.u32();
  if (dim < 1 || n < 1 || classes < 2) {
    throw StoreError(StoreErrc::truncated_payload,
                     "dataset: inconsistent header counts");
  }
  EmbeddingDataset data;
  data.image_features = r.matrix_rowmajor(n, dim);
  data.labels.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    data.labels.push_back(static_cast<std::int32_t>(r.u32()));
  }
  data.text_anchors = r.matrix_rowmajor(classes, dim);
  data.domain_id = r.str();
  for (Eigen::Index c = 0; c < classes; ++c) {
    data.class_names.push_back(r.str());
  }
  if (!r.exhausted()) {
    throw StoreError(StoreErrc::truncated_payload,
                     "dataset: trailing bytes after payload");
  }
  if (!data.image_features.allFinite() || !data.text_anchors.allFinite()) {
    throw StoreError(StoreErrc::non_finite, "dataset: non-finite values");
  }
  if (!(flags & kFlagAnchorsNormalized)) {
    data.normalize_anchors();
  }
  data.validate();
  return data;
}

void save_layer(const GeoLayer& layer, const std::filesystem::path& path) {
  const Eigen::Index d = layer.weight.dim();
  Writer w;
  w.magic("GSLY");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) {
      w.f64(layer.weight(i, j));
    }
  }
  nlohmann::json meta = {
      {"domain_id", layer.domain_id},
      {"lambda", layer.lambda},
      {"tau", layer.tau},
      {"train_seed", layer.train_seed},
      {"epochs_trained", layer.epochs_trained},
      {"raw_oe", layer.raw_oe},
      {"normalized_oe", layer.normalized_oe},
  };
  w.str(meta.dump());
  atomic_write(path, w.bytes());
}

GeoLayer load_layer(const std::filesystem::path& path) {
  Reader r(slurp(path));
  r.expect_magic("GSLY", "layer");
  check_version(r.u32(), "layer");
  const auto d = static_cast<Eigen::Index>(r.u32());
  if (d < 1) {
    throw StoreError(StoreErrc::truncated_payload, "layer: dim is zero");
  }
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) {
      dense(i, j) = r.f64();
    }
  }
  if (!dense.allFinite()) {
    throw StoreError(StoreErrc::non_finite, "layer: non-finite weights");
  }
  const std::string meta_str = r.str();
  if (!r.exhausted()) {
    throw StoreError(StoreErrc::truncated_payload,
                     "layer: trailing bytes after payload");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::parse_error&) {
    throw StoreError(StoreErrc::truncated_payload,
                     "layer: malformed metadata block");
  }

  GeoLayer layer;
  layer.weight = UpperTriangular::FromDense(std::move(dense));
  layer.domain_id = meta.at("domain_id").get<std::string>();
  layer.lambda = meta.at("lambda").get<double>();
  layer.tau = meta.at("tau").get<double>();
  layer.train_seed = meta.at("train_seed").get<std::int64_t>();
  layer.epochs_trained = meta.at("epochs_trained").get<std::int64_t>();
  layer.raw_oe = meta.at("raw_oe").get<double>();
  layer.normalized_oe = meta.at("normalized_oe").get<double>();

  const OrthogonalityError oe = orthogonality_error(layer.weight);
  if (std::abs(oe.raw - layer.raw_oe) > 1e-9) {
    throw StoreError(StoreErrc::oe_mismatch,
                     "layer: stored OE disagrees with recomputation "
                     "(corrupt payload or stale metadata)");
  }
  return layer;
}

void save_projection(const Projection& p, const std::filesystem::path& path) {
  if (!p.entries.allFinite()) {
    throw InvalidInput("save_projection: non-finite entries");
  }
  Writer w;
  w.magic("GSPJ");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(p.rows()));
  w.u32(static_cast<std::uint32_t>(p.cols()));
  w.matrix_rowmajor(p.entries);
  atomic_write(path, w.bytes());
}

Projection load_projection(const std::filesystem::path& path) {
  Reader r(slurp(path));
  r.expect_magic("GSPJ", "projection");
  check_version(r.u32(), "projection");
  const auto rows = static_cast<Eigen::Index>(r.u32());
  const auto cols = static_cast<Eigen::Index>(r.u32());
  Projection p{r.matrix_rowmajor(rows, cols)};
  if (!r.exhausted()) {
    throw StoreError(StoreErrc::truncated_payload,
                     "projection: trailing bytes after payload");
  }
  if (!p.entries.allFinite()) {
    throw StoreError(StoreErrc::non_finite, "projection: non-finite values");
  }
  return p;
}

std::uint64_t fnv1a(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 14695981039346656037ull;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

std::uint64_t fnv1a_file(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  return fnv1a(bytes.data(), bytes.size());
}

namespace {

std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(digest));
  return std::string(buf);
}

std::uint64_t parse_digest_hex(const std::string& hex) {
  std::uint64_t v = 0;
  const auto [ptr, ec] =
      std::from_chars(hex.data(), hex.data() + hex.size(), v, 16);
  if (ec != std::errc() || ptr != hex.data() + hex.size()) {
    throw StoreError(StoreErrc::digest_mismatch,
                     "manifest: malformed digest '" + hex + "'");
  }
  return v;
}

}  // namespace

void save_manifest(const StackManifest& manifest,
                   const std::filesystem::path& path) {
  if (manifest.layer_paths.size() != manifest.digests.size()) {
    throw InvalidInput("save_manifest: path/digest count mismatch");
  }
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < manifest.layer_paths.size(); ++i) {
    layers.push_back({{"path", manifest.layer_paths[i]},
                      {"digest", digest_hex(manifest.digests[i])}});
  }
  nlohmann::json j = {{"dim", manifest.dim}, {"layers", layers}};
  if (manifest.folded_projection_path) {
    j["folded_projection"] = *manifest.folded_projection_path;
  }
  atomic_write(path, j.dump(2) + "\n");
}

StackManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw StoreError(StoreErrc::truncated_payload,
                     "manifest: " + std::string(e.what()));
  }
  StackManifest manifest;
  manifest.dim = j.at("dim").get<Eigen::Index>();
  for (const auto& entry : j.at("layers")) {
    manifest.layer_paths.push_back(entry.at("path").get<std::string>());
    manifest.digests.push_back(
        parse_digest_hex(entry.at("digest").get<std::string>()));
  }
  if (j.contains("folded_projection")) {
    manifest.folded_projection_path =
        j.at("folded_projection").get<std::string>();
  }
  return manifest;
}

GeoStack load_stack(const std::filesystem::path& manifest_path) {
  const StackManifest manifest = load_manifest(manifest_path);
  const std::filesystem::path base = manifest_path.parent_path();
  GeoStack stack(manifest.dim);
  for (std::size_t i = 0; i < manifest.layer_paths.size(); ++i) {
    std::filesystem::path layer_path(manifest.layer_paths[i]);
    if (layer_path.is_relative()) {
      layer_path = base / layer_path;
    }
    const std::uint64_t digest = fnv1a_file(layer_path);
    if (digest != manifest.digests[i]) {
      throw StoreError(StoreErrc::digest_mismatch,
                       "manifest: digest mismatch for " + layer_path.string());
    }
    stack.push(load_layer(layer_path));
  }
  return stack;
}

StackManifest make_manifest(Eigen::Index dim,
                            const std::vector<std::filesystem::path>& layers) {
  StackManifest manifest;
  manifest.dim = dim;
  for (const auto& path : layers) {
    manifest.layer_paths.push_back(path.string());
    manifest.digests.push_back(fnv1a_file(path));
  }
  return manifest;
}

std::string format_double(double v) {
  char buf[64];
  // Shortest representation that parses back to the same bits.
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) {
      break;
    }
  }
  return std::string(buf);
}

void write_report(const ReportTable& table, const std::filesystem::path& path,
                  ReportFormat format) {
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) {
      throw InvalidInput("write_report: ragged row");
    }
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw InvalidInput("write_report: non-finite value");
      }
    }
  }
  if (format == ReportFormat::csv) {
    std::string out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      out += (c ? "," : "") + table.columns[c];
    }
    out += "\n";
    for (const auto& row : table.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        out += (c ? "," : "") + format_double(row[c]);
      }
      out += "\n";
    }
    atomic_write(path, out);
  } else {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : table.rows) {
      nlohmann::json obj;
      for (std::size_t c = 0; c < row.size(); ++c) {
        obj[table.columns[c]] = row[c];
      }
      rows.push_back(obj);
    }
    atomic_write(path, rows.dump(2) + "\n");
  }
}

nlohmann::json to_json(const StabilityReport& report) {
  nlohmann::json domains = nlohmann::json::array();
  for (std::size_t d = 0; d < report.domain_ids.size(); ++d) {
    domains.push_back({{"domain_id", report.domain_ids[d]},
                       {"accuracy", report.domain_accuracy[d]},
                       {"mean_margin", report.domain_mean_margin[d]}});
  }
  nlohmann::json commutators = nlohmann::json::array();
  for (const auto& [i, j, dev] : report.commutator_deviations) {
    commutators.push_back({{"i", i}, {"j", j}, {"deviation", dev}});
  }
  return {{"stack", report.stack_description},
          {"composite_raw_oe", report.composite_raw_oe},
          {"composite_normalized_oe", report.composite_normalized_oe},
          {"quasi_additive_deviation", report.quasi_additive_deviation},
          {"domains", domains},
          {"commutator_deviations", commutators}};
}

nlohmann::json to_json(const CilResult& result) {
  return {{"global_accuracy", result.global_accuracy},
          {"task0_retention", result.task0_retention}};
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  atomic_write(path, j.dump(2) + "\n");
}

}  // namespace geostack
