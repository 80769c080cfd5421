#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geostack/dataset.hpp"
#include "geostack/evaluation.hpp"
#include "geostack/geometry.hpp"
#include "geostack/synthesis.hpp"

#include <nlohmann/json_fwd.hpp>

namespace geostack {

/// Binary embedding bundle ("GSEM"): header, row-major f64 features,
/// u32 labels, row-major f64 anchors, then domain id and class names as
/// length-prefixed UTF-8. All scalars little-endian; round-trips are
/// bit-exact.
void save_dataset(const EmbeddingDataset& data,
                  const std::filesystem::path& path);
EmbeddingDataset load_dataset(const std::filesystem::path& path);

/// Single-file expert ("GSLY"): packed upper triangle (row-major,
/// d(d+1)/2 f64) plus a length-prefixed JSON metadata block. Load
/// recomputes the OE and rejects files whose stored value drifted.
void save_layer(const GeoLayer& layer, const std::filesystem::path& path);
GeoLayer load_layer(const std::filesystem::path& path);

/// Dense projection head ("GSPJ").
void save_projection(const Projection& p, const std::filesystem::path& path);
Projection load_projection(const std::filesystem::path& path);

/// 64-bit FNV-1a over a byte range / file payload. Tamper detection, not
/// collision resistance.
std::uint64_t fnv1a(const void* data, std::size_t size);
std::uint64_t fnv1a_file(const std::filesystem::path& path);

/// Ordered list of layer files with content digests.
struct StackManifest {
  Eigen::Index dim = 0;
  std::vector<std::string> layer_paths;
  std::vector<std::uint64_t> digests;
  std::optional<std::string> folded_projection_path;
};

void save_manifest(const StackManifest& manifest,
                   const std::filesystem::path& path);
StackManifest load_manifest(const std::filesystem::path& path);

/// Loads every layer named by the manifest, verifying digests. Relative
/// layer paths resolve against the manifest's directory.
GeoStack load_stack(const std::filesystem::path& manifest_path);

/// Builds a manifest for already-saved layer files.
StackManifest make_manifest(Eigen::Index dim,
                            const std::vector<std::filesystem::path>& layers);

enum class ReportFormat { json, csv };

/// Tabular report writer. CSV numbers use the shortest representation
/// that round-trips through a 64-bit real.
struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

void write_report(const ReportTable& table, const std::filesystem::path& path,
                  ReportFormat format);

std::string format_double(double v);  // shortest round-trippable decimal

nlohmann::json to_json(const StabilityReport& report);
nlohmann::json to_json(const CilResult& result);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace geostack
