#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "geostack/store.hpp"
#include "geostack/synthesis.hpp"
#include "test_util.hpp"

using namespace geostack;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("geostack_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

EmbeddingDataset sample_dataset() {
  SyntheticDomainSpec spec;
  spec.dim = 12;
  spec.classes = 4;
  spec.samples_per_class = 5;
  spec.kappa = 2.0;
  spec.seed = 3;
  spec.domain_id = "roundtrip";
  return generate_domain(spec);
}

void corrupt_byte(const fs::path& path, std::size_t offset, char value) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&value, 1);
}

void truncate_by_one(const fs::path& path) {
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 1);
}

}  // namespace

TEST_CASE("dataset round-trip is bit-exact") {
  TempDir tmp;
  const fs::path file = tmp.path / "domain.gsem";
  const EmbeddingDataset original = sample_dataset();
  save_dataset(original, file);
  const EmbeddingDataset loaded = load_dataset(file);
  CHECK(loaded.image_features == original.image_features);
  CHECK(loaded.text_anchors == original.text_anchors);
  CHECK(loaded.labels == original.labels);
  CHECK(loaded.domain_id == original.domain_id);
  CHECK(loaded.class_names == original.class_names);
}

TEST_CASE("dataset corruption modes raise typed errors") {
  TempDir tmp;
  const fs::path file = tmp.path / "domain.gsem";
  save_dataset(sample_dataset(), file);

  SUBCASE("truncated payload") {
    truncate_by_one(file);
    try {
      load_dataset(file);
      FAIL("expected StoreError");
    } catch (const StoreError& e) {
      CHECK(e.code() == StoreErrc::truncated_payload);
    }
  }
  SUBCASE("bad magic") {
    corrupt_byte(file, 0, 'X');
    try {
      load_dataset(file);
      FAIL("expected StoreError");
    } catch (const StoreError& e) {
      CHECK(e.code() == StoreErrc::bad_magic);
    }
  }
  SUBCASE("version mismatch") {
    corrupt_byte(file, 4, 9);
    try {
      load_dataset(file);
      FAIL("expected StoreError");
    } catch (const StoreError& e) {
      CHECK(e.code() == StoreErrc::version_mismatch);
    }
  }
  SUBCASE("non-finite payload") {
    // First feature value starts right after the 28-byte header.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(28);
    f.write(reinterpret_cast<const char*>(&nan), sizeof(nan));
    f.close();
    try {
      load_dataset(file);
      FAIL("expected StoreError");
    } catch (const StoreError& e) {
      CHECK(e.code() == StoreErrc::non_finite);
    }
  }
  SUBCASE("missing file") {
    try {
      load_dataset(tmp.path / "nope.gsem");
      FAIL("expected StoreError");
    } catch (const StoreError& e) {
      CHECK(e.code() == StoreErrc::io);
    }
  }
}

TEST_CASE("layer round-trip preserves weights and metadata") {
  TempDir tmp;
  const fs::path file = tmp.path / "layer.gsly";

  const GeoLayer identity = GeoLayer::IdentityLayer(6, "id");
  save_layer(identity, file);
  CHECK(load_layer(file).raw_oe == 0.0);

  std::mt19937_64 rng(5);
  GeoLayer trained = GeoLayer::FromWeight(
      add_identity(testutil::random_upper(10, rng, 0.03)), "trained", 0.95,
      0.07, 42, 30);
  save_layer(trained, file);
  const GeoLayer loaded = load_layer(file);
  CHECK(loaded.weight.matrix() == trained.weight.matrix());
  CHECK(loaded.domain_id == "trained");
  CHECK(loaded.lambda == 0.95);
  CHECK(loaded.train_seed == 42);
  CHECK(loaded.epochs_trained == 30);
}

TEST_CASE("layer payload tampering triggers oe-mismatch") {
  TempDir tmp;
  const fs::path file = tmp.path / "layer.gsly";
  std::mt19937_64 rng(7);
  save_layer(GeoLayer::FromWeight(
                 add_identity(testutil::random_upper(8, rng, 0.05)), "x"),
             file);
  // Flip one packed weight; metadata keeps the stale OE.
  const double tampered = 2.5;
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(12 + 8 * 3);  // header is 12 bytes, then packed f64 entries
  f.write(reinterpret_cast<const char*>(&tampered), sizeof(tampered));
  f.close();
  try {
    load_layer(file);
    FAIL("expected StoreError");
  } catch (const StoreError& e) {
    CHECK(e.code() == StoreErrc::oe_mismatch);
  }
}

TEST_CASE("projection round-trip") {
  TempDir tmp;
  std::mt19937_64 rng(9);
  const Projection p{testutil::random_matrix(5, 8, rng)};
  const fs::path file = tmp.path / "proj.gspj";
  save_projection(p, file);
  CHECK(load_projection(file).entries == p.entries);
}

TEST_CASE("manifest digests detect layer drift") {
  TempDir tmp;
  std::mt19937_64 rng(11);
  const fs::path a = tmp.path / "a.gsly";
  const fs::path b = tmp.path / "b.gsly";
  save_layer(GeoLayer::FromWeight(
                 add_identity(testutil::random_upper(6, rng, 0.02)), "a"),
             a);
  save_layer(GeoLayer::FromWeight(
                 add_identity(testutil::random_upper(6, rng, 0.02)), "b"),
             b);

  const StackManifest manifest = make_manifest(6, {a, b});
  const fs::path mfile = tmp.path / "stack.json";
  save_manifest(manifest, mfile);

  const GeoStack stack = load_stack(mfile);
  CHECK(stack.size() == 2);
  CHECK(stack[0].domain_id == "a");
  CHECK(stack[1].domain_id == "b");

  // Rewriting a layer invalidates its digest.
  save_layer(GeoLayer::IdentityLayer(6, "a"), a);
  try {
    load_stack(mfile);
    FAIL("expected StoreError");
  } catch (const StoreError& e) {
    CHECK(e.code() == StoreErrc::digest_mismatch);
  }
}

TEST_CASE("report values survive serialization exactly") {
  TempDir tmp;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);

  ReportTable table;
  table.columns = {"a", "b"};
  for (int i = 0; i < 200; ++i) {
    table.rows.push_back({uniform(rng) * std::pow(10.0, int(rng() % 7) - 3),
                          uniform(rng)});
  }

  const fs::path csv = tmp.path / "report.csv";
  write_report(table, csv, ReportFormat::csv);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "a,b");
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    CHECK(std::stod(line.substr(0, comma)) == table.rows[row][0]);
    CHECK(std::stod(line.substr(comma + 1)) == table.rows[row][1]);
    ++row;
  }
  CHECK(row == table.rows.size());

  const fs::path json_path = tmp.path / "report.json";
  write_report(table, json_path, ReportFormat::json);
  std::ifstream jin(json_path);
  const nlohmann::json parsed = nlohmann::json::parse(jin);
  REQUIRE(parsed.size() == table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    CHECK(parsed[i]["a"].get<double>() == table.rows[i][0]);
    CHECK(parsed[i]["b"].get<double>() == table.rows[i][1]);
  }
}

TEST_CASE("fnv1a reference values") {
  // Standard 64-bit FNV-1a test vectors.
  CHECK(fnv1a("", 0) == 14695981039346656037ull);
  CHECK(fnv1a("a", 1) == 12638187200555641996ull);
}
