#pragma once

#include "alert/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace alert::store {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kTemplateAbsent = 0xFFFFFFFFu;
inline constexpr char kActivationsFile[] = "activations.bin";
inline constexpr char kManifestFile[] = "manifest.json";

struct DatasetManifest {
  std::uint32_t format_version = kFormatVersion;
  std::string dataset_name;
  // Indexed by FeatureKind: d_g, d_c, d_h.
  std::array<std::uint32_t, 3> dims{};
  std::vector<std::uint32_t> layers_present;
  std::uint64_t record_count = 0;

  std::uint32_t dim(FeatureKind k) const { return dims[static_cast<int>(k)]; }
  bool has_layer(std::uint32_t layer) const;

  bool operator==(const DatasetManifest&) const = default;
};

struct ActivationRecord {
  std::string prompt_id;
  Category category = Category::kBenign;
  Split split = Split::kTrain;
  std::uint32_t layer = 0;
  FeatureKind feature_kind = FeatureKind::kHidden;
  TokenMatrix tokens;  // n_tokens x d
  // Tokens at index >= template_start belong to the jailbreak template.
  std::optional<std::uint32_t> template_start;

  Eigen::Index n_tokens() const { return tokens.rows(); }
  Eigen::Index dim() const { return tokens.cols(); }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ActivationRecord> records;
};

/// A filtered, order-preserving view of records sharing (split, kind, layer).
struct RecordSet {
  Split split = Split::kTrain;
  FeatureKind feature_kind = FeatureKind::kHidden;
  std::uint32_t layer = 0;
  std::vector<const ActivationRecord*> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  auto begin() const { return records.begin(); }
  auto end() const { return records.end(); }
  const ActivationRecord& operator[](std::size_t i) const { return *records[i]; }
};

struct CategoryFilter {
  bool benign = false;
  bool harmful = false;
  bool jailbreak = false;

  static CategoryFilter only(Category c);
  static CategoryFilter all() { return {true, true, true}; }
  bool accepts(Category c) const;
};

/// Checks every manifest and record invariant; throws alert::Error on the first violation.
void validate(const DatasetManifest& manifest, const std::vector<ActivationRecord>& records);

/// Builds a manifest whose dims/layers/record_count describe `records`.
DatasetManifest describe(const std::string& name, const std::array<std::uint32_t, 3>& dims,
                         const std::vector<ActivationRecord>& records);

void write_dataset(const DatasetManifest& manifest, const std::vector<ActivationRecord>& records,
                   const std::filesystem::path& dir);
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  write_dataset(ds.manifest, ds.records, dir);
}

Dataset read_dataset(const std::filesystem::path& dir);

// Byte-level codec for activations.bin; exposed for tests and tooling.
std::vector<std::uint8_t> encode_activations(const DatasetManifest& manifest,
                                             const std::vector<ActivationRecord>& records);
std::vector<ActivationRecord> decode_activations(const std::vector<std::uint8_t>& bytes,
                                                 const DatasetManifest& manifest);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

RecordSet select(const Dataset& dataset, Split split, CategoryFilter filter, FeatureKind kind,
                 std::uint32_t layer);

}  // namespace alert::store
