#include "alert/activation_store.hpp"

#include "alert/binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace alert::store {
namespace {

constexpr char kMagic[] = "ALRT";

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

}  // namespace

bool DatasetManifest::has_layer(std::uint32_t layer) const {
  return std::binary_search(layers_present.begin(), layers_present.end(), layer);
}

CategoryFilter CategoryFilter::only(Category c) {
  CategoryFilter f;
  switch (c) {
    case Category::kBenign: f.benign = true; break;
    case Category::kHarmful: f.harmful = true; break;
    case Category::kJailbreak: f.jailbreak = true; break;
  }
  return f;
}

bool CategoryFilter::accepts(Category c) const {
  switch (c) {
    case Category::kBenign: return benign;
    case Category::kHarmful: return harmful;
    case Category::kJailbreak: return jailbreak;
  }
  return false;
}

void validate(const DatasetManifest& m, const std::vector<ActivationRecord>& records) {
  check(m.format_version == kFormatVersion, "unsupported version");
  for (auto d : m.dims) check(d > 0, "manifest dims must be positive");
  check(std::is_sorted(m.layers_present.begin(), m.layers_present.end()) &&
            std::adjacent_find(m.layers_present.begin(), m.layers_present.end()) ==
                m.layers_present.end(),
        "layers_present must be sorted and duplicate-free");
  check(m.record_count == records.size(), "record_count does not match records");

  for (const auto& r : records) {
    const std::string where = " (record '" + r.prompt_id + "')";
    check(static_cast<int>(r.category) <= 2, "invalid category" + where);
    check(static_cast<int>(r.split) <= 1, "invalid split" + where);
    check(static_cast<int>(r.feature_kind) <= 2, "invalid feature kind" + where);
    check(r.n_tokens() >= 1, "record has no tokens" + where);
    check(r.dim() == static_cast<Eigen::Index>(m.dim(r.feature_kind)), "dimension mismatch" + where);
    check(m.has_layer(r.layer), "layer not in layers_present" + where);
    check(r.tokens.allFinite(), "non-finite value" + where);
    if (r.template_start) {
      check(*r.template_start != kTemplateAbsent &&
                *r.template_start <= static_cast<std::uint32_t>(r.n_tokens()),
            "template_start out of range" + where);
    }
    check(!(r.category == Category::kJailbreak && r.split == Split::kTrain),
          "jailbreak record marked train" + where);
  }
}

DatasetManifest describe(const std::string& name, const std::array<std::uint32_t, 3>& dims,
                         const std::vector<ActivationRecord>& records) {
  DatasetManifest m;
  m.dataset_name = name;
  m.dims = dims;
  std::set<std::uint32_t> layers;
  for (const auto& r : records) layers.insert(r.layer);
  m.layers_present.assign(layers.begin(), layers.end());
  m.record_count = records.size();
  return m;
}

std::vector<std::uint8_t> encode_activations(const DatasetManifest& m,
                                             const std::vector<ActivationRecord>& records) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kFormatVersion);
  for (auto d : m.dims) w.put<std::uint32_t>(d);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.prompt_id.size()));
    w.put_bytes(r.prompt_id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.category));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.split));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(r.layer));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.feature_kind));
    w.put<std::uint32_t>(r.template_start.value_or(kTemplateAbsent));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.n_tokens()));
    w.put_span(std::span<const float>(r.tokens.data(), static_cast<std::size_t>(r.tokens.size())));
  }
  return w.take();
}

std::vector<ActivationRecord> decode_activations(const std::vector<std::uint8_t>& bytes,
                                                 const DatasetManifest& m) {
  io::ByteReader rd(bytes);
  if (bytes.size() < 4 || rd.get_string(4) != std::string_view(kMagic, 4)) throw Error("bad magic");
  if (rd.get<std::uint32_t>() != kFormatVersion) throw Error("unsupported version");
  std::array<std::uint32_t, 3> dims{};
  for (auto& d : dims) d = rd.get<std::uint32_t>();
  check(dims == m.dims, "header dims disagree with manifest");
  const auto count = rd.get<std::uint32_t>();
  check(count == m.record_count, "record_count does not match records");

  std::vector<ActivationRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ActivationRecord r;
    r.prompt_id = rd.get_string(rd.get<std::uint32_t>());
    const auto cat = rd.get<std::uint8_t>();
    const auto split = rd.get<std::uint8_t>();
    r.layer = rd.get<std::uint16_t>();
    const auto kind = rd.get<std::uint8_t>();
    check(cat <= 2, "invalid category");
    check(split <= 1, "invalid split");
    check(kind <= 2, "invalid feature kind");
    r.category = static_cast<Category>(cat);
    r.split = static_cast<Split>(split);
    r.feature_kind = static_cast<FeatureKind>(kind);
    const auto ts = rd.get<std::uint32_t>();
    if (ts != kTemplateAbsent) r.template_start = ts;
    const auto n = rd.get<std::uint32_t>();
    const auto d = dims[kind];
    if (static_cast<std::uint64_t>(n) * d * sizeof(float) > rd.remaining()) {
      throw Error("truncated payload");
    }
    r.tokens.resize(n, d);
    rd.get_span(std::span<float>(r.tokens.data(), static_cast<std::size_t>(r.tokens.size())));
    records.push_back(std::move(r));
  }
  check(rd.remaining() == 0, "trailing bytes after last record");
  return records;
}

std::string manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["format_version"] = m.format_version;
  j["dataset_name"] = m.dataset_name;
  j["dims"] = {{"gating", m.dims[0]}, {"context", m.dims[1]}, {"hidden", m.dims[2]}};
  j["layers_present"] = m.layers_present;
  j["record_count"] = m.record_count;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetManifest m;
    m.format_version = j.at("format_version").get<std::uint32_t>();
    m.dataset_name = j.at("dataset_name").get<std::string>();
    const auto& dims = j.at("dims");
    m.dims = {dims.at("gating").get<std::uint32_t>(), dims.at("context").get<std::uint32_t>(),
              dims.at("hidden").get<std::uint32_t>()};
    m.layers_present = j.at("layers_present").get<std::vector<std::uint32_t>>();
    m.record_count = j.at("record_count").get<std::uint64_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid manifest: ") + e.what());
  }
}

void write_dataset(const DatasetManifest& manifest, const std::vector<ActivationRecord>& records,
                   const std::filesystem::path& dir) {
  validate(manifest, records);
  const auto bytes = encode_activations(manifest, records);
  std::filesystem::create_directories(dir);
  io::write_file(dir / kActivationsFile, bytes);
  io::write_text(dir / kManifestFile, manifest_to_json(manifest));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = manifest_from_json(io::read_text(dir / kManifestFile));
  if (ds.manifest.format_version != kFormatVersion) throw Error("unsupported version");
  ds.records = decode_activations(io::read_file(dir / kActivationsFile), ds.manifest);
  validate(ds.manifest, ds.records);
  return ds;
}

RecordSet select(const Dataset& dataset, Split split, CategoryFilter filter, FeatureKind kind,
                 std::uint32_t layer) {
  if (!dataset.manifest.has_layer(layer)) {
    throw Error("layer " + std::to_string(layer) + " not present in dataset");
  }
  RecordSet set{split, kind, layer, {}};
  for (const auto& r : dataset.records) {
    if (r.split == split && r.feature_kind == kind && r.layer == layer && filter.accepts(r.category)) {
      set.records.push_back(&r);
    }
  }
  return set;
}

}  // namespace alert::store
