#include "alert/amplification.hpp"

#include "alert/binary_io.hpp"

#include <json.hpp>

#include <sstream>

namespace alert::amp {
namespace {

constexpr char kPrototypeMagic[] = "ALPT";
constexpr std::uint32_t kPrototypeVersion = 1;
constexpr char kPrototypeBlob[] = "prototypes.bin";
constexpr char kPrototypeSidecar[] = "prototypes.json";

int kind_slot(FeatureKind k) {
  if (k == FeatureKind::kHidden) throw Error("prototypes exist for gating and context only");
  return static_cast<int>(k);
}

std::pair<Eigen::VectorXd, std::uint32_t> mean_of_prompt_means(const store::RecordSet& set,
                                                                Category expected,
                                                                FeatureKind kind,
                                                                std::uint32_t layer) {
  if (set.empty()) throw Error("empty category set for prototype");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(set[0].dim());
  for (const auto* r : set) {
    if (r->category == Category::kJailbreak || r->split != Split::kTrain) {
      throw Error("prototypes are train-benign/harmful only");
    }
    if (r->category != expected) throw Error("record category does not match prototype set");
    if (r->feature_kind != kind) throw Error("record feature kind does not match prototype set");
    if (r->layer != layer) throw Error("prototype sets span different layers");
    if (r->dim() != sum.size()) throw Error("dimension mismatch");
    sum += prompt_mean_feature(r->tokens);
  }
  return {sum / static_cast<double>(set.size()), static_cast<std::uint32_t>(set.size())};
}

}  // namespace

const Eigen::VectorXd& PrototypeSet::prototype(Category c, FeatureKind k) const {
  const int slot = kind_slot(k);
  if (c == Category::kBenign) return benign[slot];
  if (c == Category::kHarmful) return harmful[slot];
  throw Error("prototypes are train-benign/harmful only");
}

bool PrototypeSet::operator==(const PrototypeSet& o) const {
  return layer == o.layer && benign_count == o.benign_count && harmful_count == o.harmful_count &&
         benign[0] == o.benign[0] && benign[1] == o.benign[1] && harmful[0] == o.harmful[0] &&
         harmful[1] == o.harmful[1];
}

PrototypeSet build_prototypes(const store::RecordSet& bg, const store::RecordSet& hg,
                              const store::RecordSet& bc, const store::RecordSet& hc) {
  PrototypeSet p;
  p.layer = bg.layer;
  std::tie(p.benign[0], p.benign_count[0]) =
      mean_of_prompt_means(bg, Category::kBenign, FeatureKind::kGating, p.layer);
  std::tie(p.harmful[0], p.harmful_count[0]) =
      mean_of_prompt_means(hg, Category::kHarmful, FeatureKind::kGating, p.layer);
  std::tie(p.benign[1], p.benign_count[1]) =
      mean_of_prompt_means(bc, Category::kBenign, FeatureKind::kContext, p.layer);
  std::tie(p.harmful[1], p.harmful_count[1]) =
      mean_of_prompt_means(hc, Category::kHarmful, FeatureKind::kContext, p.layer);
  return p;
}

PrototypeSet build_prototypes(const store::Dataset& ds, std::uint32_t layer) {
  using store::CategoryFilter;
  auto sel = [&](Category c, FeatureKind k) {
    return store::select(ds, Split::kTrain, CategoryFilter::only(c), k, layer);
  };
  return build_prototypes(sel(Category::kBenign, FeatureKind::kGating),
                          sel(Category::kHarmful, FeatureKind::kGating),
                          sel(Category::kBenign, FeatureKind::kContext),
                          sel(Category::kHarmful, FeatureKind::kContext));
}

AmplifiedFeature amplified_feature(const store::ActivationRecord& record,
                                   const PrototypeSet& protos) {
  if (record.layer != protos.layer) throw Error("layer mismatch between record and prototypes");
  return amplified_feature(record.tokens, protos.prototype(Category::kBenign, record.feature_kind),
                           protos.prototype(Category::kHarmful, record.feature_kind));
}

std::pair<AmplifiedFeature, AmplifiedFeature> amplified_features(
    const store::ActivationRecord& gating, const store::ActivationRecord& context,
    const PrototypeSet& protos) {
  if (gating.feature_kind != FeatureKind::kGating || context.feature_kind != FeatureKind::kContext) {
    throw Error("expected one gating and one context record");
  }
  if (gating.prompt_id != context.prompt_id) throw Error("records belong to different prompts");
  return {amplified_feature(gating, protos), amplified_feature(context, protos)};
}

std::uint32_t select_layer(const LayerConfig& cfg, const store::DatasetManifest& manifest) {
  const std::uint32_t layer = cfg.layer.value_or(kDefaultTargetLayer);
  if (!manifest.has_layer(layer)) {
    throw Error("target layer " + std::to_string(layer) + " absent from activation dump");
  }
  return layer;
}

std::vector<TemplateDistance> template_distance_study(const store::RecordSet& jailbreak,
                                                      const PrototypeSet& protos) {
  std::vector<TemplateDistance> rows;
  for (const auto* r : jailbreak) {
    if (!r->template_start) throw Error("record '" + r->prompt_id + "' lacks template_start");
    if (r->layer != protos.layer) throw Error("layer mismatch between record and prototypes");
    const auto start = static_cast<Eigen::Index>(*r->template_start);
    const Eigen::Index n = r->n_tokens();
    auto emit = [&](bool is_template, Eigen::Index from, Eigen::Index count) {
      if (count <= 0) return;
      const Eigen::VectorXd mean = prompt_mean_feature(r->tokens.middleRows(from, count));
      for (Category c : {Category::kBenign, Category::kHarmful}) {
        rows.push_back({r->prompt_id, r->feature_kind, is_template, c,
                        (mean - protos.prototype(c, r->feature_kind)).norm()});
      }
    };
    emit(false, 0, start);
    emit(true, start, n - start);
  }
  return rows;
}

std::string template_distances_csv(const std::vector<TemplateDistance>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "prompt_id,kind,component,prototype,distance\n";
  for (const auto& r : rows) {
    os << r.prompt_id << ',' << to_string(r.kind) << ','
       << (r.is_template ? "template" : "instruction") << ',' << to_string(r.prototype) << ','
       << r.distance << '\n';
  }
  return os.str();
}

void write_prototypes(const PrototypeSet& p, const std::filesystem::path& dir) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kPrototypeMagic, 4));
  w.put<std::uint32_t>(kPrototypeVersion);
  w.put<std::uint32_t>(p.layer);
  for (int k = 0; k < 2; ++k) {
    for (const auto* v : {&p.benign[k], &p.harmful[k]}) {
      w.put<std::uint32_t>(v == &p.benign[k] ? p.benign_count[k] : p.harmful_count[k]);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(v->size()));
      w.put_span(std::span<const double>(v->data(), static_cast<std::size_t>(v->size())));
    }
  }
  std::filesystem::create_directories(dir);
  io::write_file(dir / kPrototypeBlob, w.bytes());

  nlohmann::ordered_json j;
  j["layer"] = p.layer;
  j["counts"] = {{"gating", {{"benign", p.benign_count[0]}, {"harmful", p.harmful_count[0]}}},
                 {"context", {{"benign", p.benign_count[1]}, {"harmful", p.harmful_count[1]}}}};
  j["dims"] = {{"gating", p.benign[0].size()}, {"context", p.benign[1].size()}};
  io::write_text(dir / kPrototypeSidecar, j.dump(2) + "\n");
}

PrototypeSet read_prototypes(const std::filesystem::path& dir) {
  const auto bytes = io::read_file(dir / kPrototypeBlob);
  io::ByteReader rd(bytes);
  if (bytes.size() < 4 || rd.get_string(4) != std::string_view(kPrototypeMagic, 4)) {
    throw Error("bad magic");
  }
  if (rd.get<std::uint32_t>() != kPrototypeVersion) throw Error("unsupported version");
  PrototypeSet p;
  p.layer = rd.get<std::uint32_t>();
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 2; ++c) {
      auto& count = c == 0 ? p.benign_count[k] : p.harmful_count[k];
      auto& v = c == 0 ? p.benign[k] : p.harmful[k];
      count = rd.get<std::uint32_t>();
      const auto d = rd.get<std::uint32_t>();
      if (static_cast<std::size_t>(d) * sizeof(double) > rd.remaining()) {
        throw Error("truncated payload");
      }
      v.resize(d);
      rd.get_span(std::span<double>(v.data(), d));
      if (count < 1 || !v.allFinite()) throw Error("invalid prototype entry");
    }
  }
  return p;
}

}  // namespace alert::amp
