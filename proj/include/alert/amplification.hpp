#pragma once

#include "alert/activation_store.hpp"
#include "alert/common.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace alert::amp {

/// Transformer block used when no layer is configured: the fourth block, counted from one,
/// which is stored index 3 under 0-based layer indexing.
inline constexpr std::uint32_t kDefaultTargetLayer = 3;

/// Per-channel arithmetic mean over tokens (rows), accumulated in double.
template <typename Derived>
Eigen::VectorXd prompt_mean_feature(const Eigen::MatrixBase<Derived>& tokens) {
  if (tokens.rows() < 1) throw Error("token sequence is empty");
  return tokens.template cast<double>().colwise().mean().transpose();
}

/// Softmax over tokens of the negative Euclidean distance to `prototype`.
template <typename Derived>
Eigen::VectorXd token_weights(const Eigen::MatrixBase<Derived>& tokens,
                              const Eigen::VectorXd& prototype) {
  if (tokens.cols() != prototype.size()) throw Error("dimension mismatch");
  if (tokens.rows() < 1) throw Error("token sequence is empty");
  Eigen::VectorXd logits(tokens.rows());
  for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
    logits(i) = -(tokens.row(i).template cast<double>().transpose() - prototype).norm();
  }
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

struct PrototypeSet {
  std::uint32_t layer = 0;
  // Indexed by FeatureKind (gating = 0, context = 1).
  std::array<Eigen::VectorXd, 2> benign;
  std::array<Eigen::VectorXd, 2> harmful;
  std::array<std::uint32_t, 2> benign_count{};
  std::array<std::uint32_t, 2> harmful_count{};

  const Eigen::VectorXd& prototype(Category c, FeatureKind k) const;

  bool operator==(const PrototypeSet& o) const;
};

struct AmplifiedFeature {
  Eigen::VectorXd vector;
  Eigen::VectorXd weights;
};

/// Mean over prompts of each prompt's token-mean feature, per (category, kind).
PrototypeSet build_prototypes(const store::RecordSet& train_benign_g,
                              const store::RecordSet& train_harmful_g,
                              const store::RecordSet& train_benign_c,
                              const store::RecordSet& train_harmful_c);

/// Convenience overload selecting the four train sets from a dataset.
PrototypeSet build_prototypes(const store::Dataset& dataset, std::uint32_t layer);

/// Weighted token aggregate with weights (a_benign + a_harmful) / 2.
template <typename Derived>
AmplifiedFeature amplified_feature(const Eigen::MatrixBase<Derived>& tokens,
                                   const Eigen::VectorXd& benign_prototype,
                                   const Eigen::VectorXd& harmful_prototype) {
  AmplifiedFeature out;
  out.weights = 0.5 * (token_weights(tokens, benign_prototype) +
                       token_weights(tokens, harmful_prototype));
  out.vector = tokens.template cast<double>().transpose() * out.weights;
  return out;
}

/// Amplified gating and context features of one prompt.
std::pair<AmplifiedFeature, AmplifiedFeature> amplified_features(
    const store::ActivationRecord& gating, const store::ActivationRecord& context,
    const PrototypeSet& protos);

AmplifiedFeature amplified_feature(const store::ActivationRecord& record,
                                   const PrototypeSet& protos);

struct LayerConfig {
  std::optional<std::uint32_t> layer;
};

std::uint32_t select_layer(const LayerConfig& cfg, const store::DatasetManifest& manifest);

struct TemplateDistance {
  std::string prompt_id;
  FeatureKind kind = FeatureKind::kGating;
  bool is_template = false;  // false: instruction span
  Category prototype = Category::kBenign;
  double distance = 0.0;
};

/// L2 distances from the token-mean of each jailbreak prompt's template span and instruction
/// span to the benign and harmful prototypes of the record's kind.
std::vector<TemplateDistance> template_distance_study(const store::RecordSet& jailbreak,
                                                      const PrototypeSet& protos);

std::string template_distances_csv(const std::vector<TemplateDistance>& rows);

// Binary blob: magic "ALPT" | u32 version | u32 layer | per (kind, category): u32 count |
// u32 d | d x f64. JSON sidecar carries the provenance counts.
void write_prototypes(const PrototypeSet& protos, const std::filesystem::path& dir);
PrototypeSet read_prototypes(const std::filesystem::path& dir);

}  // namespace alert::amp
