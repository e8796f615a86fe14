#pragma once

#include "alert/activation_store.hpp"
#include "alert/amplification.hpp"
#include "alert/vib.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace alert::detector {

using Scalar = float;
using Model = vib::Model<Scalar>;

/// Which amplification stages are active. token_amp requires module_amp.
struct AblationFlags {
  bool layer_amp = true;
  bool module_amp = true;
  bool token_amp = true;

  void validate() const;
  /// The four nested configurations: none, +layer, +module, +token.
  static std::array<AblationFlags, 4> table_rows();
  bool operator==(const AblationFlags&) const = default;
};

/// Positive class is malicious (label 1).
struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;

  static Metrics from_confusion(long tp, long fp, long tn, long fn);
  static Metrics from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted);
  static std::string csv_header();
  std::string csv_row() const;
};

/// All records of one prompt at one layer, indexed by FeatureKind.
struct PromptRecords {
  std::string prompt_id;
  Category category = Category::kBenign;
  Split split = Split::kTrain;
  std::array<const store::ActivationRecord*, 3> by_kind{};

  const store::ActivationRecord& get(FeatureKind k) const;
};

/// Groups records of `layer` by prompt, in order of first appearance.
std::vector<PromptRecords> group_prompts(const store::Dataset& dataset, Split split,
                                         store::CategoryFilter filter, std::uint32_t layer);

struct Detector {
  std::uint32_t layer = 0;
  AblationFlags flags;
  vib::HyperParams hp;
  std::vector<FeatureKind> kinds;  // {gating, context} or {hidden}
  std::vector<Model> models;       // one per kind
  amp::PrototypeSet prototypes;    // set when module_amp is on
  std::vector<vib::TrainHistory> histories;  // one per model, not persisted
};

/// Prompt-level feature of one record under the detector's aggregation mode.
Eigen::VectorXd prompt_feature(const store::ActivationRecord& record, bool token_amp,
                               const amp::PrototypeSet* protos);

/// Fits on train-split benign (label 0) and harmful (label 1) prompts only.
Detector fit(const store::Dataset& dataset, const vib::HyperParams& hp, const AblationFlags& flags,
             const amp::LayerConfig& layer_cfg = {});

/// Same, on an explicit list of train prompts (benign/harmful only).
Detector fit_prompts(const std::vector<PromptRecords>& train, std::uint32_t layer,
                     const vib::HyperParams& hp, const AblationFlags& flags);

struct Prediction {
  int label = 0;
  Eigen::Vector2d score = Eigen::Vector2d::Zero();
};

/// Averages per-model probability pairs; exact ties resolve to label 1.
Prediction combine(const std::vector<Eigen::Vector2d>& per_model);

Prediction predict(const Detector& detector, const PromptRecords& prompt, vib::Rng& rng);

/// Batched prediction over prompts; noise is drawn per model in prompt order.
std::vector<Prediction> predict_all(const Detector& detector,
                                    const std::vector<PromptRecords>& prompts, vib::Rng& rng);

/// Deterministic evaluation stream derived from the detector's seed.
vib::Rng evaluation_rng(const Detector& detector);

/// Test-split benign (0) vs jailbreak (1).
Metrics evaluate(const Detector& detector, const store::Dataset& dataset);

struct AblationRow {
  AblationFlags flags;
  std::uint32_t layer = 0;
  Metrics metrics;
};

std::vector<AblationRow> ablation_run(const store::Dataset& dataset, const vib::HyperParams& hp,
                                      const amp::LayerConfig& layer_cfg = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct Trial {
  int index = 0;
  vib::HyperParams hp;
  Metrics validation;
};

struct SearchResult {
  vib::HyperParams best;
  int best_trial = 0;
  std::vector<Trial> trials;

  std::string trials_csv() const;
};

/// Seeded random search over the hidden/latent grids, log-uniform beta and MC count, scored by
/// F1 on a stratified 20% benign/harmful validation fold of the train split.
SearchResult search_hparams(const store::Dataset& dataset, int budget, std::uint64_t seed,
                            const vib::HyperParams& base = {},
                            const amp::LayerConfig& layer_cfg = {});

/// Samples one configuration from the search space.
vib::HyperParams sample_hparams(vib::Rng& rng, const vib::HyperParams& base);

void save_detector(const Detector& detector, const std::filesystem::path& dir);
Detector load_detector(const std::filesystem::path& dir);

}  // namespace alert::detector
