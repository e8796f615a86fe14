#pragma once

#include "alert/activation_store.hpp"
#include "alert/common.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace alert::synth {

enum class GateActivation { kSigmoid, kSilu, kTanh };

/// Controls for the gated-FFN activation simulator.
///
/// Each layer l owns a random gated FFN (W_c, W_g: d_model -> d_ffn, W_out: d_ffn -> d_model).
/// Token inputs are x = u_prompt + eps_token, plus a Rademacher offset of magnitude
/// `template_noise_scale` per channel on jailbreak template tokens. At `safety_layer` only,
/// benign prompts add `benign_shift` (harmful: `harmful_shift`) to the pre-activations of
/// `planted_channels` context channels and a disjoint set of as many gating channels. Template
/// tokens carry `template_benign_mix` times the benign shift. Every gating channel has bias
/// `gate_bias`, so a mostly-closed gate attenuates context shifts on their way to the hidden state.
struct SyntheticConfig {
  std::string name = "synthetic";
  int d_model = 256;
  int d_ffn = 512;
  int n_layers = 6;
  int safety_layer = 3;
  // Layers that also emit gating/context records; empty means {0, safety_layer}.
  std::vector<int> ffn_layers;
  int planted_channels = 50;
  double benign_shift = 2.0;
  double harmful_shift = 0.0;
  double prompt_noise_scale = 1.0;
  double token_noise_scale = 1.0;
  double template_noise_scale = 5.0;
  double template_benign_mix = 1.0;
  double gate_bias = -2.0;
  int instruction_tokens = 16;
  int template_tokens = 8;
  int token_jitter = 4;  // prompt lengths vary uniformly by +-jitter
  int train_per_category = 100;
  int test_per_category = 100;
  GateActivation sigma = GateActivation::kSigmoid;
  bool store_gating_preactivation = false;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<int> resolved_ffn_layers() const;
};

SyntheticConfig config_from_json(const std::string& text);
std::string config_to_json(const SyntheticConfig& cfg);

struct GatedFFNSpec {
  Eigen::MatrixXd w_c, w_g, w_out;
  Eigen::VectorXd b_c, b_g;
};

/// Seeded-deterministic FFN weights of one layer.
GatedFFNSpec make_ffn_spec(const SyntheticConfig& cfg, int layer);

double gate(GateActivation kind, double v);

struct FFNOutput {
  Eigen::MatrixXd context;       // h_c, tokens x d_ffn
  Eigen::MatrixXd gate_pre;      // LIN_g(x)
  Eigen::MatrixXd gate;          // sigma(LIN_g(x))
  Eigen::MatrixXd hidden;        // W_out (h_c ⊙ h_g), tokens x d_model
};

/// Applies a gated FFN to token inputs (one token per row), with optional per-channel
/// pre-activation shifts (one row per token).
FFNOutput run_ffn(const GatedFFNSpec& spec, GateActivation sigma, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd* context_shift = nullptr,
                  const Eigen::MatrixXd* gate_shift = nullptr);

store::Dataset gen_synthetic(const SyntheticConfig& cfg);

/// Max |h - W_out(h_c ⊙ h_g)| over every stored (prompt, layer) triple.
double identity_audit(const store::Dataset& dataset, const SyntheticConfig& cfg);

/// Closed-form KL(N(mu1, diag var1) || N(mu2, diag var2)).
double gaussian_kl_oracle(const Eigen::VectorXd& mu1, const Eigen::VectorXd& var1,
                          const Eigen::VectorXd& mu2, const Eigen::VectorXd& var2);
double gaussian_kl_oracle(double mu1, double var1, double mu2, double var2);

/// k-th smallest distance from row `query` of `points` to the other rows (exhaustive sort).
double brute_knn(const Eigen::MatrixXd& points, Eigen::Index query, int k, bool exclude_self);
/// k-th smallest distance from an external point to the rows of `points`.
double brute_knn(const Eigen::MatrixXd& points, const Eigen::VectorXd& query, int k);

/// Prompt-level points for the zero-shot channel construction: every channel ~ N(0, 1) per
/// prompt; the first `planted` channels get `benign_shift` for benign prompts and
/// `jailbreak_shift` for jailbreak prompts.
struct ZeroShotChannels {
  Eigen::MatrixXd benign, harmful, jailbreak;
  int planted = 0;
};
ZeroShotChannels zero_shot_channels(int d, int planted, double benign_shift,
                                    double jailbreak_shift, int prompts_per_category,
                                    std::uint64_t seed);

/// Wraps prompt-level rows as single-token records of one kind/layer/split.
std::vector<store::ActivationRecord> as_records(const Eigen::MatrixXd& points, Category category,
                                                Split split, FeatureKind kind, std::uint32_t layer,
                                                const std::string& id_prefix);

/// SplitMix64 step; used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace alert::synth
