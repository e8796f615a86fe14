#pragma once

#include "alert/activation_store.hpp"
#include "alert/common.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace alert::channels {

/// Harmful std at or below this marks a channel degenerate (no RD score).
inline constexpr double kStdFloor = 1e-8;
inline constexpr Eigen::Index kDefaultTopK = 200;

struct ChannelStats {
  FeatureKind kind = FeatureKind::kHidden;
  Eigen::Index d = 0;
  // Indexed by Category; jailbreak is optional.
  std::array<std::optional<Eigen::VectorXd>, 3> mean_by_category;
  Eigen::VectorXd std_harmful;  // population std (divisor N)

  const Eigen::VectorXd& mean(Category c) const;
  bool degenerate(Eigen::Index i) const { return !(std_harmful(i) > kStdFloor); }
};

/// Per-channel statistics from prompt-level points (one prompt per row).
ChannelStats channel_stats(const Eigen::MatrixXd& benign, const Eigen::MatrixXd& harmful,
                           const std::optional<Eigen::MatrixXd>& jailbreak,
                           FeatureKind kind = FeatureKind::kHidden);

/// Same, from record sets (token-mean per record).
ChannelStats channel_stats(const store::RecordSet& benign, const store::RecordSet& harmful,
                           const store::RecordSet* jailbreak = nullptr);

/// |mean_p[i] - mean_H[i]| / std_H[i]; nullopt for a degenerate channel.
std::optional<double> relative_difference(const ChannelStats& stats, Category p, Eigen::Index i);

/// Indices sorted by descending score, ties by ascending index. Only `eligible` indices (all when
/// empty) are ranked.
std::vector<Eigen::Index> rank_descending(const Eigen::VectorXd& scores,
                                          const std::vector<bool>& eligible = {});

struct RDReport {
  std::vector<std::optional<double>> rd_benign;
  std::vector<std::optional<double>> rd_jailbreak;
  // Every non-degenerate channel, by descending rd_benign - rd_jailbreak.
  std::vector<Eigen::Index> ranking;
  Eigen::Index top_k = 0;

  std::vector<Eigen::Index> top() const;
  /// Mean of rd_benign - rd_jailbreak over the top-k channels.
  double mean_top_gap() const;
  std::string to_csv() const;
};

/// Channels ranked by RD(i,B) - RD(i,J); requires jailbreak means in `stats`.
RDReport top_channels(const ChannelStats& stats, Eigen::Index k = kDefaultTopK);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  std::size_t count_above_one = 0;  // channels with RD > 1

  std::string to_csv() const;
};

/// Histogram of the top-k channels' RD scores for `which` (benign or jailbreak). Without an
/// explicit range the bins span [0, max RD] (or [0, 1] when every score is 0).
Histogram rd_histogram(const RDReport& report, Category which, int bins,
                       std::optional<std::pair<double, double>> range = std::nullopt);

/// RD(i,B) - RD(i,J) per channel, -infinity for degenerate channels.
Eigen::VectorXd gap_scores(const ChannelStats& stats);

struct IntersectionCurve {
  std::vector<double> alphas;
  std::vector<double> ir_values;
  std::vector<double> random_baseline;  // alpha^2

  std::string to_csv() const;
};

/// For each alpha, |top_g(alpha) ∩ top_c(alpha)| / |C| with floor(alpha |C|) channels selected.
IntersectionCurve intersection_rate(const Eigen::VectorXd& scores_g,
                                    const Eigen::VectorXd& scores_c,
                                    const std::vector<double>& alphas);

}  // namespace alert::channels
