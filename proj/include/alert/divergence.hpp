#pragma once

#include "alert/activation_store.hpp"
#include "alert/common.hpp"

#include <string>
#include <utility>
#include <vector>

namespace alert::divergence {

struct DivergenceConfig {
  int k = 5;
  // Lower clamp for neighbor distances inside the logarithm (duplicate points give rho = 0).
  double distance_floor = 1e-12;

  void validate() const;
};

/// Distance from each row of `queries` to its k-th nearest row of `reference` (Euclidean).
/// With `exclude_self`, `queries` and `reference` are the same set and row i skips itself.
Eigen::VectorXd kth_neighbor_distances(const Eigen::MatrixXd& queries,
                                       const Eigen::MatrixXd& reference, int k, bool exclude_self);

/// kNN estimate of KL(P || Q) from samples (rows are points):
///   (1/N) sum_i [ d log(nu_k(i) / rho_k(i)) + log(M / (N - 1)) ]
double knn_kl_estimate(const Eigen::MatrixXd& sample_p, const Eigen::MatrixXd& sample_q,
                       const DivergenceConfig& cfg = {});

/// 0.5 * (KL(P||Q) + KL(Q||P)); exactly symmetric in its arguments.
double symmetric_kl(const Eigen::MatrixXd& sample_p, const Eigen::MatrixXd& sample_q,
                    const DivergenceConfig& cfg = {});

template <typename Derived>
double knn_kl_estimate(const Eigen::MatrixBase<Derived>& p, const Eigen::MatrixBase<Derived>& q,
                       const DivergenceConfig& cfg = {}) {
  return knn_kl_estimate(Eigen::MatrixXd(p.template cast<double>()),
                         Eigen::MatrixXd(q.template cast<double>()), cfg);
}

/// sign(x) * log10(1 + |x|): finite for every estimate, including negative ones.
double log_scale(double raw);

struct LayerDivergence {
  std::uint32_t layer = 0;
  double raw_skl = 0.0;
  double log10_skl = 0.0;
};

struct LayerDivergenceProfile {
  std::pair<Category, Category> pair;
  std::vector<LayerDivergence> layers;

  std::uint32_t argmax_layer() const;
  std::string to_csv() const;
};

/// Stacks the token-mean of every record in `set` as the rows of a point matrix.
Eigen::MatrixXd prompt_level_points(const store::RecordSet& set);

/// Symmetric KL between train-split prompt-level hidden states of two categories at each layer.
/// When both categories are equal the set is split into even/odd halves (same-distribution check).
LayerDivergenceProfile layer_divergence_profile(const store::Dataset& dataset,
                                                std::pair<Category, Category> pair,
                                                const std::vector<std::uint32_t>& layers,
                                                const DivergenceConfig& cfg = {});

}  // namespace alert::divergence
