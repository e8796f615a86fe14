#include "alert/divergence.hpp"

#include "alert/amplification.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace alert::divergence {

void DivergenceConfig::validate() const {
  if (k < 1) throw Error("k must be >= 1");
  if (!(distance_floor > 0.0)) throw Error("distance_floor must be > 0");
}

Eigen::VectorXd kth_neighbor_distances(const Eigen::MatrixXd& queries,
                                       const Eigen::MatrixXd& reference, int k,
                                       bool exclude_self) {
  if (queries.cols() != reference.cols()) throw Error("dimension mismatch");
  const Eigen::Index available = reference.rows() - (exclude_self ? 1 : 0);
  if (k < 1 || k > available) throw Error("k too large");
  if (exclude_self && queries.rows() != reference.rows()) {
    throw Error("exclude_self requires queries == reference");
  }

  Eigen::VectorXd out(queries.rows());
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(reference.rows()));
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    dist.clear();
    for (Eigen::Index j = 0; j < reference.rows(); ++j) {
      if (exclude_self && j == i) continue;
      dist.push_back((reference.row(j) - queries.row(i)).squaredNorm());
    }
    auto kth = dist.begin() + (k - 1);
    std::nth_element(dist.begin(), kth, dist.end());
    out(i) = std::sqrt(*kth);
  }
  return out;
}

double knn_kl_estimate(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q,
                       const DivergenceConfig& cfg) {
  cfg.validate();
  if (p.cols() != q.cols()) throw Error("dimension mismatch");
  if (p.rows() <= cfg.k || q.rows() < cfg.k) throw Error("k too large");

  const Eigen::VectorXd rho = kth_neighbor_distances(p, p, cfg.k, /*exclude_self=*/true);
  const Eigen::VectorXd nu = kth_neighbor_distances(p, q, cfg.k, /*exclude_self=*/false);

  const double n = static_cast<double>(p.rows());
  const double m = static_cast<double>(q.rows());
  const double d = static_cast<double>(p.cols());
  const double offset = std::log(m / (n - 1.0));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double r = std::max(rho(i), cfg.distance_floor);
    const double v = std::max(nu(i), cfg.distance_floor);
    sum += d * std::log(v / r) + offset;
  }
  return sum / n;
}

double symmetric_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q,
                    const DivergenceConfig& cfg) {
  return 0.5 * (knn_kl_estimate(p, q, cfg) + knn_kl_estimate(q, p, cfg));
}

double log_scale(double raw) {
  return std::copysign(std::log10(1.0 + std::abs(raw)), raw);
}

std::uint32_t LayerDivergenceProfile::argmax_layer() const {
  if (layers.empty()) throw Error("empty divergence profile");
  auto it = std::max_element(layers.begin(), layers.end(), [](const auto& a, const auto& b) {
    return a.raw_skl < b.raw_skl;
  });
  return it->layer;
}

std::string LayerDivergenceProfile::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "layer,raw_skl,log10_skl\n";
  for (const auto& e : layers) os << e.layer << ',' << e.raw_skl << ',' << e.log10_skl << '\n';
  return os.str();
}

Eigen::MatrixXd prompt_level_points(const store::RecordSet& set) {
  if (set.empty()) return {};
  Eigen::MatrixXd points(static_cast<Eigen::Index>(set.size()), set[0].dim());
  for (std::size_t i = 0; i < set.size(); ++i) {
    points.row(static_cast<Eigen::Index>(i)) =
        amp::prompt_mean_feature(set[i].tokens).transpose();
  }
  return points;
}

LayerDivergenceProfile layer_divergence_profile(const store::Dataset& dataset,
                                                std::pair<Category, Category> pair,
                                                const std::vector<std::uint32_t>& layers,
                                                const DivergenceConfig& cfg) {
  cfg.validate();
  LayerDivergenceProfile profile{pair, {}};
  for (auto layer : layers) {
    const auto first = prompt_level_points(store::select(
        dataset, Split::kTrain, store::CategoryFilter::only(pair.first), FeatureKind::kHidden, layer));
    Eigen::MatrixXd a;
    Eigen::MatrixXd b;
    if (pair.first == pair.second) {
      const Eigen::Index half_a = (first.rows() + 1) / 2;
      a.resize(half_a, first.cols());
      b.resize(first.rows() - half_a, first.cols());
      for (Eigen::Index i = 0; i < first.rows(); ++i) {
        if (i % 2 == 0) a.row(i / 2) = first.row(i);
        else b.row(i / 2) = first.row(i);
      }
    } else {
      a = first;
      b = prompt_level_points(store::select(dataset, Split::kTrain,
                                            store::CategoryFilter::only(pair.second),
                                            FeatureKind::kHidden, layer));
    }
    if (a.rows() < cfg.k + 1 || b.rows() < cfg.k + 1) {
      throw Error("fewer than k+1 prompts at layer " + std::to_string(layer));
    }
    const double raw = symmetric_kl(a, b, cfg);
    profile.layers.push_back({layer, raw, log_scale(raw)});
  }
  return profile;
}

}  // namespace alert::divergence
