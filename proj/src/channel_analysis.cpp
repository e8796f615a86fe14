#include "alert/channel_analysis.hpp"

#include "alert/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace alert::channels {

const Eigen::VectorXd& ChannelStats::mean(Category c) const {
  const auto& m = mean_by_category[static_cast<int>(c)];
  if (!m) throw Error("no statistics for category " + std::string(to_string(c)));
  return *m;
}

ChannelStats channel_stats(const Eigen::MatrixXd& benign, const Eigen::MatrixXd& harmful,
                           const std::optional<Eigen::MatrixXd>& jailbreak, FeatureKind kind) {
  if (harmful.rows() == 0) throw Error("empty harmful set");
  if (harmful.rows() < 2) throw Error("std undefined: need at least two harmful prompts");
  const Eigen::Index d = harmful.cols();
  if (benign.rows() > 0 && benign.cols() != d) throw Error("dimension mismatch");
  if (jailbreak && jailbreak->rows() > 0 && jailbreak->cols() != d) {
    throw Error("dimension mismatch");
  }

  ChannelStats s;
  s.kind = kind;
  s.d = d;
  const Eigen::RowVectorXd mh = harmful.colwise().mean();
  s.mean_by_category[static_cast<int>(Category::kHarmful)] = mh.transpose();
  if (benign.rows() > 0) {
    s.mean_by_category[static_cast<int>(Category::kBenign)] = benign.colwise().mean().transpose();
  }
  if (jailbreak && jailbreak->rows() > 0) {
    s.mean_by_category[static_cast<int>(Category::kJailbreak)] =
        jailbreak->colwise().mean().transpose();
  }
  s.std_harmful =
      ((harmful.rowwise() - mh).array().square().colwise().sum() / static_cast<double>(harmful.rows()))
          .sqrt()
          .transpose();
  return s;
}

ChannelStats channel_stats(const store::RecordSet& benign, const store::RecordSet& harmful,
                           const store::RecordSet* jailbreak) {
  auto check_same = [&](const store::RecordSet& other) {
    if (other.feature_kind != harmful.feature_kind || other.layer != harmful.layer) {
      throw Error("record sets differ in feature kind or layer");
    }
  };
  check_same(benign);
  std::optional<Eigen::MatrixXd> jb;
  if (jailbreak) {
    check_same(*jailbreak);
    jb = divergence::prompt_level_points(*jailbreak);
  }
  if (harmful.empty()) throw Error("empty harmful set");
  return channel_stats(divergence::prompt_level_points(benign),
                       divergence::prompt_level_points(harmful), jb, harmful.feature_kind);
}

std::optional<double> relative_difference(const ChannelStats& stats, Category p, Eigen::Index i) {
  if (p != Category::kBenign && p != Category::kJailbreak) {
    throw Error("relative difference is defined for benign or jailbreak against harmful");
  }
  if (i < 0 || i >= stats.d) throw Error("channel index out of range");
  if (stats.degenerate(i)) return std::nullopt;
  return std::abs(stats.mean(p)(i) - stats.mean(Category::kHarmful)(i)) / stats.std_harmful(i);
}

std::vector<Eigen::Index> rank_descending(const Eigen::VectorXd& scores,
                                          const std::vector<bool>& eligible) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (eligible.empty() || eligible[static_cast<std::size_t>(i)]) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
  return idx;
}

std::vector<Eigen::Index> RDReport::top() const {
  return {ranking.begin(), ranking.begin() + top_k};
}

double RDReport::mean_top_gap() const {
  if (top_k == 0) return 0.0;
  double sum = 0.0;
  for (auto i : top()) sum += *rd_benign[i] - *rd_jailbreak[i];
  return sum / static_cast<double>(top_k);
}

std::string RDReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "channel,rd_benign,rd_jailbreak,gap\n";
  for (auto i : top()) {
    os << i << ',' << *rd_benign[i] << ',' << *rd_jailbreak[i] << ','
       << *rd_benign[i] - *rd_jailbreak[i] << '\n';
  }
  return os.str();
}

Eigen::VectorXd gap_scores(const ChannelStats& stats) {
  Eigen::VectorXd gap(stats.d);
  for (Eigen::Index i = 0; i < stats.d; ++i) {
    const auto b = relative_difference(stats, Category::kBenign, i);
    const auto j = relative_difference(stats, Category::kJailbreak, i);
    gap(i) = (b && j) ? *b - *j : -std::numeric_limits<double>::infinity();
  }
  return gap;
}

RDReport top_channels(const ChannelStats& stats, Eigen::Index k) {
  RDReport report;
  std::vector<bool> eligible(static_cast<std::size_t>(stats.d));
  Eigen::VectorXd gap = Eigen::VectorXd::Zero(stats.d);
  for (Eigen::Index i = 0; i < stats.d; ++i) {
    report.rd_benign.push_back(relative_difference(stats, Category::kBenign, i));
    report.rd_jailbreak.push_back(relative_difference(stats, Category::kJailbreak, i));
    eligible[static_cast<std::size_t>(i)] = report.rd_benign.back().has_value();
    if (eligible[static_cast<std::size_t>(i)]) {
      gap(i) = *report.rd_benign.back() - *report.rd_jailbreak.back();
    }
  }
  report.ranking = rank_descending(gap, eligible);
  if (k < 0 || k > static_cast<Eigen::Index>(report.ranking.size())) {
    throw Error("K too large: " + std::to_string(k) + " > " +
                std::to_string(report.ranking.size()) + " non-degenerate channels");
  }
  report.top_k = k;
  return report;
}

Histogram rd_histogram(const RDReport& report, Category which, int bins,
                       std::optional<std::pair<double, double>> range) {
  if (bins < 1) throw Error("bins must be >= 1");
  const auto& rd = which == Category::kBenign ? report.rd_benign : report.rd_jailbreak;
  if (which != Category::kBenign && which != Category::kJailbreak) {
    throw Error("histogram is defined for benign or jailbreak RD");
  }
  std::vector<double> values;
  for (auto i : report.top()) values.push_back(*rd[static_cast<std::size_t>(i)]);

  double lo = 0.0;
  double hi = 0.0;
  if (range) {
    std::tie(lo, hi) = *range;
  } else {
    for (double v : values) hi = std::max(hi, v);
    if (hi <= lo) hi = 1.0;
  }
  if (!(hi > lo)) throw Error("histogram range is empty");

  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
  for (double v : values) {
    if (v > 1.0) ++h.count_above_one;
    if (v < lo || v > hi) continue;
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * bins);
    h.counts[std::min(b, h.counts.size() - 1)]++;
  }
  return h;
}

std::string Histogram::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b) {
    os << edges[b] << ',' << edges[b + 1] << ',' << counts[b] << '\n';
  }
  return os.str();
}

IntersectionCurve intersection_rate(const Eigen::VectorXd& scores_g,
                                    const Eigen::VectorXd& scores_c,
                                    const std::vector<double>& alphas) {
  if (scores_g.size() != scores_c.size()) throw Error("channel counts differ");
  const auto n = static_cast<std::size_t>(scores_g.size());
  const auto rank_g = rank_descending(scores_g);
  const auto rank_c = rank_descending(scores_c);

  IntersectionCurve curve;
  std::vector<char> in_g(n);
  for (double alpha : alphas) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("alpha outside (0,1]");
    const auto take = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n)));
    std::fill(in_g.begin(), in_g.end(), 0);
    for (std::size_t i = 0; i < take; ++i) in_g[static_cast<std::size_t>(rank_g[i])] = 1;
    std::size_t both = 0;
    for (std::size_t i = 0; i < take; ++i) both += in_g[static_cast<std::size_t>(rank_c[i])];
    curve.alphas.push_back(alpha);
    curve.ir_values.push_back(n == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(n));
    curve.random_baseline.push_back(alpha * alpha);
  }
  return curve;
}

std::string IntersectionCurve::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "alpha,ir,alpha_squared\n";
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    os << alphas[i] << ',' << ir_values[i] << ',' << random_baseline[i] << '\n';
  }
  return os.str();
}

}  // namespace alert::channels
