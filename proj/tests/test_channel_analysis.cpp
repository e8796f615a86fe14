#include "alert/channel_analysis.hpp"
#include "alert/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace alert;
using namespace alert::channels;

namespace {

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> r) {
  Eigen::MatrixXd m(r.size(), r.begin()->size());
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Eigen::VectorXd random_scores(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

}  // namespace

TEST_CASE("channel stats use population std") {
  const auto stats = channel_stats(rows({{3.0}, {3.0}}), rows({{0.0}, {2.0}}), std::nullopt);
  CHECK(stats.mean(Category::kHarmful)(0) == doctest::Approx(1.0));
  CHECK(stats.std_harmful(0) == doctest::Approx(1.0));
  CHECK(relative_difference(stats, Category::kBenign, 0).value() == doctest::Approx(2.0));
  CHECK_FALSE(stats.mean_by_category[static_cast<int>(Category::kJailbreak)].has_value());
  CHECK_THROWS_AS(relative_difference(stats, Category::kJailbreak, 0), Error);
}

TEST_CASE("equal means give zero RD; degenerate channels are absent") {
  const auto stats =
      channel_stats(rows({{1.0, 5.0}, {1.0, 5.0}}), rows({{0.0, 4.0}, {2.0, 4.0}}), std::nullopt);
  CHECK(relative_difference(stats, Category::kBenign, 0).value() == 0.0);
  CHECK(stats.degenerate(1));
  CHECK_FALSE(relative_difference(stats, Category::kBenign, 1).has_value());
}

TEST_CASE("channel stats errors") {
  CHECK_THROWS_WITH_AS(channel_stats(rows({{1.0}}), rows({{0.0}}), std::nullopt),
                       doctest::Contains("std undefined"), Error);
  CHECK_THROWS_AS(channel_stats(rows({{1.0, 2.0}}), rows({{0.0}, {1.0}}), std::nullopt), Error);
  CHECK_THROWS_AS(channel_stats(rows({{1.0}}), Eigen::MatrixXd(0, 1), std::nullopt), Error);
}

TEST_CASE("ranking: descending with index tie-break") {
  Eigen::VectorXd s(3);
  s << 5.0, 1.0, 3.0;
  const auto r = rank_descending(s);
  CHECK(r == std::vector<Eigen::Index>{0, 2, 1});
  CHECK(rank_descending(Eigen::VectorXd::Constant(5, 2.0)) ==
        std::vector<Eigen::Index>{0, 1, 2, 3, 4});
  CHECK(rank_descending(s, {true, false, true}) == std::vector<Eigen::Index>{0, 2});
}

TEST_CASE("top_channels ranks by RD gap") {
  // harmful {-1, 1}: mean 0, std 1; jailbreak mean 0 -> gap = RD_B = benign mean
  const auto stats = channel_stats(rows({{5.0, 1.0, 3.0}}), rows({{-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}}),
                                   rows({{0.0, 0.0, 0.0}}));
  const auto rep = top_channels(stats, 2);
  CHECK(rep.top() == std::vector<Eigen::Index>{0, 2});
  CHECK(rep.mean_top_gap() == doctest::Approx(4.0));
  CHECK(top_channels(stats, 3).top() == std::vector<Eigen::Index>{0, 2, 1});
  CHECK_THROWS_WITH_AS(top_channels(stats, 4), doctest::Contains("K too large"), Error);
  CHECK(rep.to_csv().rfind("channel,rd_benign,rd_jailbreak,gap\n", 0) == 0);

  const auto no_jb = channel_stats(rows({{5.0}}), rows({{-1.0}, {1.0}}), std::nullopt);
  CHECK_THROWS_AS(top_channels(no_jb, 1), Error);
}

TEST_CASE("degenerate channels are excluded from rankings") {
  const auto stats = channel_stats(rows({{5.0, 9.0}}), rows({{-1.0, 0.0}, {1.0, 0.0}}),
                                   rows({{0.0, 0.0}}));
  CHECK(std::isinf(gap_scores(stats)(1)));
  CHECK(top_channels(stats, 1).ranking == std::vector<Eigen::Index>{0});
  CHECK_THROWS_AS(top_channels(stats, 2), Error);
}

TEST_CASE("histogram binning") {
  RDReport rep;
  rep.rd_benign = {0.5, 1.5};
  rep.rd_jailbreak = {0.0, 0.0};
  rep.ranking = {0, 1};
  rep.top_k = 2;
  const auto h = rd_histogram(rep, Category::kBenign, 2, std::make_pair(0.0, 2.0));
  CHECK(h.counts == std::vector<std::size_t>{1, 1});
  CHECK(h.count_above_one == 1);
  CHECK(h.edges == std::vector<double>{0.0, 1.0, 2.0});

  const auto z = rd_histogram(rep, Category::kJailbreak, 4);
  CHECK(std::count_if(z.counts.begin(), z.counts.end(), [](auto c) { return c > 0; }) == 1);
  CHECK(z.count_above_one == 0);
  CHECK_THROWS_AS(rd_histogram(rep, Category::kBenign, 0), Error);
}

TEST_CASE("zero-shot channel construction separates benign from jailbreak") {
  const auto z = synth::zero_shot_channels(256, 50, 2.0, 0.1, 200, 21);
  const auto stats = channel_stats(z.benign, z.harmful, z.jailbreak);
  const auto rep = top_channels(stats);
  CHECK(rd_histogram(rep, Category::kBenign, 20).count_above_one >= 45);
  CHECK(rd_histogram(rep, Category::kJailbreak, 20).count_above_one == 0);
}

TEST_CASE("RD invariances") {
  const auto z = synth::zero_shot_channels(8, 3, 2.0, 0.5, 30, 4);
  const auto base = channel_stats(z.benign, z.harmful, z.jailbreak);
  const auto shifted = channel_stats((z.benign.array() + 7.0).matrix(),
                                     (z.harmful.array() + 7.0).matrix(),
                                     Eigen::MatrixXd((z.jailbreak.array() + 7.0).matrix()));
  const auto scaled = channel_stats(z.benign * 3.0, z.harmful * 3.0,
                                    Eigen::MatrixXd(z.jailbreak * 3.0));
  for (Eigen::Index i = 0; i < 8; ++i) {
    for (auto c : {Category::kBenign, Category::kJailbreak}) {
      const double r = *relative_difference(base, c, i);
      CHECK(*relative_difference(shifted, c, i) == doctest::Approx(r).epsilon(1e-9));
      CHECK(*relative_difference(scaled, c, i) == doctest::Approx(r).epsilon(1e-9));
    }
  }
  // scaling harmful about its own mean by c divides RD by c (the gap is fixed)
  const Eigen::RowVectorXd mh = z.harmful.colwise().mean();
  const Eigen::MatrixXd spread = (z.harmful.rowwise() - mh) * 2.0;
  const auto wider = channel_stats(z.benign, Eigen::MatrixXd(spread.rowwise() + mh), std::nullopt);
  for (Eigen::Index i = 0; i < 8; ++i) {
    CHECK(*relative_difference(wider, Category::kBenign, i) ==
          doctest::Approx(*relative_difference(base, Category::kBenign, i) / 2.0).epsilon(1e-9));
  }
}

TEST_CASE("ranking is independent of prompt order") {
  const auto z = synth::zero_shot_channels(300, 50, 2.0, 0.1, 60, 8);
  const auto a = top_channels(channel_stats(z.benign, z.harmful, z.jailbreak));
  const Eigen::MatrixXd rb = z.benign.colwise().reverse();
  const Eigen::MatrixXd rh = z.harmful.colwise().reverse();
  const auto b = top_channels(channel_stats(rb, rh, z.jailbreak));
  CHECK(a.ranking == b.ranking);
}

TEST_CASE("intersection rate examples") {
  std::mt19937_64 rng(1);
  const auto g = random_scores(10, rng);
  const auto same = intersection_rate(g, g, {0.1, 0.25, 0.5, 1.0});
  CHECK(same.ir_values == std::vector<double>{0.1, 0.2, 0.5, 1.0});
  CHECK(same.random_baseline[1] == doctest::Approx(0.0625));

  Eigen::VectorXd up(10), down(10);
  for (int i = 0; i < 10; ++i) {
    up(i) = i;
    down(i) = -i;
  }
  CHECK(intersection_rate(up, down, {0.4}).ir_values[0] == 0.0);
  CHECK(intersection_rate(up, down, {0.4}).to_csv().rfind("alpha,ir,alpha_squared\n", 0) == 0);

  CHECK_THROWS_AS(intersection_rate(up, down, {0.0}), Error);
  CHECK_THROWS_AS(intersection_rate(up, down, {1.5}), Error);
  CHECK_THROWS_AS(intersection_rate(up, Eigen::VectorXd(3), {0.5}), Error);
}

TEST_CASE("intersection rate of independent scores is alpha squared") {
  std::mt19937_64 rng(99);
  double sum = 0;
  for (int s = 0; s < 20; ++s) {
    const auto g = random_scores(4096, rng);
    const auto c = random_scores(4096, rng);
    sum += intersection_rate(g, c, {0.25}).ir_values[0];
  }
  CHECK(std::abs(sum / 20 - 0.0625) <= 0.01);
}

TEST_CASE("intersection rate is bounded and monotone in alpha") {
  std::mt19937_64 rng(3);
  std::vector<double> alphas;
  for (int i = 1; i <= 20; ++i) alphas.push_back(i / 20.0);
  for (int t = 0; t < 10; ++t) {
    const auto g = random_scores(137, rng);
    Eigen::VectorXd c = g + 0.3 * random_scores(137, rng);
    const auto curve = intersection_rate(g, c, alphas);
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      const double rate = std::floor(alphas[i] * 137) / 137;
      CHECK(curve.ir_values[i] >= 0.0);
      CHECK(curve.ir_values[i] <= rate + 1e-12);
      if (i > 0) CHECK(curve.ir_values[i] >= curve.ir_values[i - 1]);
    }
  }
}
