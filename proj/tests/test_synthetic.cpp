#include "alert/amplification.hpp"
#include "alert/channel_analysis.hpp"
#include "alert/divergence.hpp"
#include "alert/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

using namespace alert;
using namespace alert::synth;

namespace {

SyntheticConfig small_config(std::uint64_t seed = 2) {
  SyntheticConfig cfg;
  cfg.d_model = 32;
  cfg.d_ffn = 48;
  cfg.planted_channels = 10;
  cfg.train_per_category = 30;
  cfg.test_per_category = 30;
  cfg.seed = seed;
  return cfg;
}

// Two-sided Mann-Whitney U test, normal approximation with tie-corrected ranks.
double mann_whitney_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<std::pair<double, int>> all;
  for (double v : a) all.push_back({v, 0});
  for (double v : b) all.push_back({v, 1});
  std::sort(all.begin(), all.end());
  double rank_sum_a = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second == 0) rank_sum_a += avg;
    }
    i = j;
  }
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double u = rank_sum_a - n1 * (n1 + 1) / 2;
  const double z = (u - n1 * n2 / 2) / std::sqrt(n1 * n2 * (n1 + n2 + 1) / 12);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace

TEST_CASE("config validation and json") {
  SyntheticConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.resolved_ffn_layers() == std::vector<int>{0, 3});
  const auto back = config_from_json(config_to_json(small_config(9)));
  CHECK(config_to_json(back) == config_to_json(small_config(9)));
  CHECK_THROWS_AS(config_from_json(R"({"d_modle": 3})"), Error);
  CHECK(config_from_json(R"({"d_model": 12, "planted_channels": 3})").d_model == 12);
  cfg.safety_layer = 6;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = SyntheticConfig{};
  cfg.planted_channels = 300;  // two disjoint sets of 300 do not fit in 512
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("gated FFN at zero input") {
  auto spec = make_ffn_spec(small_config(), 1);
  spec.b_c.setZero();
  spec.b_g.setZero();
  const auto out = run_ffn(spec, GateActivation::kSigmoid, Eigen::MatrixXd::Zero(3, 32));
  CHECK(out.context.isZero(0.0));
  CHECK(out.hidden.isZero(0.0));
  CHECK(out.gate.isApprox(Eigen::MatrixXd::Constant(3, 48, 0.5)));
  CHECK(gate(GateActivation::kSilu, 0.0) == 0.0);
  CHECK(gate(GateActivation::kTanh, 0.0) == 0.0);
}

TEST_CASE("generated datasets are valid and deterministic") {
  const auto cfg = small_config();
  const auto ds = gen_synthetic(cfg);
  CHECK_NOTHROW(store::validate(ds.manifest, ds.records));
  CHECK(ds.manifest.layers_present == std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5});
  std::map<std::pair<int, int>, int> counts;
  for (const auto& r : ds.records) {
    if (r.layer == 3 && r.feature_kind == FeatureKind::kHidden) {
      ++counts[{static_cast<int>(r.split), static_cast<int>(r.category)}];
      CHECK(r.template_start.has_value() == (r.category == Category::kJailbreak));
    }
  }
  CHECK(counts[{0, 0}] == 30);
  CHECK(counts[{0, 1}] == 30);
  CHECK(counts[{1, 0}] == 30);
  CHECK(counts[{1, 2}] == 30);
  CHECK(counts.size() == 4);
  const auto again = gen_synthetic(cfg);
  REQUIRE(again.records.size() == ds.records.size());
  CHECK(store::encode_activations(again.manifest, again.records) ==
        store::encode_activations(ds.manifest, ds.records));
}

TEST_CASE("stored hidden states equal the gated product of stored features") {
  auto cfg = small_config();
  CHECK(identity_audit(gen_synthetic(cfg), cfg) < 1e-5);
  cfg.store_gating_preactivation = true;
  CHECK(identity_audit(gen_synthetic(cfg), cfg) < 1e-5);
  cfg.sigma = GateActivation::kSilu;
  CHECK(identity_audit(gen_synthetic(cfg), cfg) < 1e-5);
}

TEST_CASE("gaussian KL oracle") {
  CHECK(gaussian_kl_oracle(0.3, 2.0, 0.3, 2.0) == 0.0);
  CHECK(gaussian_kl_oracle(0, 1, 2, 1) == doctest::Approx(2.0));
  CHECK(gaussian_kl_oracle(0, 4, 0, 1) == doctest::Approx(0.5 * (4 - std::log(4.0) - 1)));
  CHECK_THROWS_AS(gaussian_kl_oracle(0, 0, 0, 1), Error);
  CHECK_THROWS_AS(gaussian_kl_oracle(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2),
                                     Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)),
                  Error);
}

TEST_CASE("brute-force neighbors") {
  Eigen::MatrixXd pts(3, 1);
  pts << 0, 1, 3;
  CHECK(brute_knn(pts, 0, 1, true) == 1.0);
  CHECK(brute_knn(pts, 0, 2, true) == 3.0);
  CHECK(brute_knn(pts, 0, 1, false) == 0.0);
  CHECK(brute_knn(pts, Eigen::VectorXd::Constant(1, 2.5), 1) == 0.5);
  CHECK_THROWS_AS(brute_knn(pts, 0, 3, true), Error);
}

TEST_CASE("estimator neighbor distances match brute force on generated sets") {
  const auto ds = gen_synthetic(small_config(4));
  const auto b = divergence::prompt_level_points(
      store::select(ds, Split::kTrain, store::CategoryFilter::only(Category::kBenign), FeatureKind::kHidden, 3));
  const auto h = divergence::prompt_level_points(
      store::select(ds, Split::kTrain, store::CategoryFilter::only(Category::kHarmful), FeatureKind::kHidden, 3));
  const auto self = divergence::kth_neighbor_distances(b, b, 5, true);
  const auto cross = divergence::kth_neighbor_distances(b, h, 5, false);
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    CHECK(self(i) == doctest::Approx(brute_knn(b, i, 5, true)).epsilon(1e-12));
    CHECK(cross(i) == doctest::Approx(brute_knn(h, Eigen::VectorXd(b.row(i).transpose()), 5)).epsilon(1e-12));
  }
}

TEST_CASE("separation is confined to the safety layer") {
  const auto ds = gen_synthetic(small_config(6));
  const auto prof = divergence::layer_divergence_profile(
      ds, {Category::kBenign, Category::kHarmful}, {0, 1, 2, 3, 4, 5});
  CHECK(prof.argmax_layer() == 3);
}

TEST_CASE("without template noise, template and instruction spans look alike") {
  auto cfg = small_config(8);
  cfg.template_noise_scale = 0.0;
  cfg.template_benign_mix = 0.0;
  cfg.template_tokens = cfg.instruction_tokens;  // equal span lengths, equal token-noise averaging
  cfg.token_jitter = 0;
  cfg.test_per_category = 100;
  const auto ds = gen_synthetic(cfg);
  const auto protos = amp::build_prototypes(ds, 3);
  for (auto kind : {FeatureKind::kGating, FeatureKind::kContext}) {
    const auto jb = store::select(ds, Split::kTest, store::CategoryFilter::only(Category::kJailbreak), kind, 3);
    std::vector<double> tmpl, instr;
    for (const auto& r : amp::template_distance_study(jb, protos)) {
      if (r.prototype != Category::kBenign) continue;
      (r.is_template ? tmpl : instr).push_back(r.distance);
    }
    REQUIRE(tmpl.size() == 100);
    CHECK(mann_whitney_p(tmpl, instr) > 0.01);
  }
}

TEST_CASE("zero-shot channel construction") {
  const auto z = zero_shot_channels(100, 20, 2.0, 0.1, 50, 3);
  CHECK(z.benign.rows() == 50);
  CHECK(z.benign.cols() == 100);
  CHECK(z.planted == 20);
  const auto stats = channels::channel_stats(z.benign, z.harmful, z.jailbreak);
  for (Eigen::Index i = 20; i < 100; ++i) {
    CHECK(*channels::relative_difference(stats, Category::kBenign, i) < 1.0);
  }
  const auto recs = as_records(z.benign, Category::kBenign, Split::kTrain, FeatureKind::kContext, 2, "b");
  REQUIRE(recs.size() == 50);
  CHECK(recs[7].prompt_id == "b7");
  CHECK(recs[7].tokens.rows() == 1);
}

TEST_CASE("mix_seed spreads nearby inputs") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(5, 5) == mix_seed(5, 5));
}
