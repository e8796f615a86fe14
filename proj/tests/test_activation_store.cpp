#include "alert/activation_store.hpp"
#include "alert/binary_io.hpp"
#include "alert/synthetic.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <cstring>
#include <limits>
#include <random>

using namespace alert;
using alert::testing::make_record;
using alert::testing::TempDir;

namespace {

store::Dataset tiny_dataset() {
  std::vector<store::ActivationRecord> recs;
  TokenMatrix g(2, 4);
  g << 0.5f, -1.0f, 2.0f, 3.25f, 1e-30f, -0.0f, 7.0f, 1e30f;
  recs.push_back(make_record("b0", Category::kBenign, Split::kTrain, 3, FeatureKind::kGating, g));
  TokenMatrix h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  recs.push_back(make_record("h0", Category::kHarmful, Split::kTrain, 3, FeatureKind::kHidden, h));
  auto jb = make_record("j0", Category::kJailbreak, Split::kTest, 5, FeatureKind::kHidden, h);
  jb.template_start = 1;
  recs.push_back(jb);
  store::Dataset ds;
  ds.manifest = store::describe("tiny", {4, 4, 2}, recs);
  ds.records = recs;
  return ds;
}

bool same_records(const std::vector<store::ActivationRecord>& a,
                  const std::vector<store::ActivationRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.prompt_id != y.prompt_id || x.category != y.category || x.split != y.split ||
        x.layer != y.layer || x.feature_kind != y.feature_kind ||
        x.template_start != y.template_start || x.tokens.rows() != y.tokens.rows() ||
        x.tokens.cols() != y.tokens.cols() ||
        std::memcmp(x.tokens.data(), y.tokens.data(), sizeof(float) * x.tokens.size()) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("empty dataset round-trips") {
  TempDir dir("store_empty");
  store::Dataset ds;
  ds.manifest = store::describe("empty", {1, 1, 1}, {});
  store::write_dataset(ds, dir.path());
  const auto back = store::read_dataset(dir.path());
  CHECK(back.manifest == ds.manifest);
  CHECK(back.manifest.record_count == 0);
  CHECK(back.records.empty());
}

TEST_CASE("one benign train record round-trips bit-exactly") {
  TempDir dir("store_one");
  TokenMatrix t(2, 4);
  t << 0.1f, 0.2f, -0.3f, 1e-38f, 3.4e38f, -0.0f, 1.0f / 3.0f, 2.5f;
  std::vector<store::ActivationRecord> recs{
      make_record("p", Category::kBenign, Split::kTrain, 0, FeatureKind::kGating, t)};
  const auto m = store::describe("one", {4, 1, 1}, recs);
  store::write_dataset(m, recs, dir.path());
  const auto back = store::read_dataset(dir.path());
  CHECK(back.manifest == m);
  CHECK(same_records(back.records, recs));
}

TEST_CASE("byte layout matches the documented header and record encoding") {
  TokenMatrix t(1, 2);
  t << 1.0f, -2.0f;
  auto r = make_record("ab", Category::kHarmful, Split::kTrain, 258, FeatureKind::kContext, t);
  std::vector<store::ActivationRecord> recs{r};
  const auto m = store::describe("x", {3, 2, 5}, recs);
  const auto bytes = store::encode_activations(m, recs);
  const std::vector<std::uint8_t> expected_prefix = {
      'A', 'L', 'R', 'T', 1, 0, 0, 0,  // magic, version
      3, 0, 0, 0, 2, 0, 0, 0, 5, 0, 0, 0, 1, 0, 0, 0,  // d_g, d_c, d_h, count
      2, 0, 0, 0, 'a', 'b',            // id
      1, 0, 2, 1, 1,                   // category, split, layer (u16 258), kind
      0xFF, 0xFF, 0xFF, 0xFF,          // template_start absent
      1, 0, 0, 0,                      // n_tokens
      0x00, 0x00, 0x80, 0x3F,          // 1.0f
      0x00, 0x00, 0x00, 0xC0};         // -2.0f
  CHECK(bytes == expected_prefix);
}

TEST_CASE("valid three-record file preserves order") {
  TempDir dir("store_three");
  const auto ds = tiny_dataset();
  store::write_dataset(ds, dir.path());
  const auto back = store::read_dataset(dir.path());
  REQUIRE(back.records.size() == 3);
  CHECK(back.records[0].prompt_id == "b0");
  CHECK(back.records[1].prompt_id == "h0");
  CHECK(back.records[2].prompt_id == "j0");
  CHECK(back.records[2].template_start == 1u);
  CHECK(same_records(back.records, ds.records));
}

TEST_CASE("write rejects invalid records") {
  TempDir dir("store_bad");
  TokenMatrix t(1, 2);
  t << 1.0f, std::numeric_limits<float>::quiet_NaN();
  std::vector<store::ActivationRecord> recs{
      make_record("n", Category::kBenign, Split::kTrain, 0, FeatureKind::kHidden, t)};
  auto m = store::describe("bad", {2, 2, 2}, recs);
  CHECK_THROWS_WITH_AS(store::write_dataset(m, recs, dir.path()), doctest::Contains("non-finite value"),
                       Error);

  recs[0].tokens << 1.0f, 2.0f;
  recs[0].category = Category::kJailbreak;
  CHECK_THROWS_WITH_AS(store::write_dataset(m, recs, dir.path()),
                       doctest::Contains("jailbreak record marked train"), Error);

  recs[0].category = Category::kBenign;
  m.dims[2] = 3;
  CHECK_THROWS_WITH_AS(store::write_dataset(m, recs, dir.path()),
                       doctest::Contains("dimension mismatch"), Error);

  m.dims[2] = 2;
  recs[0].template_start = 5;
  CHECK_THROWS_WITH_AS(store::write_dataset(m, recs, dir.path()),
                       doctest::Contains("template_start"), Error);
}

TEST_CASE("read rejects bad magic, version and truncation") {
  TempDir dir("store_corrupt");
  const auto ds = tiny_dataset();
  store::write_dataset(ds, dir.path());
  const auto path = dir.path() / store::kActivationsFile;
  const auto good = io::read_file(path);

  auto bad = good;
  bad[0] = 'X';
  io::write_file(path, bad);
  CHECK_THROWS_WITH_AS(store::read_dataset(dir.path()), "bad magic", Error);

  bad = good;
  bad[4] = 2;
  io::write_file(path, bad);
  CHECK_THROWS_WITH_AS(store::read_dataset(dir.path()), "unsupported version", Error);

  bad.assign(good.begin(), good.end() - 5);
  io::write_file(path, bad);
  CHECK_THROWS_WITH_AS(store::read_dataset(dir.path()), "truncated payload", Error);

  bad.assign(good.begin(), good.begin() + 40);
  io::write_file(path, bad);
  CHECK_THROWS_WITH_AS(store::read_dataset(dir.path()), "truncated payload", Error);
}

TEST_CASE("load rejects a jailbreak/train record written by a foreign tool") {
  TempDir dir("store_guard");
  auto ds = tiny_dataset();
  auto bytes = store::encode_activations(ds.manifest, ds.records);
  // flip the third record (j0) to split=train directly in the payload
  ds.records[2].split = Split::kTrain;
  const auto flipped = store::encode_activations(ds.manifest, ds.records);
  io::write_file(dir.path() / store::kActivationsFile, flipped);
  io::write_text(dir.path() / store::kManifestFile, store::manifest_to_json(ds.manifest));
  CHECK_THROWS_WITH_AS(store::read_dataset(dir.path()),
                       doctest::Contains("jailbreak record marked train"), Error);
  CHECK(bytes != flipped);
}

TEST_CASE("manifest json carries exactly the manifest fields") {
  const auto ds = tiny_dataset();
  const auto text = store::manifest_to_json(ds.manifest);
  CHECK(text.find("\"format_version\"") != std::string::npos);
  CHECK(text.find("\"layers_present\"") != std::string::npos);
  CHECK(store::manifest_from_json(text) == ds.manifest);
  CHECK_THROWS_AS(store::manifest_from_json("{\"format_version\": 1}"), Error);
}

TEST_CASE("select returns matching records in file order") {
  synth::SyntheticConfig cfg;
  cfg.d_model = 8;
  cfg.d_ffn = 8;
  cfg.planted_channels = 2;
  cfg.n_layers = 5;
  cfg.safety_layer = 4;
  cfg.train_per_category = 10;
  cfg.test_per_category = 3;
  cfg.seed = 3;
  const auto ds = synth::gen_synthetic(cfg);

  const auto benign = store::select(ds, Split::kTrain, store::CategoryFilter::only(Category::kBenign),
                                    FeatureKind::kGating, 4);
  CHECK(benign.size() == 10);
  for (std::size_t i = 1; i < benign.size(); ++i) {
    CHECK(benign.records[i - 1] < benign.records[i]);  // pointers into file-ordered storage
  }

  SUBCASE("jailbreak never appears in train") {
    CHECK(store::select(ds, Split::kTrain, store::CategoryFilter::only(Category::kJailbreak),
                        FeatureKind::kHidden, 4)
              .empty());
  }
  SUBCASE("absent layer is an error") {
    CHECK_THROWS_AS(store::select(ds, Split::kTrain, store::CategoryFilter::all(),
                                  FeatureKind::kHidden, 99),
                    Error);
  }
  SUBCASE("single-category selects partition the records") {
    for (auto split : {Split::kTrain, Split::kTest}) {
      for (auto kind : kAllKinds) {
        for (std::uint32_t layer : ds.manifest.layers_present) {
          const auto all = store::select(ds, split, store::CategoryFilter::all(), kind, layer);
          std::size_t total = 0;
          for (auto c : {Category::kBenign, Category::kHarmful, Category::kJailbreak}) {
            total += store::select(ds, split, store::CategoryFilter::only(c), kind, layer).size();
          }
          CHECK(total == all.size());
        }
      }
    }
  }
}

TEST_CASE("property: random datasets round-trip bit-exactly") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> small(1, 5);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int trial = 0; trial < 25; ++trial) {
    const std::array<std::uint32_t, 3> dims{static_cast<std::uint32_t>(small(rng)),
                                            static_cast<std::uint32_t>(small(rng)),
                                            static_cast<std::uint32_t>(small(rng))};
    std::vector<store::ActivationRecord> recs;
    const int n = small(rng) - 1;
    for (int i = 0; i < n; ++i) {
      const auto kind = static_cast<FeatureKind>(rng() % 3);
      const auto cat = static_cast<Category>(rng() % 3);
      const auto split = cat == Category::kJailbreak ? Split::kTest : static_cast<Split>(rng() % 2);
      TokenMatrix t(small(rng), dims[static_cast<int>(kind)]);
      for (Eigen::Index k = 0; k < t.size(); ++k) {
        float f;
        do {
          const std::uint32_t b = bits(rng);
          std::memcpy(&f, &b, sizeof f);
        } while (!std::isfinite(f));
        t.data()[k] = f;
      }
      auto r = make_record("id" + std::to_string(i), cat, split,
                           static_cast<std::uint32_t>(rng() % 40), kind, t);
      if (rng() % 2) r.template_start = static_cast<std::uint32_t>(rng() % (t.rows() + 1));
      recs.push_back(r);
    }
    const auto m = store::describe("prop", dims, recs);
    const auto bytes = store::encode_activations(m, recs);
    CHECK(same_records(store::decode_activations(bytes, m), recs));
  }
}
