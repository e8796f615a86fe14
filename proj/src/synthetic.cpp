#include "alert/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace alert::synth {
namespace {

using Rng = std::mt19937_64;

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * normal(rng);
  return m;
}

std::string prompt_id(Split split, Category c, int index) {
  std::ostringstream os;
  os << to_string(split) << '-' << to_string(c) << '-' << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

struct Planted {
  std::vector<int> context;
  std::vector<int> gating;
};

Planted planted_channels(const SyntheticConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0xC4A77E15ULL));
  std::vector<int> perm(static_cast<std::size_t>(cfg.d_ffn));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n = static_cast<std::size_t>(cfg.planted_channels);
  Planted p;
  p.context.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
  p.gating.assign(perm.begin() + static_cast<std::ptrdiff_t>(n),
                  perm.begin() + static_cast<std::ptrdiff_t>(2 * n));
  return p;
}

TokenMatrix to_float(const Eigen::MatrixXd& m) { return m.cast<float>(); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void SyntheticConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid synthetic config: ") + what);
  };
  need(d_model >= 1 && d_ffn >= 1 && n_layers >= 1, "dimensions and layer count must be >= 1");
  need(safety_layer >= 0 && safety_layer < n_layers, "safety_layer must be < n_layers");
  need(planted_channels >= 0 && 2 * planted_channels <= d_ffn,
       "2 * planted_channels must fit in d_ffn");
  need(prompt_noise_scale >= 0 && token_noise_scale >= 0 && template_noise_scale >= 0,
       "noise scales must be >= 0");
  need(instruction_tokens >= 1 && template_tokens >= 0, "token counts must be >= 1");
  need(token_jitter >= 0 && token_jitter < instruction_tokens, "token_jitter < instruction_tokens");
  need(train_per_category >= 1 && test_per_category >= 1, "prompt counts must be >= 1");
  for (int l : ffn_layers) need(l >= 0 && l < n_layers, "ffn_layers entries must be < n_layers");
}

std::vector<int> SyntheticConfig::resolved_ffn_layers() const {
  std::vector<int> layers = ffn_layers.empty() ? std::vector<int>{0, safety_layer} : ffn_layers;
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return layers;
}

namespace {

GateActivation parse_gate(const std::string& s) {
  if (s == "sigmoid") return GateActivation::kSigmoid;
  if (s == "silu") return GateActivation::kSilu;
  if (s == "tanh") return GateActivation::kTanh;
  throw Error("unknown gate activation: " + s);
}

const char* gate_name(GateActivation g) {
  switch (g) {
    case GateActivation::kSigmoid: return "sigmoid";
    case GateActivation::kSilu: return "silu";
    case GateActivation::kTanh: return "tanh";
  }
  return "?";
}

}  // namespace

SyntheticConfig config_from_json(const std::string& text) {
  SyntheticConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("name", c.name);
    opt("d_model", c.d_model);
    opt("d_ffn", c.d_ffn);
    opt("n_layers", c.n_layers);
    opt("safety_layer", c.safety_layer);
    opt("ffn_layers", c.ffn_layers);
    opt("planted_channels", c.planted_channels);
    opt("benign_shift", c.benign_shift);
    opt("harmful_shift", c.harmful_shift);
    opt("prompt_noise_scale", c.prompt_noise_scale);
    opt("token_noise_scale", c.token_noise_scale);
    opt("template_noise_scale", c.template_noise_scale);
    opt("template_benign_mix", c.template_benign_mix);
    opt("gate_bias", c.gate_bias);
    opt("instruction_tokens", c.instruction_tokens);
    opt("template_tokens", c.template_tokens);
    opt("token_jitter", c.token_jitter);
    opt("train_per_category", c.train_per_category);
    opt("test_per_category", c.test_per_category);
    opt("store_gating_preactivation", c.store_gating_preactivation);
    opt("seed", c.seed);
    if (j.contains("sigma")) c.sigma = parse_gate(j.at("sigma").get<std::string>());
    for (const auto& [key, _] : j.items()) {
      static const char* known[] = {"name", "d_model", "d_ffn", "n_layers", "safety_layer",
                                    "ffn_layers", "planted_channels", "benign_shift",
                                    "harmful_shift", "prompt_noise_scale", "token_noise_scale",
                                    "template_noise_scale", "template_benign_mix", "gate_bias",
                                    "instruction_tokens", "template_tokens", "token_jitter",
                                    "train_per_category", "test_per_category",
                                    "store_gating_preactivation", "seed", "sigma"};
      if (std::find_if(std::begin(known), std::end(known),
                       [&](const char* k) { return key == k; }) == std::end(known)) {
        throw Error("unknown synthetic config key: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const SyntheticConfig& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["d_model"] = c.d_model;
  j["d_ffn"] = c.d_ffn;
  j["n_layers"] = c.n_layers;
  j["safety_layer"] = c.safety_layer;
  j["ffn_layers"] = c.ffn_layers;
  j["planted_channels"] = c.planted_channels;
  j["benign_shift"] = c.benign_shift;
  j["harmful_shift"] = c.harmful_shift;
  j["prompt_noise_scale"] = c.prompt_noise_scale;
  j["token_noise_scale"] = c.token_noise_scale;
  j["template_noise_scale"] = c.template_noise_scale;
  j["template_benign_mix"] = c.template_benign_mix;
  j["gate_bias"] = c.gate_bias;
  j["instruction_tokens"] = c.instruction_tokens;
  j["template_tokens"] = c.template_tokens;
  j["token_jitter"] = c.token_jitter;
  j["train_per_category"] = c.train_per_category;
  j["test_per_category"] = c.test_per_category;
  j["sigma"] = gate_name(c.sigma);
  j["store_gating_preactivation"] = c.store_gating_preactivation;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

GatedFFNSpec make_ffn_spec(const SyntheticConfig& cfg, int layer) {
  Rng rng(mix_seed(cfg.seed, 0x1000ULL + static_cast<std::uint64_t>(layer)));
  GatedFFNSpec s;
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  s.w_c = gaussian(cfg.d_ffn, cfg.d_model, in_scale, rng);
  s.w_g = gaussian(cfg.d_ffn, cfg.d_model, in_scale, rng);
  s.w_out = gaussian(cfg.d_model, cfg.d_ffn, 1.0 / std::sqrt(static_cast<double>(cfg.d_ffn)), rng);
  s.b_c = Eigen::VectorXd::Zero(cfg.d_ffn);
  s.b_g = Eigen::VectorXd::Constant(cfg.d_ffn, cfg.gate_bias);
  return s;
}

double gate(GateActivation kind, double v) {
  switch (kind) {
    case GateActivation::kSigmoid: return 1.0 / (1.0 + std::exp(-v));
    case GateActivation::kSilu: return v / (1.0 + std::exp(-v));
    case GateActivation::kTanh: return std::tanh(v);
  }
  return v;
}

FFNOutput run_ffn(const GatedFFNSpec& spec, GateActivation sigma, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd* context_shift, const Eigen::MatrixXd* gate_shift) {
  FFNOutput out;
  out.context = (x * spec.w_c.transpose()).rowwise() + spec.b_c.transpose();
  out.gate_pre = (x * spec.w_g.transpose()).rowwise() + spec.b_g.transpose();
  if (context_shift) out.context += *context_shift;
  if (gate_shift) out.gate_pre += *gate_shift;
  out.gate = out.gate_pre.unaryExpr([sigma](double v) { return gate(sigma, v); });
  out.hidden = out.context.cwiseProduct(out.gate) * spec.w_out.transpose();
  return out;
}

store::Dataset gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto ffn_layers = cfg.resolved_ffn_layers();
  const auto planted = planted_channels(cfg);
  std::vector<GatedFFNSpec> specs;
  for (int l = 0; l < cfg.n_layers; ++l) specs.push_back(make_ffn_spec(cfg, l));

  struct PromptPlan {
    Split split;
    Category category;
    int index;
  };
  std::vector<PromptPlan> plan;
  for (Category c : {Category::kBenign, Category::kHarmful}) {
    for (int i = 0; i < cfg.train_per_category; ++i) plan.push_back({Split::kTrain, c, i});
  }
  for (Category c : {Category::kBenign, Category::kJailbreak}) {
    for (int i = 0; i < cfg.test_per_category; ++i) plan.push_back({Split::kTest, c, i});
  }

  std::vector<store::ActivationRecord> records;
  for (std::size_t p = 0; p < plan.size(); ++p) {
    const auto& pp = plan[p];
    Rng rng(mix_seed(cfg.seed, 0x2000000ULL + p));
    std::uniform_int_distribution<int> jitter(-cfg.token_jitter, cfg.token_jitter);
    const int n_instr = cfg.instruction_tokens + jitter(rng);
    const bool is_jb = pp.category == Category::kJailbreak;
    const int n_tmpl = is_jb ? cfg.template_tokens : 0;
    const int n = n_instr + n_tmpl;
    const std::string id = prompt_id(pp.split, pp.category, pp.index);

    for (int l = 0; l < cfg.n_layers; ++l) {
      Eigen::MatrixXd x = gaussian(n, cfg.d_model, cfg.token_noise_scale, rng);
      const Eigen::RowVectorXd u = gaussian(1, cfg.d_model, cfg.prompt_noise_scale, rng);
      x.rowwise() += u;
      std::bernoulli_distribution coin(0.5);
      for (int t = n_instr; t < n; ++t)
        for (int j = 0; j < cfg.d_model; ++j) x(t, j) += coin(rng) ? cfg.template_noise_scale
                                                                   : -cfg.template_noise_scale;

      Eigen::MatrixXd shift_c = Eigen::MatrixXd::Zero(n, cfg.d_ffn);
      Eigen::MatrixXd shift_g = Eigen::MatrixXd::Zero(n, cfg.d_ffn);
      if (l == cfg.safety_layer) {
        const double instr_shift = pp.category == Category::kBenign ? cfg.benign_shift
                                                                    : cfg.harmful_shift;
        const double tmpl_shift = cfg.template_benign_mix * cfg.benign_shift;
        for (int t = 0; t < n; ++t) {
          const double s = t < n_instr ? instr_shift : tmpl_shift;
          for (int ch : planted.context) shift_c(t, ch) = s;
          for (int ch : planted.gating) shift_g(t, ch) = s;
        }
      }
      const auto out = run_ffn(specs[static_cast<std::size_t>(l)], cfg.sigma, x, &shift_c, &shift_g);

      auto emit = [&](FeatureKind kind, const Eigen::MatrixXd& tokens) {
        store::ActivationRecord r;
        r.prompt_id = id;
        r.category = pp.category;
        r.split = pp.split;
        r.layer = static_cast<std::uint32_t>(l);
        r.feature_kind = kind;
        r.tokens = to_float(tokens);
        if (is_jb) r.template_start = static_cast<std::uint32_t>(n_instr);
        records.push_back(std::move(r));
      };
      if (std::binary_search(ffn_layers.begin(), ffn_layers.end(), l)) {
        emit(FeatureKind::kGating, cfg.store_gating_preactivation ? out.gate_pre : out.gate);
        emit(FeatureKind::kContext, out.context);
      }
      emit(FeatureKind::kHidden, out.hidden);
    }
  }

  store::Dataset ds;
  ds.manifest = store::describe(cfg.name,
                                {static_cast<std::uint32_t>(cfg.d_ffn),
                                 static_cast<std::uint32_t>(cfg.d_ffn),
                                 static_cast<std::uint32_t>(cfg.d_model)},
                                records);
  ds.records = std::move(records);
  store::validate(ds.manifest, ds.records);
  return ds;
}

double identity_audit(const store::Dataset& ds, const SyntheticConfig& cfg) {
  std::map<std::pair<std::string, std::uint32_t>, std::array<const store::ActivationRecord*, 3>>
      groups;
  for (const auto& r : ds.records) {
    groups[{r.prompt_id, r.layer}][static_cast<int>(r.feature_kind)] = &r;
  }
  std::map<std::uint32_t, GatedFFNSpec> specs;
  double worst = 0.0;
  for (const auto& [key, recs] : groups) {
    if (!recs[0] || !recs[1] || !recs[2]) continue;
    auto it = specs.find(key.second);
    if (it == specs.end()) {
      it = specs.emplace(key.second, make_ffn_spec(cfg, static_cast<int>(key.second))).first;
    }
    const Eigen::MatrixXd g = recs[0]->tokens.cast<double>();
    const Eigen::MatrixXd gated =
        cfg.store_gating_preactivation
            ? Eigen::MatrixXd(g.unaryExpr([&](double v) { return gate(cfg.sigma, v); }))
            : g;
    const Eigen::MatrixXd h =
        recs[1]->tokens.cast<double>().cwiseProduct(gated) * it->second.w_out.transpose();
    worst = std::max(worst, (h - recs[2]->tokens.cast<double>()).cwiseAbs().maxCoeff());
  }
  return worst;
}

double gaussian_kl_oracle(const Eigen::VectorXd& mu1, const Eigen::VectorXd& var1,
                          const Eigen::VectorXd& mu2, const Eigen::VectorXd& var2) {
  if (mu1.size() != var1.size() || mu1.size() != mu2.size() || mu1.size() != var2.size()) {
    throw Error("dimension mismatch");
  }
  if ((var1.array() <= 0).any() || (var2.array() <= 0).any()) {
    throw Error("variances must be positive");
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu1.size(); ++i) {
    const double diff = mu2(i) - mu1(i);
    kl += var1(i) / var2(i) + diff * diff / var2(i) - 1.0 + std::log(var2(i) / var1(i));
  }
  return 0.5 * kl;
}

double gaussian_kl_oracle(double mu1, double var1, double mu2, double var2) {
  return gaussian_kl_oracle(Eigen::VectorXd::Constant(1, mu1), Eigen::VectorXd::Constant(1, var1),
                            Eigen::VectorXd::Constant(1, mu2), Eigen::VectorXd::Constant(1, var2));
}

namespace {

double plain_distance(const Eigen::MatrixXd& points, Eigen::Index row, const double* q) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const double d = points(row, j) - q[j];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double brute_knn(const Eigen::MatrixXd& points, Eigen::Index query, int k, bool exclude_self) {
  std::vector<double> q(points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) q[static_cast<std::size_t>(j)] = points(query, j);
  std::vector<double> all;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (exclude_self && i == query) continue;
    all.push_back(plain_distance(points, i, q.data()));
  }
  if (k < 1 || static_cast<std::size_t>(k) > all.size()) throw Error("k too large");
  std::sort(all.begin(), all.end());
  return all[static_cast<std::size_t>(k - 1)];
}

double brute_knn(const Eigen::MatrixXd& points, const Eigen::VectorXd& query, int k) {
  if (query.size() != points.cols()) throw Error("dimension mismatch");
  std::vector<double> all;
  for (Eigen::Index i = 0; i < points.rows(); ++i) all.push_back(plain_distance(points, i, query.data()));
  if (k < 1 || static_cast<std::size_t>(k) > all.size()) throw Error("k too large");
  std::sort(all.begin(), all.end());
  return all[static_cast<std::size_t>(k - 1)];
}

ZeroShotChannels zero_shot_channels(int d, int planted, double benign_shift,
                                    double jailbreak_shift, int prompts, std::uint64_t seed) {
  if (planted > d || prompts < 2) throw Error("invalid zero-shot channel construction");
  Rng rng(seed);
  ZeroShotChannels z;
  z.planted = planted;
  z.benign = gaussian(prompts, d, 1.0, rng);
  z.harmful = gaussian(prompts, d, 1.0, rng);
  z.jailbreak = gaussian(prompts, d, 1.0, rng);
  z.benign.leftCols(planted).array() += benign_shift;
  z.jailbreak.leftCols(planted).array() += jailbreak_shift;
  return z;
}

std::vector<store::ActivationRecord> as_records(const Eigen::MatrixXd& points, Category category,
                                                Split split, FeatureKind kind, std::uint32_t layer,
                                                const std::string& id_prefix) {
  std::vector<store::ActivationRecord> out;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    store::ActivationRecord r;
    r.prompt_id = id_prefix + std::to_string(i);
    r.category = category;
    r.split = split;
    r.feature_kind = kind;
    r.layer = layer;
    r.tokens = points.row(i).cast<float>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace alert::synth
