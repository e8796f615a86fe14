#include "alert/detector.hpp"

#include "alert/binary_io.hpp"
#include "alert/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace alert::detector {
namespace {

constexpr std::uint64_t kEvalSalt = 0xE7A1ULL;
constexpr std::uint64_t kFoldSalt = 0xF01DULL;

vib::Mat<Scalar> feature_matrix(const std::vector<PromptRecords>& prompts, FeatureKind kind,
                                bool token_amp, const amp::PrototypeSet* protos) {
  if (prompts.empty()) return {};
  const auto d = prompts.front().get(kind).dim();
  vib::Mat<Scalar> x(static_cast<Eigen::Index>(prompts.size()), d);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& r = prompts[i].get(kind);
    if (r.dim() != d) throw Error("dimension mismatch");
    x.row(static_cast<Eigen::Index>(i)) =
        prompt_feature(r, token_amp, protos).cast<Scalar>().transpose();
  }
  return x;
}

int label_of(Category c) { return c == Category::kBenign ? 0 : 1; }

store::RecordSet as_set(const std::vector<PromptRecords>& prompts, Category c, FeatureKind k,
                        std::uint32_t layer) {
  store::RecordSet s{Split::kTrain, k, layer, {}};
  for (const auto& p : prompts) {
    if (p.category == c) s.records.push_back(&p.get(k));
  }
  return s;
}

// In-memory datasets bypass the store's load-time guard, so training entry points re-check.
void require_zero_shot(const store::Dataset& dataset) {
  for (const auto& r : dataset.records) {
    if (r.split == Split::kTrain && r.category == Category::kJailbreak) {
      throw Error("jailbreak record marked train: '" + r.prompt_id + "'");
    }
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

void AblationFlags::validate() const {
  if (token_amp && !module_amp) throw Error("token_amp requires module_amp");
}

std::array<AblationFlags, 4> AblationFlags::table_rows() {
  return {AblationFlags{false, false, false}, AblationFlags{true, false, false},
          AblationFlags{true, true, false}, AblationFlags{true, true, true}};
}

Metrics Metrics::from_confusion(long tp, long fp, long tn, long fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  const long total = tp + fp + tn + fn;
  m.accuracy = total == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total);
  const long denom = 2 * tp + fp + fn;
  m.f1 = denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
  return m;
}

Metrics Metrics::from_predictions(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.size() != pred.size()) throw Error("prediction count mismatch");
  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 1) (pred[i] == 1 ? tp : fn)++;
    else (pred[i] == 1 ? fp : tn)++;
  }
  return from_confusion(tp, fp, tn, fn);
}

std::string Metrics::csv_header() { return "accuracy,f1,tp,fp,tn,fn"; }

std::string Metrics::csv_row() const {
  std::ostringstream os;
  os.precision(10);
  os << accuracy << ',' << f1 << ',' << tp << ',' << fp << ',' << tn << ',' << fn;
  return os.str();
}

const store::ActivationRecord& PromptRecords::get(FeatureKind k) const {
  const auto* r = by_kind[static_cast<int>(k)];
  if (!r) {
    throw Error("prompt '" + prompt_id + "' has no " + std::string(to_string(k)) + " record");
  }
  return *r;
}

std::vector<PromptRecords> group_prompts(const store::Dataset& dataset, Split split,
                                         store::CategoryFilter filter, std::uint32_t layer) {
  if (!dataset.manifest.has_layer(layer)) {
    throw Error("layer " + std::to_string(layer) + " not present in dataset");
  }
  std::vector<PromptRecords> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : dataset.records) {
    if (r.split != split || r.layer != layer || !filter.accepts(r.category)) continue;
    auto [it, fresh] = index.try_emplace(r.prompt_id, out.size());
    if (fresh) out.push_back({r.prompt_id, r.category, r.split, {}});
    auto& p = out[it->second];
    if (p.category != r.category) throw Error("prompt '" + r.prompt_id + "' has mixed categories");
    auto& slot = p.by_kind[static_cast<int>(r.feature_kind)];
    if (slot) throw Error("prompt '" + r.prompt_id + "' has duplicate records");
    slot = &r;
  }
  return out;
}

Eigen::VectorXd prompt_feature(const store::ActivationRecord& record, bool token_amp,
                               const amp::PrototypeSet* protos) {
  if (!token_amp) return amp::prompt_mean_feature(record.tokens);
  if (!protos) throw Error("token amplification needs prototypes");
  return amp::amplified_feature(record, *protos).vector;
}

Detector fit_prompts(const std::vector<PromptRecords>& train, std::uint32_t layer,
                     const vib::HyperParams& hp, const AblationFlags& flags) {
  flags.validate();
  hp.validate(false);
  for (const auto& p : train) {
    if (p.split != Split::kTrain) throw Error("fit uses train-split prompts only");
    if (p.category == Category::kJailbreak) throw Error("jailbreak prompt in training data");
  }

  Detector det;
  det.layer = layer;
  det.flags = flags;
  det.hp = hp;
  if (flags.module_amp) {
    det.kinds = {FeatureKind::kGating, FeatureKind::kContext};
    det.prototypes = amp::build_prototypes(
        as_set(train, Category::kBenign, FeatureKind::kGating, layer),
        as_set(train, Category::kHarmful, FeatureKind::kGating, layer),
        as_set(train, Category::kBenign, FeatureKind::kContext, layer),
        as_set(train, Category::kHarmful, FeatureKind::kContext, layer));
  } else {
    det.kinds = {FeatureKind::kHidden};
  }

  std::vector<int> labels;
  for (const auto& p : train) labels.push_back(label_of(p.category));

  for (std::size_t k = 0; k < det.kinds.size(); ++k) {
    const auto x = feature_matrix(train, det.kinds[k], flags.token_amp, &det.prototypes);
    vib::HyperParams model_hp = hp;
    model_hp.seed = synth::mix_seed(hp.seed, k);
    Model model = vib::init_model<Scalar>(model_hp, x.cols());
    det.histories.push_back(vib::train(model, x, labels));
    det.models.push_back(std::move(model));
  }
  return det;
}

Detector fit(const store::Dataset& dataset, const vib::HyperParams& hp, const AblationFlags& flags,
             const amp::LayerConfig& layer_cfg) {
  flags.validate();
  require_zero_shot(dataset);
  const std::uint32_t layer = flags.layer_amp ? amp::select_layer(layer_cfg, dataset.manifest) : 0;
  store::CategoryFilter filter;
  filter.benign = true;
  filter.harmful = true;
  const auto train = group_prompts(dataset, Split::kTrain, filter, layer);
  const bool has_b = std::any_of(train.begin(), train.end(),
                                 [](const auto& p) { return p.category == Category::kBenign; });
  const bool has_h = std::any_of(train.begin(), train.end(),
                                 [](const auto& p) { return p.category == Category::kHarmful; });
  if (!has_b || !has_h) throw Error("train split needs benign and harmful prompts");
  return fit_prompts(train, layer, hp, flags);
}

Prediction combine(const std::vector<Eigen::Vector2d>& per_model) {
  if (per_model.empty()) throw Error("no classifier outputs");
  Prediction p;
  for (const auto& v : per_model) p.score += v;
  p.score /= static_cast<double>(per_model.size());
  p.label = p.score(0) > p.score(1) ? 0 : 1;
  return p;
}

std::vector<Prediction> predict_all(const Detector& det, const std::vector<PromptRecords>& prompts,
                                    vib::Rng& rng) {
  if (prompts.empty()) return {};
  std::vector<Eigen::Matrix2Xd> probs;
  for (std::size_t k = 0; k < det.kinds.size(); ++k) {
    for (const auto& p : prompts) {
      if (p.get(det.kinds[k]).layer != det.layer) throw Error("record layer does not match detector");
    }
    const auto x = feature_matrix(prompts, det.kinds[k], det.flags.token_amp, &det.prototypes);
    if (x.cols() != det.models[k].input_dim()) throw Error("dimension mismatch");
    probs.push_back(vib::forward_proba_batch(det.models[k], vib::Mat<Scalar>(x.transpose()),
                                             det.models[k].hp.mc_samples, rng));
  }
  std::vector<Prediction> out;
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(prompts.size()); ++j) {
    std::vector<Eigen::Vector2d> per_model;
    for (const auto& pr : probs) per_model.push_back(pr.col(j));
    out.push_back(combine(per_model));
  }
  return out;
}

Prediction predict(const Detector& det, const PromptRecords& prompt, vib::Rng& rng) {
  return predict_all(det, {prompt}, rng).front();
}

vib::Rng evaluation_rng(const Detector& det) { return vib::Rng(synth::mix_seed(det.hp.seed, kEvalSalt)); }

Metrics evaluate(const Detector& det, const store::Dataset& dataset) {
  store::CategoryFilter filter;
  filter.benign = true;
  filter.jailbreak = true;
  const auto test = group_prompts(dataset, Split::kTest, filter, det.layer);
  if (test.empty()) throw Error("empty test split");
  auto rng = evaluation_rng(det);
  const auto preds = predict_all(det, test, rng);
  std::vector<int> truth, labels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    truth.push_back(label_of(test[i].category));
    labels.push_back(preds[i].label);
  }
  return Metrics::from_predictions(truth, labels);
}

std::vector<AblationRow> ablation_run(const store::Dataset& dataset, const vib::HyperParams& hp,
                                      const amp::LayerConfig& layer_cfg) {
  std::vector<AblationRow> rows;
  for (const auto& flags : AblationFlags::table_rows()) {
    const Detector det = fit(dataset, hp, flags, layer_cfg);
    rows.push_back({flags, det.layer, evaluate(det, dataset)});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "row,layer_amp,module_amp,token_amp,layer," << Metrics::csv_header() << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << i + 1 << ',' << r.flags.layer_amp << ',' << r.flags.module_amp << ','
       << r.flags.token_amp << ',' << r.layer << ',' << r.metrics.csv_row() << '\n';
  }
  return os.str();
}

vib::HyperParams sample_hparams(vib::Rng& rng, const vib::HyperParams& base) {
  vib::HyperParams hp = base;
  hp.hidden_dim = 768 + 256 * std::uniform_int_distribution<int>(0, 5)(rng);
  hp.latent_dim = 256 + 64 * std::uniform_int_distribution<int>(0, 12)(rng);
  hp.beta = std::pow(10.0, std::uniform_real_distribution<double>(-4.0, -2.0)(rng));
  hp.mc_samples = std::uniform_int_distribution<int>(1, 30)(rng);
  return hp;
}

SearchResult search_hparams(const store::Dataset& dataset, int budget, std::uint64_t seed,
                            const vib::HyperParams& base, const amp::LayerConfig& layer_cfg) {
  if (budget < 1) throw Error("budget must be >= 1");
  require_zero_shot(dataset);
  const std::uint32_t layer = amp::select_layer(layer_cfg, dataset.manifest);

  // stratified 20% validation fold of the train split
  std::vector<PromptRecords> fit_fold, val_fold;
  vib::Rng fold_rng(synth::mix_seed(seed, kFoldSalt));
  for (Category c : {Category::kBenign, Category::kHarmful}) {
    auto prompts = group_prompts(dataset, Split::kTrain, store::CategoryFilter::only(c), layer);
    if (prompts.size() < 2) throw Error("search needs at least two train prompts per category");
    std::shuffle(prompts.begin(), prompts.end(), fold_rng);
    const auto n_val = std::max<std::size_t>(1, prompts.size() / 5);
    val_fold.insert(val_fold.end(), prompts.begin(), prompts.begin() + static_cast<std::ptrdiff_t>(n_val));
    fit_fold.insert(fit_fold.end(), prompts.begin() + static_cast<std::ptrdiff_t>(n_val), prompts.end());
  }
  std::vector<int> truth;
  for (const auto& p : val_fold) truth.push_back(label_of(p.category));

  SearchResult result;
  vib::Rng sampler(seed);
  for (int t = 0; t < budget; ++t) {
    Trial trial;
    trial.index = t;
    trial.hp = sample_hparams(sampler, base);
    trial.hp.seed = synth::mix_seed(seed, 0x7000ULL + static_cast<std::uint64_t>(t));
    trial.hp.validate(true);
    const Detector det = fit_prompts(fit_fold, layer, trial.hp, AblationFlags{});
    auto rng = evaluation_rng(det);
    const auto preds = predict_all(det, val_fold, rng);
    std::vector<int> labels;
    for (const auto& p : preds) labels.push_back(p.label);
    trial.validation = Metrics::from_predictions(truth, labels);
    result.trials.push_back(trial);
    if (t == 0 || trial.validation.f1 > result.trials[static_cast<std::size_t>(result.best_trial)].validation.f1) {
      result.best_trial = t;
    }
  }
  result.best = result.trials[static_cast<std::size_t>(result.best_trial)].hp;
  return result;
}

std::string SearchResult::trials_csv() const {
  std::ostringstream os;
  os << "trial,hidden_dim,latent_dim,beta,mc_samples,seed,val_accuracy,val_f1,best\n";
  for (const auto& t : trials) {
    std::ostringstream beta;
    beta.precision(17);
    beta << t.hp.beta;
    os << t.index << ',' << t.hp.hidden_dim << ',' << t.hp.latent_dim << ',' << beta.str() << ','
       << t.hp.mc_samples << ',' << t.hp.seed << ',' << fmt(t.validation.accuracy) << ','
       << fmt(t.validation.f1) << ',' << (t.index == best_trial) << '\n';
  }
  return os.str();
}

namespace {

nlohmann::ordered_json hp_to_json(const vib::HyperParams& hp) {
  nlohmann::ordered_json j;
  j["hidden_dim"] = hp.hidden_dim;
  j["latent_dim"] = hp.latent_dim;
  j["beta"] = hp.beta;
  j["mc_samples"] = hp.mc_samples;
  j["lr"] = hp.lr;
  j["epochs"] = hp.epochs;
  j["seed"] = hp.seed;
  j["batch_size"] = hp.batch_size;
  return j;
}

vib::HyperParams hp_from_json(const nlohmann::json& j) {
  vib::HyperParams hp;
  hp.hidden_dim = j.at("hidden_dim").get<int>();
  hp.latent_dim = j.at("latent_dim").get<int>();
  hp.beta = j.at("beta").get<double>();
  hp.mc_samples = j.at("mc_samples").get<int>();
  hp.lr = j.at("lr").get<double>();
  hp.epochs = j.at("epochs").get<int>();
  hp.seed = j.at("seed").get<std::uint64_t>();
  hp.batch_size = j.at("batch_size").get<int>();
  return hp;
}

std::string model_file(FeatureKind k) { return "model_" + std::string(to_string(k)) + ".bin"; }

}  // namespace

void save_detector(const Detector& det, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["layer"] = det.layer;
  j["flags"] = {{"layer_amp", det.flags.layer_amp},
                {"module_amp", det.flags.module_amp},
                {"token_amp", det.flags.token_amp}};
  j["hparams"] = hp_to_json(det.hp);
  auto kinds = nlohmann::json::array();
  for (auto k : det.kinds) kinds.push_back(std::string(to_string(k)));
  j["kinds"] = kinds;
  io::write_text(dir / "detector.json", j.dump(2) + "\n");
  for (std::size_t k = 0; k < det.kinds.size(); ++k) {
    vib::save_model(det.models[k], dir / model_file(det.kinds[k]));
  }
  if (det.flags.module_amp) amp::write_prototypes(det.prototypes, dir);
}

Detector load_detector(const std::filesystem::path& dir) {
  Detector det;
  try {
    const auto j = nlohmann::json::parse(io::read_text(dir / "detector.json"));
    if (j.at("format_version").get<int>() != 1) throw Error("unsupported version");
    det.layer = j.at("layer").get<std::uint32_t>();
    const auto& f = j.at("flags");
    det.flags = {f.at("layer_amp").get<bool>(), f.at("module_amp").get<bool>(),
                 f.at("token_amp").get<bool>()};
    det.flags.validate();
    det.hp = hp_from_json(j.at("hparams"));
    for (const auto& k : j.at("kinds")) det.kinds.push_back(parse_feature_kind(k.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid detector.json: ") + e.what());
  }
  for (auto k : det.kinds) det.models.push_back(vib::load_model<Scalar>(dir / model_file(k)));
  if (det.flags.module_amp) {
    det.prototypes = amp::read_prototypes(dir);
    if (det.prototypes.layer != det.layer) throw Error("prototype layer does not match detector");
  }
  return det;
}

}  // namespace alert::detector
