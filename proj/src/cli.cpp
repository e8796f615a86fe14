#include "alert/cli.hpp"

#include "alert/activation_store.hpp"
#include "alert/amplification.hpp"
#include "alert/binary_io.hpp"
#include "alert/channel_analysis.hpp"
#include "alert/detector.hpp"
#include "alert/divergence.hpp"
#include "alert/synthetic.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <sstream>

namespace alert::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string data;
  std::string out;
  std::string config;
  std::string model;
  std::string prototypes;
  std::string report = "csv";
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> layer;
  std::string pair = "benign,harmful";
  std::vector<std::uint32_t> layers;
  int k = 5;
  std::string kind = "gating";
  int top_k = static_cast<int>(channels::kDefaultTopK);
  int bins = 20;
  std::vector<double> hist_range;
  std::vector<double> alphas;
  int budget = 20;
  vib::HyperParams hp;
  bool no_layer_amp = false;
  bool no_module_amp = false;
  bool no_token_amp = false;
};

void add_hparams(CLI::App* cmd, Options& o) {
  cmd->add_option("--hidden", o.hp.hidden_dim, "VIB hidden width")->capture_default_str();
  cmd->add_option("--latent", o.hp.latent_dim, "VIB latent width")->capture_default_str();
  cmd->add_option("--beta", o.hp.beta, "KL coefficient")->capture_default_str();
  cmd->add_option("--mc", o.hp.mc_samples, "Monte-Carlo samples")->capture_default_str();
  cmd->add_option("--lr", o.hp.lr, "learning rate")->capture_default_str();
  cmd->add_option("--epochs", o.hp.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--batch", o.hp.batch_size, "mini-batch size")->capture_default_str();
}

void require_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw Error("not a directory: " + path);
}

void require_seed(const Options& o) {
  if (!o.seed) throw CLI::RequiredError("--seed");
}

void emit(const Options& o, const std::string& text, std::ostream& out) {
  if (o.out.empty()) {
    out << text;
  } else {
    if (auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    io::write_text(o.out, text);
  }
}

std::uint32_t target_layer(const Options& o, const store::Dataset& ds, std::ostream& err) {
  const auto layer = amp::select_layer(amp::LayerConfig{o.layer}, ds.manifest);
  if (!o.layer) {
    err << "alert: using default target layer " << layer
        << " (fourth transformer block, 0-based index)\n";
  }
  return layer;
}

store::Dataset load(const Options& o, std::ostream& err) {
  require_dir(o.data);
  auto ds = store::read_dataset(o.data);
  err << "alert: loaded " << ds.records.size() << " records from " << o.data << '\n';
  return ds;
}

int cmd_synth(const Options& o, std::ostream& out, std::ostream& err) {
  require_seed(o);
  synth::SyntheticConfig cfg;
  if (!o.config.empty()) cfg = synth::config_from_json(io::read_text(o.config));
  cfg.seed = *o.seed;
  const auto ds = synth::gen_synthetic(cfg);
  store::write_dataset(ds, o.out);
  io::write_text(fs::path(o.out) / "synth_config.json", synth::config_to_json(cfg));
  err << "alert: wrote " << ds.records.size() << " records to " << o.out << '\n';
  out << "records," << ds.records.size() << '\n';
  return kExitOk;
}

int cmd_validate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto ds = load(o, err);
  std::size_t counts[2][3] = {};
  for (const auto& r : ds.records) {
    counts[static_cast<int>(r.split)][static_cast<int>(r.category)]++;
  }
  out << "split,category,records\n";
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 3; ++c)
      out << to_string(static_cast<Split>(s)) << ',' << to_string(static_cast<Category>(c)) << ','
          << counts[s][c] << '\n';
  return kExitOk;
}

std::pair<Category, Category> parse_pair(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw CLI::ValidationError("--pair", "expected A,B");
  return {parse_category(s.substr(0, comma)), parse_category(s.substr(comma + 1))};
}

int cmd_analyze_layers(const Options& o, std::ostream& out, std::ostream& err) {
  const auto pair = parse_pair(o.pair);
  const auto ds = load(o, err);
  const auto layers = o.layers.empty() ? ds.manifest.layers_present : o.layers;
  divergence::DivergenceConfig cfg;
  cfg.k = o.k;
  const auto profile = divergence::layer_divergence_profile(ds, pair, layers, cfg);
  err << "alert: divergence peaks at layer " << profile.argmax_layer() << '\n';
  emit(o, profile.to_csv(), out);
  return kExitOk;
}

channels::ChannelStats stats_for(const store::Dataset& ds, FeatureKind kind, std::uint32_t layer) {
  using store::CategoryFilter;
  const auto b = store::select(ds, Split::kTrain, CategoryFilter::only(Category::kBenign), kind, layer);
  const auto h = store::select(ds, Split::kTrain, CategoryFilter::only(Category::kHarmful), kind, layer);
  const auto j = store::select(ds, Split::kTest, CategoryFilter::only(Category::kJailbreak), kind, layer);
  if (j.empty()) throw Error("channel analysis needs test-split jailbreak records");
  return channels::channel_stats(b, h, &j);
}

int cmd_analyze_channels(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.out.empty()) throw CLI::RequiredError("--out");
  const auto kind = parse_feature_kind(o.kind);
  std::optional<std::pair<double, double>> range;
  if (!o.hist_range.empty()) {
    if (o.hist_range.size() != 2) throw CLI::ValidationError("--hist-range", "expected lo,hi");
    range = std::make_pair(o.hist_range[0], o.hist_range[1]);
  }
  std::vector<double> alphas = o.alphas;
  if (alphas.empty()) {
    for (int i = 1; i <= 20; ++i) alphas.push_back(i * 0.05);
  }
  const auto ds = load(o, err);
  const auto layer = target_layer(o, ds, err);
  const auto stats = stats_for(ds, kind, layer);
  const auto report = channels::top_channels(stats, o.top_k);
  const auto hb = channels::rd_histogram(report, Category::kBenign, o.bins, range);
  const auto hj = channels::rd_histogram(report, Category::kJailbreak, o.bins, range);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::string suffix = "_" + o.kind + ".csv";
  io::write_text(dir / ("rd" + suffix), report.to_csv());
  io::write_text(dir / ("hist_benign" + suffix), hb.to_csv());
  io::write_text(dir / ("hist_jailbreak" + suffix), hj.to_csv());

  const auto curve = channels::intersection_rate(
      channels::gap_scores(stats_for(ds, FeatureKind::kGating, layer)),
      channels::gap_scores(stats_for(ds, FeatureKind::kContext, layer)), alphas);
  io::write_text(dir / "ir.csv", curve.to_csv());

  out << "kind,top_k,benign_rd_above_1,jailbreak_rd_above_1,mean_top_gap\n"
      << o.kind << ',' << report.top_k << ',' << hb.count_above_one << ',' << hj.count_above_one
      << ',' << report.mean_top_gap() << '\n';
  return kExitOk;
}

int cmd_build_prototypes(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.out.empty()) throw CLI::RequiredError("--out");
  const auto ds = load(o, err);
  const auto layer = target_layer(o, ds, err);
  const auto protos = amp::build_prototypes(ds, layer);
  amp::write_prototypes(protos, o.out);
  out << "layer,benign_prompts,harmful_prompts\n"
      << layer << ',' << protos.benign_count[0] << ',' << protos.harmful_count[0] << '\n';
  return kExitOk;
}

int cmd_study_templates(const Options& o, std::ostream& out, std::ostream& err) {
  const auto ds = load(o, err);
  const auto layer = target_layer(o, ds, err);
  amp::PrototypeSet protos;
  if (!o.prototypes.empty()) {
    require_dir(o.prototypes);
    protos = amp::read_prototypes(o.prototypes);
    if (protos.layer != layer) throw Error("prototype layer does not match --layer");
  } else {
    protos = amp::build_prototypes(ds, layer);
  }
  std::vector<amp::TemplateDistance> rows;
  for (auto kind : {FeatureKind::kGating, FeatureKind::kContext}) {
    const auto jb = store::select(ds, Split::kTest, store::CategoryFilter::only(Category::kJailbreak),
                                  kind, layer);
    auto part = amp::template_distance_study(jb, protos);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  emit(o, amp::template_distances_csv(rows), out);
  return kExitOk;
}

detector::AblationFlags flags_of(const Options& o) {
  detector::AblationFlags f{!o.no_layer_amp, !o.no_module_amp, !o.no_token_amp};
  f.validate();
  return f;
}

int cmd_fit(const Options& o, std::ostream& out, std::ostream& err) {
  require_seed(o);
  if (o.out.empty()) throw CLI::RequiredError("--out");
  const auto flags = flags_of(o);
  auto hp = o.hp;
  hp.seed = *o.seed;
  hp.validate(false);
  const auto ds = load(o, err);
  if (flags.layer_amp) target_layer(o, ds, err);
  const auto det = detector::fit(ds, hp, flags, amp::LayerConfig{o.layer});
  detector::save_detector(det, o.out);
  for (std::size_t k = 0; k < det.kinds.size(); ++k) {
    io::write_text(fs::path(o.out) / ("history_" + std::string(to_string(det.kinds[k])) + ".csv"),
                   det.histories[k].to_csv());
  }
  out << "layer,models,final_train_accuracy\n" << det.layer << ',' << det.models.size();
  for (const auto& h : det.histories) out << ',' << h.epochs.back().accuracy;
  out << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.report != "csv") throw CLI::ValidationError("--report", "only csv is supported");
  require_dir(o.model);
  const auto det = detector::load_detector(o.model);
  const auto ds = load(o, err);
  const auto m = detector::evaluate(det, ds);
  emit(o, detector::Metrics::csv_header() + "\n" + m.csv_row() + "\n", out);
  return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
  require_seed(o);
  auto hp = o.hp;
  hp.seed = *o.seed;
  hp.validate(false);
  const auto ds = load(o, err);
  target_layer(o, ds, err);
  const auto rows = detector::ablation_run(ds, hp, amp::LayerConfig{o.layer});
  emit(o, detector::ablation_csv(rows), out);
  return kExitOk;
}

int cmd_search(const Options& o, std::ostream& out, std::ostream& err) {
  require_seed(o);
  const auto ds = load(o, err);
  target_layer(o, ds, err);
  auto base = o.hp;
  base.seed = *o.seed;
  const auto result = detector::search_hparams(ds, o.budget, *o.seed, base, amp::LayerConfig{o.layer});
  const auto& b = result.best;
  err << "alert: best trial " << result.best_trial << " hidden=" << b.hidden_dim
      << " latent=" << b.latent_dim << " beta=" << b.beta << " mc=" << b.mc_samples << '\n';
  emit(o, result.trials_csv(), out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"alert: zero-shot jailbreak detection from transformer activations", "alert"};
  app.require_subcommand(1);

  auto data_opt = [&](CLI::App* c) { c->add_option("--data", o.data, "dataset directory")->required(); };
  auto seed_opt = [&](CLI::App* c) { c->add_option("--seed", o.seed, "RNG seed (required)"); };
  auto layer_opt = [&](CLI::App* c) {
    c->add_option("--layer", o.layer, "target layer index (default 3)");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic activation dataset");
  synth->add_option("--config", o.config, "synthetic config JSON");
  synth->add_option("--out", o.out, "output dataset directory")->required();
  seed_opt(synth);

  auto* validate = app.add_subcommand("validate", "validate a dataset and print record counts");
  data_opt(validate);

  auto* layers = app.add_subcommand("analyze-layers", "layer-wise symmetric KL profile (CSV)");
  data_opt(layers);
  layers->add_option("--pair", o.pair, "category pair, e.g. benign,harmful")->capture_default_str();
  layers->add_option("--layers", o.layers, "layers to analyze (default: all)")->delimiter(',');
  layers->add_option("--k", o.k, "neighbor rank")->capture_default_str();
  layers->add_option("--out", o.out, "output CSV (default stdout)");

  auto* chans = app.add_subcommand("analyze-channels", "RD scores, histograms and intersection rate");
  data_opt(chans);
  layer_opt(chans);
  chans->add_option("--kind", o.kind, "gating|context|hidden")->capture_default_str();
  chans->add_option("--top-k", o.top_k, "channels kept in the ranking")->capture_default_str();
  chans->add_option("--bins", o.bins, "histogram bins")->capture_default_str();
  chans->add_option("--hist-range", o.hist_range, "histogram range lo,hi")->delimiter(',');
  chans->add_option("--alphas", o.alphas, "intersection sample rates")->delimiter(',');
  chans->add_option("--out", o.out, "output directory")->required();

  auto* study = app.add_subcommand("study-templates", "template/instruction prototype distances (CSV)");
  data_opt(study);
  layer_opt(study);
  study->add_option("--prototypes", o.prototypes, "prototype directory (default: build from train)");
  study->add_option("--out", o.out, "output CSV (default stdout)");

  auto* protos = app.add_subcommand("build-prototypes", "write benign/harmful prototype vectors");
  data_opt(protos);
  layer_opt(protos);
  protos->add_option("--out", o.out, "output directory")->required();

  auto flag_opts = [&](CLI::App* c) {
    c->add_flag("--no-layer-amp", o.no_layer_amp, "use layer 0 instead of the target layer");
    c->add_flag("--no-module-amp", o.no_module_amp, "use hidden states instead of gating/context");
    c->add_flag("--no-token-amp", o.no_token_amp, "plain token mean instead of weighted aggregate");
  };

  auto* fit = app.add_subcommand("fit", "train a detector on benign/harmful train prompts");
  data_opt(fit);
  layer_opt(fit);
  seed_opt(fit);
  add_hparams(fit, o);
  flag_opts(fit);
  fit->add_option("--out", o.out, "model directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a detector on benign/jailbreak test prompts");
  eval->add_option("--model", o.model, "model directory")->required();
  data_opt(eval);
  eval->add_option("--report", o.report, "report format")->capture_default_str();
  eval->add_option("--out", o.out, "output CSV (default stdout)");

  auto* ablate = app.add_subcommand("ablate", "four-row amplification ablation table (CSV)");
  data_opt(ablate);
  layer_opt(ablate);
  seed_opt(ablate);
  add_hparams(ablate, o);
  ablate->add_option("--out", o.out, "output CSV (default stdout)");

  auto* search = app.add_subcommand("search", "seeded random hyperparameter search (CSV trial log)");
  data_opt(search);
  layer_opt(search);
  seed_opt(search);
  add_hparams(search, o);
  search->add_option("--budget", o.budget, "number of trials")->capture_default_str();
  search->add_option("--out", o.out, "output CSV (default stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (*synth) return cmd_synth(o, out, err);
    if (*validate) return cmd_validate(o, out, err);
    if (*layers) return cmd_analyze_layers(o, out, err);
    if (*chans) return cmd_analyze_channels(o, out, err);
    if (*study) return cmd_study_templates(o, out, err);
    if (*protos) return cmd_build_prototypes(o, out, err);
    if (*fit) return cmd_fit(o, out, err);
    if (*eval) return cmd_eval(o, out, err);
    if (*ablate) return cmd_ablate(o, out, err);
    if (*search) return cmd_search(o, out, err);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::Error& e) {
    err << "alert: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "alert: error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "alert: error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace alert::cli
