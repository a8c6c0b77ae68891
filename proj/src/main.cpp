#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "ddia/attack.hpp"
#include "ddia/config.hpp"
#include "ddia/evalkit.hpp"
#include "ddia/io.hpp"

namespace fs = std::filesystem;
using namespace ddia;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration file (key = value sections)");
  cmd->add_option("--set", args.overrides, "Override a config entry, e.g. --set attack.delta=0.3");
  cmd->add_option("--out", args.out_dir, "Output directory (default from config or DDIA_OUT_DIR)");
}

RunConfig build_run_config(const CommonArgs& args) {
  ConfigFile cfg;
  if (!args.config_path.empty()) cfg = load_config(args.config_path);
  for (const std::string& ov : args.overrides) apply_override(cfg, ov);
  RunConfig rc = run_config_from(cfg);
  if (!args.out_dir.empty()) rc.out_dir = args.out_dir;
  return rc;
}

PowerGrid load_grid(const RunConfig& rc) {
  if (!fs::exists(rc.case_path))
    throw ConfigError("run.case: file does not exist: " + rc.case_path);
  return load_case_file(rc.case_path);
}

std::vector<int> to_internal(const PowerGrid& grid, const std::vector<int>& external) {
  std::vector<int> out;
  for (int id : external) {
    auto it = grid.id_to_int.find(id);
    if (it == grid.id_to_int.end())
      throw ConfigError("attack.region: bus " + std::to_string(id) + " is not in the case");
    out.push_back(it->second);
  }
  return out;
}

std::string dataset_path(const RunConfig& rc) { return rc.out_dir + "/dataset.bin"; }
std::string checkpoint_path(const RunConfig& rc) { return rc.out_dir + "/model.ckpt"; }

Dataset require_dataset(const RunConfig& rc, const std::string& explicit_path) {
  std::string p = explicit_path.empty() ? dataset_path(rc) : explicit_path;
  if (!fs::exists(p))
    throw ConfigError("dataset file not found: " + p + " (run `ddia gen-data` first)");
  return load_dataset(p);
}

Localizer require_model(const RunConfig& rc, const PowerGrid& grid,
                        const std::string& explicit_path) {
  std::string p = explicit_path.empty() ? checkpoint_path(rc) : explicit_path;
  if (!fs::exists(p))
    throw ConfigError("checkpoint not found: " + p + " (run `ddia train` first)");
  return load_localizer(p, grid);
}

void report_metrics_csv(const std::string& path, const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::vector<std::vector<std::string>> csv;
  for (const auto& [name, m] : rows)
    csv.push_back({name, std::to_string(m.tp), std::to_string(m.tn), std::to_string(m.fp),
                   std::to_string(m.fn), format_double(m.accuracy), format_double(m.precision),
                   format_double(m.recall), format_double(m.false_alarm), format_double(m.f1)});
  write_csv(path, {"slice", "tp", "tn", "fp", "fn", "accuracy", "precision", "recall",
                   "false_alarm", "f1"},
            csv);
}

// Train on a fixed index split and return validation metrics.
MetricsReport train_eval_fold(const PowerGrid& grid, const RunConfig& rc, const Dataset& data,
                              const FoldSplit& fold, const LocalizerConfig& mcfg,
                              Localizer* keep_model = nullptr) {
  Dataset tr = subset(data, fold.train);
  Dataset va = subset(data, fold.validation);
  Localizer model = make_localizer(grid, mcfg, rc.model_seed);
  model.label_buses = data.label_buses;
  std::vector<Vec> dummy;
  train_localizer(model, tr.windows, tr.labels, va.windows, va.labels, rc.train);
  std::vector<Vec> preds = model_predict_all(model, va);
  MetricsReport m = compute_metrics(preds, va.labels);
  if (keep_model) *keep_model = std::move(model);
  return m;
}

int cmd_parse(const std::string& path) {
  PowerGrid g = load_case_file(path);
  int rated = 0;
  for (const Branch& b : g.branches)
    if (b.on && b.rateA > 0) ++rated;
  std::cout << "buses=" << g.n() << " branches=" << g.n_branches() << " gens=" << g.gens.size()
            << " rated_lines=" << rated << " slack=" << g.ext_ids[g.slack]
            << " baseMVA=" << g.baseMVA << "\n";
  return 0;
}

int cmd_attack(const RunConfig& rc_in) {
  RunConfig rc = rc_in;
  PowerGrid grid = load_grid(rc);
  rc.attack.region_buses = to_internal(grid, rc.attack.region_buses);
  fs::create_directories(rc.out_dir);
  std::vector<Vec> pool =
      generate_normal_pool(grid, rc.attack.pool_size, rc.attack.seed ^ 0xdd1a5eedULL);
  Rng rng(rc.attack.seed);
  AttackSample s = run_attack_trial(grid, rc.attack, pool, rng);

  std::cout << "feasible=" << (s.feasible ? "yes" : "no");
  if (!s.feasible) std::cout << " note=\"" << s.note << "\"";
  std::cout << "\n";
  if (s.feasible) {
    std::cout << "region=";
    for (size_t i = 0; i < s.region.size(); ++i)
      std::cout << (i ? "," : "") << grid.ext_ids[s.region[i]];
    std::cout << " exact_model=" << (s.exact_model ? "yes" : "no") << "\n";
    for (size_t i = 0; i < s.region.size(); ++i)
      std::cout << "  bus " << grid.ext_ids[s.region[i]] << ": dP=" << format_double(s.delta_dp(i))
                << " MW, dQ=" << format_double(s.delta_dq(i)) << " MVAr\n";
    if (s.target_branch >= 0) {
      const Branch& br = grid.branches[s.target_branch];
      std::cout << "target_line=" << grid.ext_ids[br.from] << "-" << grid.ext_ids[br.to]
                << " overload=" << format_double(s.overload)
                << " post_loading=" << format_double(s.post_loading) << "\n";
    }
    std::cout << "bypassed_detection=" << (s.bypassed_bdd ? "yes" : "no")
              << " max_r_norm=" << format_double(s.max_r_norm) << "\n";
    std::cout << "distance_index=" << format_double(s.distance)
              << " pool_max=" << format_double(s.pool_max) << "\n";
  }
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"feasible", s.feasible ? "1" : "0"});
  rows.push_back({"bypassed", s.bypassed_bdd ? "1" : "0"});
  rows.push_back({"max_r_norm", format_double(s.max_r_norm)});
  rows.push_back({"overload", format_double(s.overload)});
  rows.push_back({"post_loading", format_double(s.post_loading)});
  rows.push_back({"distance_index", format_double(s.distance)});
  rows.push_back({"pool_max", format_double(s.pool_max)});
  rows.push_back({"rounds", std::to_string(s.rounds)});
  rows.push_back({"note", s.note});
  write_csv(rc.out_dir + "/attack_trial.csv", {"field", "value"}, rows);
  write_manifest(rc.out_dir, rc, {{"command", "attack"}});
  return 0;
}

int cmd_sweep(const RunConfig& rc_in, int trials, const std::vector<double>& integrities) {
  RunConfig rc = rc_in;
  PowerGrid grid = load_grid(rc);
  rc.attack.region_buses = to_internal(grid, rc.attack.region_buses);
  fs::create_directories(rc.out_dir);
  std::vector<double> levels =
      integrities.empty() ? std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0} : integrities;
  std::vector<std::vector<std::string>> rows;
  PlotSeries series{"success rate", {}, {}};
  for (double gi : levels) {
    AttackConfig a = rc.attack;
    a.integrity = gi;
    double rate = attack_success_rate(grid, a, trials, rc.attack.seed);
    std::cout << "integrity=" << format_double(gi) << " success=" << format_double(rate) << "\n";
    rows.push_back({format_double(gi), format_double(rate), std::to_string(trials)});
    series.x.push_back(gi);
    series.y.push_back(rate);
  }
  write_csv(rc.out_dir + "/sweep_success.csv", {"integrity", "success_rate", "trials"}, rows);
  write_svg_plot(rc.out_dir + "/sweep_success.svg", "Attack success vs information integrity",
                 "information integrity", "success rate", {series});
  write_manifest(rc.out_dir, rc, {{"command", "sweep-success"}, {"trials", std::to_string(trials)}});
  return 0;
}

int cmd_gen_data(const RunConfig& rc_in) {
  RunConfig rc = rc_in;
  PowerGrid grid = load_grid(rc);
  rc.attack.region_buses = to_internal(grid, rc.attack.region_buses);
  fs::create_directories(rc.out_dir);
  Dataset ds = generate_attack_dataset(grid, rc.attack, rc.n_normal, rc.n_attacked, rc.data_seed);
  persist_dataset(ds, dataset_path(rc));
  std::cout << "windows=" << ds.size() << " labels=" << ds.n_labels() << " T=" << ds.T
            << " file=" << dataset_path(rc) << "\n";
  write_manifest(rc.out_dir, rc, {{"command", "gen-data"}, {"windows", std::to_string(ds.size())}});
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data_file) {
  PowerGrid grid = load_grid(rc);
  fs::create_directories(rc.out_dir);
  Dataset ds = require_dataset(rc, data_file);
  std::vector<FoldSplit> folds = kfold_split(ds, std::max(rc.folds, 2), rc.eval_seed);
  Dataset tr = subset(ds, folds[0].train);
  Dataset va = subset(ds, folds[0].validation);
  LocalizerConfig mcfg = rc.model;
  mcfg.T = ds.T;
  Localizer model = make_localizer(grid, mcfg, rc.model_seed);
  model.label_buses = ds.label_buses;
  TrainHistory hist = train_localizer(model, tr.windows, tr.labels, va.windows, va.labels, rc.train);
  save_localizer(checkpoint_path(rc), model);

  std::vector<std::vector<std::string>> rows;
  for (const EpochStat& e : hist.epochs)
    rows.push_back({std::to_string(e.epoch), format_double(e.train_loss),
                    format_double(e.val_accuracy)});
  write_csv(rc.out_dir + "/training_history.csv", {"epoch", "loss", "val_accuracy"}, rows);
  std::vector<Vec> preds = model_predict_all(model, va);
  MetricsReport m = compute_metrics(preds, va.labels);
  std::cout << "trained epochs=" << hist.epochs.size() << " wall_s=" << format_double(hist.wall_seconds)
            << " val_f1=" << format_double(m.f1) << " checkpoint=" << checkpoint_path(rc) << "\n";
  write_manifest(rc.out_dir, rc, {{"command", "train"}, {"val_f1", format_double(m.f1)}});
  return 0;
}

int cmd_locate(const RunConfig& rc, const std::string& data_file, const std::string& ckpt) {
  PowerGrid grid = load_grid(rc);
  fs::create_directories(rc.out_dir);
  Localizer model = require_model(rc, grid, ckpt);
  Dataset ds = require_dataset(rc, data_file);
  std::vector<std::vector<std::string>> rows;
  long flagged = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    LocatedLabels loc = predict_locations(model, ds.windows[i].x);
    std::string buses;
    for (size_t j = 0; j + 1 < loc.labels.size(); ++j)
      if (loc.labels[j]) {
        if (!buses.empty()) buses += " ";
        buses += std::to_string(grid.ext_ids[model.label_buses[j]]);
      }
    bool sys = loc.labels.back() != 0;
    flagged += sys;
    rows.push_back({std::to_string(i), sys ? "1" : "0", buses,
                    format_double(loc.probabilities(loc.probabilities.size() - 1))});
  }
  write_csv(rc.out_dir + "/locations.csv", {"window", "attacked", "buses", "system_probability"},
            rows);
  std::cout << "windows=" << ds.size() << " flagged=" << flagged
            << " report=" << rc.out_dir + "/locations.csv" << "\n";
  write_manifest(rc.out_dir, rc, {{"command", "locate"}});
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& data_file, const std::string& ckpt) {
  PowerGrid grid = load_grid(rc);
  fs::create_directories(rc.out_dir);
  Localizer model = require_model(rc, grid, ckpt);
  Dataset ds = require_dataset(rc, data_file);

  std::vector<Vec> preds = model_predict_all(model, ds);
  MetricsReport all = compute_metrics(preds, ds.labels);
  // Per-label-slot slices plus the overall micro average.
  std::vector<std::pair<std::string, MetricsReport>> slices{{"micro", all}};
  for (int j = 0; j < model.n_labels(); ++j) {
    long tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
      bool p = preds[i](j) >= 0.5, t = ds.labels[i](j) >= 0.5;
      (p ? (t ? tp : fp) : (t ? fn : tn))++;
    }
    std::string name = j + 1 == model.n_labels()
                           ? std::string("system")
                           : "bus_" + std::to_string(grid.ext_ids[model.label_buses[j]]);
    slices.emplace_back(name, metrics_from_counts(tp, tn, fp, fn));
  }
  report_metrics_csv(rc.out_dir + "/metrics.csv", slices);

  // ROC on the system label.
  Vec sys_scores(ds.size());
  std::vector<int> sys_labels(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    sys_scores(i) = preds[i](model.n_labels() - 1);
    sys_labels[i] = ds.labels[i](model.n_labels() - 1) >= 0.5 ? 1 : 0;
  }
  RocCurve roc = roc_curve(sys_scores, sys_labels);
  std::vector<std::vector<std::string>> roc_rows;
  for (size_t i = 0; i < roc.fpr.size(); ++i)
    roc_rows.push_back({format_double(roc.thresholds[i]), format_double(roc.fpr[i]),
                        format_double(roc.tpr[i])});
  write_csv(rc.out_dir + "/roc.csv", {"threshold", "fpr", "tpr"}, roc_rows);
  write_svg_plot(rc.out_dir + "/roc.svg",
                 "ROC, system label (AUC=" + format_double(roc.auc) + ")",
                 "false positive rate", "true positive rate",
                 {{"model", roc.fpr, roc.tpr}, {"chance", {0, 1}, {0, 1}}});

  // 2-D principal-component view of the flattened windows.
  std::vector<Vec> feats;
  feats.reserve(ds.size());
  for (const InputWindow& w : ds.windows) feats.push_back(w.x.data);
  PcaProjection pca = pca_project(feats, 2);
  std::vector<std::vector<std::string>> pca_rows;
  PlotSeries norm{"normal", {}, {}}, att{"attacked", {}, {}};
  for (size_t i = 0; i < ds.size(); ++i) {
    pca_rows.push_back({format_double(pca.coords(i, 0)), format_double(pca.coords(i, 1)),
                        sys_labels[i] ? "1" : "0"});
    (sys_labels[i] ? att : norm).x.push_back(pca.coords(i, 0));
    (sys_labels[i] ? att : norm).y.push_back(pca.coords(i, 1));
  }
  write_csv(rc.out_dir + "/pca.csv", {"pc1", "pc2", "attacked"}, pca_rows);
  write_svg_plot(rc.out_dir + "/pca.svg",
                 "Window scatter in the top-2 principal plane "
                 "(explained=" + format_double(pca.explained_ratio) + ")",
                 "pc1", "pc2", {norm, att});

  std::cout << "windows=" << ds.size() << " f1=" << format_double(all.f1)
            << " false_alarm=" << format_double(all.false_alarm)
            << " auc=" << format_double(roc.auc) << "\n";
  write_manifest(rc.out_dir, rc, {{"command", "eval"}, {"f1", format_double(all.f1)}});
  return 0;
}

int cmd_ablate(const RunConfig& rc, const std::string& data_file,
               const std::vector<double>& scales) {
  PowerGrid grid = load_grid(rc);
  fs::create_directories(rc.out_dir);
  Dataset ds = require_dataset(rc, data_file);
  std::vector<FoldSplit> folds = kfold_split(ds, std::max(rc.folds, 2), rc.eval_seed);
  std::vector<std::vector<std::string>> rows;

  std::vector<std::string> structures{"T-S", "S-T-S", "T-S-T"};
  for (const std::string& st : structures) {
    LocalizerConfig m = rc.model;
    m.T = ds.T;
    m.structure = st;
    MetricsReport r = train_eval_fold(grid, rc, ds, folds[0], m);
    std::cout << "structure=" << st << " f1=" << format_double(r.f1) << "\n";
    rows.push_back({"structure", st, format_double(r.f1), format_double(r.false_alarm)});
  }
  std::vector<double> svals = scales.empty() ? std::vector<double>{1.0, 2.0, 8.0} : scales;
  PlotSeries scale_series{"F1 vs scale", {}, {}};
  for (double s : svals) {
    LocalizerConfig m = rc.model;
    m.T = ds.T;
    m.scale = s;
    MetricsReport r = train_eval_fold(grid, rc, ds, folds[0], m);
    std::cout << "scale=" << format_double(s) << " f1=" << format_double(r.f1) << "\n";
    rows.push_back({"scale", format_double(s), format_double(r.f1), format_double(r.false_alarm)});
    scale_series.x.push_back(s);
    scale_series.y.push_back(r.f1);
  }
  write_csv(rc.out_dir + "/ablation.csv", {"axis", "value", "f1", "false_alarm"}, rows);
  write_svg_plot(rc.out_dir + "/ablation_scale.svg", "Localization F1 vs wavelet scale",
                 "scale", "F1", {scale_series});
  write_manifest(rc.out_dir, rc, {{"command", "ablate"}});
  return 0;
}

int cmd_noise(const RunConfig& rc, const std::string& data_file, const std::string& ckpt,
              const std::vector<double>& sigmas) {
  PowerGrid grid = load_grid(rc);
  fs::create_directories(rc.out_dir);
  Localizer model = require_model(rc, grid, ckpt);
  Dataset ds = require_dataset(rc, data_file);
  std::vector<double> sv = sigmas.empty() ? std::vector<double>{0.0, 0.02, 0.05, 0.1} : sigmas;
  std::vector<NoisePoint> pts = noise_sweep(model, ds, sv, rc.eval_seed);
  std::vector<std::vector<std::string>> rows;
  PlotSeries f1s{"F1", {}, {}}, fas{"false alarm", {}, {}};
  for (const NoisePoint& p : pts) {
    std::cout << "sigma=" << format_double(p.sigma) << " f1=" << format_double(p.metrics.f1)
              << " false_alarm=" << format_double(p.metrics.false_alarm) << "\n";
    rows.push_back({format_double(p.sigma), format_double(p.metrics.f1),
                    format_double(p.metrics.false_alarm), format_double(p.metrics.accuracy)});
    f1s.x.push_back(p.sigma);
    f1s.y.push_back(p.metrics.f1);
    fas.x.push_back(p.sigma);
    fas.y.push_back(p.metrics.false_alarm);
  }
  write_csv(rc.out_dir + "/noise_sweep.csv", {"sigma", "f1", "false_alarm", "accuracy"}, rows);
  write_svg_plot(rc.out_dir + "/noise_sweep.svg", "Robustness to added input noise",
                 "input noise sigma (pu)", "score", {f1s, fas});
  write_manifest(rc.out_dir, rc, {{"command", "noise"}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dummy-data injection attack synthesis and localization toolkit"};
  app.require_subcommand(1);

  std::string parse_path;
  CLI::App* sc_parse = app.add_subcommand("parse", "Validate a case file and print a summary");
  sc_parse->add_option("case", parse_path, "MATPOWER-style case file")->required();

  CommonArgs a_gen, a_attack, a_sweep, a_train, a_locate, a_eval, a_ablate, a_noise;
  CLI::App* sc_gen = app.add_subcommand("gen-data", "Generate a labelled window dataset");
  add_common(sc_gen, a_gen);

  CLI::App* sc_attack = app.add_subcommand("attack", "Run one attack trial with diagnostics");
  add_common(sc_attack, a_attack);

  int sweep_trials = 200;
  std::vector<double> sweep_levels;
  CLI::App* sc_sweep = app.add_subcommand("sweep-success",
                                          "Success rate vs information integrity");
  add_common(sc_sweep, a_sweep);
  sc_sweep->add_option("--trials", sweep_trials, "Trials per integrity level");
  sc_sweep->add_option("--integrity", sweep_levels, "Integrity levels to sweep");

  std::string train_data;
  CLI::App* sc_train = app.add_subcommand("train", "Train the localizer on a dataset");
  add_common(sc_train, a_train);
  sc_train->add_option("--data", train_data, "Dataset file (default <out>/dataset.bin)");

  std::string locate_data, locate_ckpt;
  CLI::App* sc_locate = app.add_subcommand("locate", "Classify windows with a trained model");
  add_common(sc_locate, a_locate);
  sc_locate->add_option("--data", locate_data, "Dataset file (default <out>/dataset.bin)");
  sc_locate->add_option("--checkpoint", locate_ckpt, "Model file (default <out>/model.ckpt)");

  std::string eval_data, eval_ckpt;
  CLI::App* sc_eval = app.add_subcommand("eval", "Metrics, ROC and principal-plane plots");
  add_common(sc_eval, a_eval);
  sc_eval->add_option("--data", eval_data, "Dataset file (default <out>/dataset.bin)");
  sc_eval->add_option("--checkpoint", eval_ckpt, "Model file (default <out>/model.ckpt)");

  std::string ablate_data;
  std::vector<double> ablate_scales;
  CLI::App* sc_ablate = app.add_subcommand("ablate", "Structure and wavelet-scale ablations");
  add_common(sc_ablate, a_ablate);
  sc_ablate->add_option("--data", ablate_data, "Dataset file (default <out>/dataset.bin)");
  sc_ablate->add_option("--scales", ablate_scales, "Wavelet scales to compare");

  std::string noise_data, noise_ckpt;
  std::vector<double> noise_sigmas;
  CLI::App* sc_noise = app.add_subcommand("noise", "Input-noise robustness sweep");
  add_common(sc_noise, a_noise);
  sc_noise->add_option("--data", noise_data, "Dataset file (default <out>/dataset.bin)");
  sc_noise->add_option("--checkpoint", noise_ckpt, "Model file (default <out>/model.ckpt)");
  sc_noise->add_option("--sigmas", noise_sigmas, "Noise levels (pu)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_parse->parsed()) return cmd_parse(parse_path);
    if (sc_gen->parsed()) return cmd_gen_data(build_run_config(a_gen));
    if (sc_attack->parsed()) return cmd_attack(build_run_config(a_attack));
    if (sc_sweep->parsed()) return cmd_sweep(build_run_config(a_sweep), sweep_trials, sweep_levels);
    if (sc_train->parsed()) return cmd_train(build_run_config(a_train), train_data);
    if (sc_locate->parsed())
      return cmd_locate(build_run_config(a_locate), locate_data, locate_ckpt);
    if (sc_eval->parsed()) return cmd_eval(build_run_config(a_eval), eval_data, eval_ckpt);
    if (sc_ablate->parsed())
      return cmd_ablate(build_run_config(a_ablate), ablate_data, ablate_scales);
    if (sc_noise->parsed())
      return cmd_noise(build_run_config(a_noise), noise_data, noise_ckpt, noise_sigmas);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
