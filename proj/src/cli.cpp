#include "cardiofuse/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cardiofuse/config.hpp"
#include "cardiofuse/dataio.hpp"
#include "cardiofuse/ehrprep.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/evalcv.hpp"
#include "cardiofuse/hash.hpp"
#include "cardiofuse/importance.hpp"
#include "cardiofuse/synthcohort.hpp"
#include "cardiofuse/trainer.hpp"

namespace fs = std::filesystem;

namespace cardiofuse::cli {

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CARDIOFUSE_OUT"); env && *env) return env;
  return "cardiofuse_runs";
}

namespace {

/// Log lines carry wall-clock timestamps, so logs are the one output that
/// differs between identical runs.
class RunLog {
 public:
  explicit RunLog(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw LoadError("cannot open log file " + path.string());
  }
  void line(const std::string& msg) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << msg << "\n";
    out_.flush();
  }
  std::ostream& stream() { return out_; }

 private:
  std::ofstream out_;
};

fs::path resolve_manifest(const std::string& dataset) {
  if (dataset.empty()) throw ConfigError("--dataset is required");
  fs::path p(dataset);
  if (fs::is_directory(p)) p /= "manifest.csv";
  if (!fs::exists(p)) throw ConfigError("dataset manifest not found: " + p.string());
  return p;
}

struct RunFlags {
  std::string dataset;
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t parallel_folds = 0;
  std::string scope;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_preset) {
  cmd->add_option("--dataset", f.dataset, "Dataset directory or manifest.csv")->required();
  if (with_preset) cmd->add_option("--preset", f.preset, "Run preset (table2-row1..6, table3-*)");
  cmd->add_option("--config", f.config_file, "Config file ([section] key = value)");
  cmd->add_option("--set", f.sets, "Override one config key, e.g. --set train.lr=1e-3");
  cmd->add_option("--out", f.out, "Output root (default $CARDIOFUSE_OUT or ./cardiofuse_runs)");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&f](const std::uint64_t& s) { f.seed = s, f.seed_given = true; }, "Root seed");
  cmd->add_option("--imputation-scope", f.scope, "Schema fitting scope: train (default) or all");
}

cv::RunConfig build_run_config(const RunFlags& f) {
  cv::RunConfig run;
  if (!f.config_file.empty()) config::apply(run, config::load(f.config_file));
  for (const auto& s : f.sets) {
    const auto [k, v] = config::split_assignment(s);
    config::apply(run, k, v);
  }
  if (!f.preset.empty()) run.preset = f.preset;
  if (f.seed_given) run.seed = f.seed;
  if (f.parallel_folds) run.parallel_folds = f.parallel_folds;
  if (!f.scope.empty()) run.scope = cv::parse_scope(f.scope);
  run.validate();
  return run;
}

std::string header_line(const cv::RunConfig& run) {
  return "# cardiofuse preset=" + run.preset + " seed=" + std::to_string(run.seed);
}

// ---- synth ----------------------------------------------------------------

struct SynthFlags {
  synth::CohortSpec spec;
  std::string out;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  f.spec.validate();
  const fs::path dir = f.out.empty() ? output_root("") / ("synth-seed" + std::to_string(f.spec.seed)) : fs::path(f.out);
  const auto manifest = synth::generate_cohort(f.spec, dir);
  const auto pos = f.spec.positives();
  out << "manifest: " << manifest.string() << "\n";
  out << "patients: " << f.spec.n_patients << "\n";
  out << "positives: " << pos << "\n";
  out << "negatives: " << (f.spec.n_patients - pos) << "\n";
  return kOk;
}

// ---- prep -----------------------------------------------------------------

int cmd_prep(const RunFlags& f, std::ostream& out) {
  const cv::RunConfig run = build_run_config(f);
  const Dataset data = dataio::load_dataset(resolve_manifest(f.dataset));
  const fs::path dir = output_root(f.out) / "prep";
  fs::create_directories(dir);
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto schema = ehr::fit_pipeline(ehr::pointers(data.records, all), run.window, run.coverage_threshold);
  dataio::write_text_file(dir / "schema.txt", schema.serialize());
  std::ostringstream csv;
  csv << "# cardiofuse schema=" << schema.id() << "\n";
  csv << "patient_id,label";
  for (const auto& n : schema.feature_names) csv << "," << n;
  csv << "\n";
  for (const auto& r : data.records) {
    const auto fv = ehr::vectorize(r, schema);
    csv << r.patient_id << "," << r.label;
    for (double v : fv.values) csv << "," << dataio::format_double(v);
    csv << "\n";
  }
  dataio::write_text_file(dir / "features.csv", csv.str());
  out << "schema: " << (dir / "schema.txt").string() << " (" << schema.dim() << " features, "
      << schema.selected_lab_codes.size() << " labs)\n";
  out << "features: " << (dir / "features.csv").string() << "\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------

std::string history_csv(const std::string& header, const train::TrainHistory& h) {
  std::ostringstream os;
  os << header << "\n" << "epoch,loss\n";
  for (std::size_t e = 0; e < h.epoch_loss.size(); ++e) {
    os << (e + 1) << "," << dataio::format_double(h.epoch_loss[e]) << "\n";
  }
  return os.str();
}

int cmd_train(const RunFlags& f, std::ostream& out) {
  const cv::RunConfig run = build_run_config(f);
  const cv::Preset& preset = cv::find_preset(run.preset);
  const Dataset data = dataio::load_dataset(resolve_manifest(f.dataset));
  const fs::path dir = output_root(f.out) / ("train-" + run.preset + "-seed" + std::to_string(run.seed));
  fs::create_directories(dir);
  RunLog log(dir / "log.txt");
  log.line("train preset=" + run.preset + " patients=" + std::to_string(data.size()));

  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto schema = ehr::fit_pipeline(ehr::pointers(data.records, all), run.window, run.coverage_threshold);
  const auto ex = train::make_examples(data, all, &schema);
  model::ModelConfig mc = run.model;
  mc.kind = preset.kind;
  mc.ehr_dim = schema.dim();
  mc.ehr_keep = preset.drop.empty() ? std::vector<bool>{} : ehr::component_mask(schema, preset.drop);
  const std::string header = header_line(run);

  auto finish = [&](model::Model& m, const std::string& name, const train::TrainHistory& h) {
    m.schema_text = schema.serialize();
    m.save((dir / (name + ".ckpt")).string());
    dataio::write_text_file(dir / (name + "_history.csv"), history_csv(header, h));
    log.line(name + " trained in " + std::to_string(h.wall_seconds) + " s, final loss " +
             dataio::format_double(h.epoch_loss.back()));
  };

  train::TrainConfig tc = run.train;
  tc.seed = derive_seed(run.seed, fnv1a("train"));
  if (preset.kind == model::Kind::EhrLr) {
    if (run.ehr_lr_epochs) tc.epochs = run.ehr_lr_epochs;
    model::Model m = model::Model::create(mc, derive_seed(tc.seed, fnv1a("init")));
    finish(m, "model", train::fit(m, ex, tc));
  } else if (preset.kind == model::Kind::SinglePlax || preset.kind == model::Kind::SingleA4c) {
    const View v = preset.kind == model::Kind::SinglePlax ? View::PLAX : View::A4C;
    train::TrainHistory h;
    model::Model m = train::train_single_view(mc, v, ex, tc, &h);
    finish(m, "model", h);
  } else {
    train::PipelineConfig pc{mc, tc, run.fusion_train};
    pc.stage_b.seed = derive_seed(run.seed, fnv1a("train.fusion"));
    auto r = train::train_fusion_pipeline(ex, pc);
    finish(r.plax, "stage_a_plax", r.plax_history);
    finish(r.a4c, "stage_a_a4c", r.a4c_history);
    finish(r.fusion, "model", r.fusion_history);
  }
  out << "checkpoint: " << (dir / "model.ckpt").string() << "\n";
  return kOk;
}

// ---- cv / ablate ----------------------------------------------------------

void write_report(const fs::path& dir, const cv::CVReport& r) {
  dataio::write_text_file(dir / "report.csv", cv::report_csv(r));
  dataio::write_text_file(dir / "report.txt", cv::report_text(r));
}

cv::CVReport run_cv(const cv::RunConfig& run, const Dataset& data, const fs::path& dir, cv::EncoderCache& cache,
                    RunLog& log) {
  fs::create_directories(dir / "checkpoints");
  dataio::write_text_file(dir / "config.txt", run.serialize());
  cv::CvOptions opt;
  opt.cache = &cache;
  opt.checkpoint_dir = (dir / "checkpoints").string();
  opt.log = &log.stream();
  log.line("cv preset=" + run.preset + " seed=" + std::to_string(run.seed) + " k=" + std::to_string(run.k));
  const auto report = cv::cross_validate(run, data, opt);
  write_report(dir, report);
  log.line("cv done mean auroc " + dataio::format_double(report.mean.auroc));
  return report;
}

int cmd_cv(const RunFlags& f, std::ostream& out) {
  const cv::RunConfig run = build_run_config(f);
  const Dataset data = dataio::load_dataset(resolve_manifest(f.dataset));
  const fs::path dir = output_root(f.out) / ("cv-" + run.preset + "-seed" + std::to_string(run.seed));
  fs::create_directories(dir);
  RunLog log(dir / "log.txt");
  cv::EncoderCache cache;
  const auto report = run_cv(run, data, dir, cache, log);
  out << cv::report_csv(report);
  out << "report: " << (dir / "report.csv").string() << "\n";
  return kOk;
}

int cmd_ablate(const RunFlags& f, std::ostream& out) {
  cv::RunConfig run = build_run_config(f);
  const Dataset data = dataio::load_dataset(resolve_manifest(f.dataset));
  const fs::path dir = output_root(f.out) / ("ablate-seed" + std::to_string(run.seed));
  fs::create_directories(dir);
  RunLog log(dir / "log.txt");
  cv::EncoderCache cache;
  std::ostringstream table;
  table << header_line(run) << "\n";
  table << "Preset,Method,DemoVitals,Metrics,Labs,Accuracy,Sensitivity,Specificity,AUROC\n";
  for (const auto& name : cv::ablation_preset_names()) {
    run.preset = name;
    const auto& preset = cv::find_preset(name);
    const auto r = run_cv(run, data, dir / name, cache, log);
    auto kept = [&](ehr::Component c) { return preset.drop.count(c) ? "0" : "1"; };
    auto num = [](double v) { return std::isnan(v) ? std::string("nan") : dataio::format_double(v); };
    table << name << ",Intermediate," << kept(ehr::Component::DemoVitals) << "," << kept(ehr::Component::Metrics)
          << "," << kept(ehr::Component::Labs) << "," << num(r.mean.accuracy) << "," << num(r.mean.sensitivity) << ","
          << num(r.mean.specificity) << "," << num(r.mean.auroc) << "\n";
  }
  log.line("stage-A cache: " + std::to_string(cache.size()) + " entries, " + std::to_string(cache.hits()) + " hits");
  dataio::write_text_file(dir / "ablation.csv", table.str());
  out << table.str();
  out << "table: " << (dir / "ablation.csv").string() << "\n";
  return kOk;
}

// ---- importance -----------------------------------------------------------

struct ImportanceFlags {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::string aggregation = "final";
};

int cmd_importance(const ImportanceFlags& f, std::ostream& out) {
  if (!fs::exists(f.checkpoint)) throw ConfigError("checkpoint not found: " + f.checkpoint);
  model::Model m = model::Model::load(f.checkpoint);
  if (m.kind() != model::Kind::IntermediateFusion) {
    throw KindError("importance needs an intermediate_fusion checkpoint; " + f.checkpoint + " holds " +
                    std::string(model::kind_name(m.kind())));
  }
  importance::Aggregation agg = importance::Aggregation::FinalLayer;
  if (f.aggregation == "layer-average") agg = importance::Aggregation::LayerAverage;
  else if (f.aggregation != "final") throw ConfigError("--aggregation must be 'final' or 'layer-average'");

  const auto schema = ehr::FeatureSchema::parse(m.schema_text);
  const Dataset data = dataio::load_dataset(resolve_manifest(f.dataset));
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto ex = train::make_examples(data, all, &schema);
  const auto report = importance::build_report(m, ex, schema, agg);

  const auto bytes = m.to_bytes();
  const std::string ck_hash =
      hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
  const fs::path dir = output_root(f.out) / ("importance-" + ck_hash);
  const auto files = importance::export_importance(
      report, dir, "cardiofuse checkpoint=" + ck_hash + " aggregation=" + f.aggregation);
  for (const auto& [name, w] : report.modality_weights) out << name << " " << dataio::format_double(w) << "\n";
  for (const auto& p : files) out << "wrote " << p.string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cardiofuse: multimodal EHR + echo video classification pipeline"};
  app.require_subcommand(1);

  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  auto& spec = synth_flags.spec;
  synth->add_option("--n", spec.n_patients, "Number of patients");
  synth->add_option("--prevalence", spec.prevalence, "Fraction of positives");
  synth->add_option("--seed", spec.seed, "Seed");
  synth->add_option("--out", synth_flags.out, "Dataset directory");
  synth->add_option("--n-lab-codes", spec.n_lab_codes, "Number of lab codes");
  synth->add_option("--lab-missingness", spec.lab_missingness, "MCAR missingness per (patient, code)");
  synth->add_option("--signal-ehr", spec.signal_ehr, "EHR effect size");
  synth->add_option("--signal-plax", spec.signal_plax, "PLAX effect size");
  synth->add_option("--signal-a4c", spec.signal_a4c, "A4C effect size");
  synth->add_option("--signal-labs", spec.n_signal_labs, "Biomarker labs carrying the EHR signal (1..3)");
  synth->add_option("--frames", spec.frames_per_clip, "Frames per clip");
  synth->add_option("--frame-size", spec.frame_size, "Frame height and width");
  synth->add_option("--metrics-follow-imaging", spec.metrics_follow_imaging,
                    "Let wall_thickness track the PLAX severity (true/false)");

  RunFlags prep_flags, train_flags, cv_flags, ablate_flags;
  auto* prep = app.add_subcommand("prep", "Fit the EHR schema on a dataset and export feature vectors");
  add_run_flags(prep, prep_flags, false);
  auto* trn = app.add_subcommand("train", "Train one preset on the whole dataset");
  add_run_flags(trn, train_flags, true);
  auto* cvc = app.add_subcommand("cv", "Cross-validate one preset");
  add_run_flags(cvc, cv_flags, true);
  cvc->add_option("--parallel-folds", cv_flags.parallel_folds, "Folds run concurrently");
  auto* abl = app.add_subcommand("ablate", "Run the four EHR-component ablation presets");
  add_run_flags(abl, ablate_flags, false);
  abl->add_option("--parallel-folds", ablate_flags.parallel_folds, "Folds run concurrently");

  ImportanceFlags imp_flags;
  auto* imp = app.add_subcommand("importance", "Modality and EHR-entry importance of a fusion checkpoint");
  imp->add_option("--checkpoint", imp_flags.checkpoint, "intermediate_fusion checkpoint")->required();
  imp->add_option("--dataset", imp_flags.dataset, "Dataset directory or manifest.csv")->required();
  imp->add_option("--out", imp_flags.out, "Output root");
  imp->add_option("--aggregation", imp_flags.aggregation, "final (default) or layer-average");

  std::vector<const char*> argv{"cardiofuse"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_flags, out);
    if (prep->parsed()) return cmd_prep(prep_flags, out);
    if (trn->parsed()) return cmd_train(train_flags, out);
    if (cvc->parsed()) return cmd_cv(cv_flags, out);
    if (abl->parsed()) return cmd_ablate(ablate_flags, out);
    if (imp->parsed()) return cmd_importance(imp_flags, out);
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return kTrainingFailure;
  } catch (const KindError& e) {
    err << "wrong artifact kind: " << e.what() << "\n";
    return kKindMismatch;
  } catch (const ValidationError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const LoadError& e) {
    err << "load error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace cardiofuse::cli
