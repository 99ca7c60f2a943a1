#include "cdpr/harness.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cdpr/format.hpp"

namespace cdpr {

using nlohmann::json;

namespace {

enum Stream : std::uint64_t { kTestNoise = 31 };

void check_keys(const json& obj, const char* section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string("config: '") + section + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string("config: unknown key '") + key + "' in '" + section + "'");
  }
}

template <class T>
void take(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text,
                std::vector<std::filesystem::path>& written) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
  written.push_back(path);
}

std::string csv_line(const std::string& head, const std::vector<double>& values) {
  std::string line = head;
  for (double v : values) {
    line += ',';
    line += format_real(v);
  }
  line += '\n';
  return line;
}

std::size_t column_index(const std::string& name) {
  const auto& cols = seed_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == name) return i;
  }
  throw std::out_of_range("unknown report column: " + name);
}

const std::vector<std::string>& ablation_columns() {
  static const std::vector<std::string> cols{
      "acc",    "macro_f1",          "weighted_f1",        "conflict_acc",
      "consistent_acc", "lambda_conflicted", "lambda_consistent"};
  return cols;
}

}  // namespace

void AblationFlags::validate() const {
  if (no_int && no_rea) throw ConfigError("ablation: no_int and no_rea cannot both be set");
}

bool AblationFlags::any() const { return no_int || no_rea || no_sim || no_diff || no_uni || no_rea_loss; }

PathwayAblation AblationFlags::pathway() const {
  validate();
  if (no_int) return PathwayAblation::NoIntuition;
  if (no_rea) return PathwayAblation::NoReasoning;
  return PathwayAblation::None;
}

LossConfig AblationFlags::apply(LossConfig loss) const {
  if (no_rea || no_rea_loss) loss.gamma_rea = 0.0;
  if (no_uni) loss.gamma_uni = 0.0;
  if (no_diff) loss.beta_diff = 0.0;
  if (no_sim) loss.beta_sim = 0.0;
  return loss;
}

std::string AblationFlags::name() const {
  std::string out;
  auto add = [&](bool flag, const char* n) {
    if (!flag) return;
    if (!out.empty()) out += '+';
    out += n;
  };
  add(no_int, "no_int");
  add(no_rea, "no_rea");
  add(no_sim, "no_sim");
  add(no_diff, "no_diff");
  add(no_uni, "no_uni");
  add(no_rea_loss, "no_rea_loss");
  return out.empty() ? "full" : out;
}

std::vector<AblationFlags> ablation_grid() {
  std::vector<AblationFlags> grid(7);
  grid[1].no_int = true;
  grid[2].no_rea = true;
  grid[3].no_sim = true;
  grid[4].no_diff = true;
  grid[5].no_uni = true;
  grid[6].no_rea_loss = true;
  return grid;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  model_config().validate();
  train.validate();
  loss.validate();
  ablation.validate();
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (sigmas.empty()) throw ConfigError("sigmas must be non-empty");
  for (double s : sigmas) {
    if (!(s >= 0.0)) throw ConfigError("sigmas must be >= 0");
  }
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m = model;
  m.feature_dim = dataset.feature_dim;
  m.num_classes = dataset.num_classes;
  return m;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  check_keys(j, "config", {"dataset", "model", "train", "loss", "ablation", "sigmas", "seeds", "output_dir"});
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"num_classes", "feature_dim", "n_train", "n_val", "n_test", "conflict_rate",
                              "noise_std", "seed"});
    take(d, "num_classes", cfg.dataset.num_classes);
    take(d, "feature_dim", cfg.dataset.feature_dim);
    take(d, "n_train", cfg.dataset.n_train);
    take(d, "n_val", cfg.dataset.n_val);
    take(d, "n_test", cfg.dataset.n_test);
    take(d, "conflict_rate", cfg.dataset.conflict_rate);
    take(d, "noise_std", cfg.dataset.noise_std);
    take(d, "seed", cfg.dataset.seed);
  }
  cfg.model.hidden_dim = cfg.dataset.feature_dim;
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"hidden_dim", "share_shared_weights", "tau", "ln_eps"});
    take(m, "hidden_dim", cfg.model.hidden_dim);
    take(m, "share_shared_weights", cfg.model.share_shared_weights);
    take(m, "tau", cfg.model.tau);
    take(m, "ln_eps", cfg.model.ln_eps);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"learning_rate", "max_epochs", "batch_size", "patience", "warmup_proportion",
                            "weight_decay", "dropout", "adam_beta1", "adam_beta2", "adam_epsilon"});
    take(t, "learning_rate", cfg.train.learning_rate);
    take(t, "max_epochs", cfg.train.max_epochs);
    take(t, "batch_size", cfg.train.batch_size);
    take(t, "patience", cfg.train.patience);
    take(t, "warmup_proportion", cfg.train.warmup_proportion);
    take(t, "weight_decay", cfg.train.weight_decay);
    take(t, "dropout", cfg.train.dropout);
    take(t, "adam_beta1", cfg.train.adam_beta1);
    take(t, "adam_beta2", cfg.train.adam_beta2);
    take(t, "adam_epsilon", cfg.train.adam_epsilon);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, "loss", {"gamma_rea", "gamma_uni", "beta_diff", "beta_sim", "cmd_order", "prob_floor"});
    take(l, "gamma_rea", cfg.loss.gamma_rea);
    take(l, "gamma_uni", cfg.loss.gamma_uni);
    take(l, "beta_diff", cfg.loss.beta_diff);
    take(l, "beta_sim", cfg.loss.beta_sim);
    take(l, "cmd_order", cfg.loss.cmd_order);
    take(l, "prob_floor", cfg.loss.prob_floor);
  }
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    check_keys(a, "ablation", {"no_int", "no_rea", "no_sim", "no_diff", "no_uni", "no_rea_loss"});
    take(a, "no_int", cfg.ablation.no_int);
    take(a, "no_rea", cfg.ablation.no_rea);
    take(a, "no_sim", cfg.ablation.no_sim);
    take(a, "no_diff", cfg.ablation.no_diff);
    take(a, "no_uni", cfg.ablation.no_uni);
    take(a, "no_rea_loss", cfg.ablation.no_rea_loss);
  }
  take(j, "sigmas", cfg.sigmas);
  take(j, "seeds", cfg.seeds);
  take(j, "output_dir", cfg.output_dir);
  cfg.validate();
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  const auto& l = cfg.loss;
  const auto& a = cfg.ablation;
  return json{
      {"dataset",
       {{"num_classes", d.num_classes}, {"feature_dim", d.feature_dim}, {"n_train", d.n_train},
        {"n_val", d.n_val}, {"n_test", d.n_test}, {"conflict_rate", d.conflict_rate},
        {"noise_std", d.noise_std}, {"seed", d.seed}}},
      {"model",
       {{"hidden_dim", m.hidden_dim}, {"share_shared_weights", m.share_shared_weights}, {"tau", m.tau},
        {"ln_eps", m.ln_eps}}},
      {"train",
       {{"learning_rate", t.learning_rate}, {"max_epochs", t.max_epochs}, {"batch_size", t.batch_size},
        {"patience", t.patience}, {"warmup_proportion", t.warmup_proportion},
        {"weight_decay", t.weight_decay}, {"dropout", t.dropout}, {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2}, {"adam_epsilon", t.adam_epsilon}}},
      {"loss",
       {{"gamma_rea", l.gamma_rea}, {"gamma_uni", l.gamma_uni}, {"beta_diff", l.beta_diff},
        {"beta_sim", l.beta_sim}, {"cmd_order", l.cmd_order}, {"prob_floor", l.prob_floor}}},
      {"ablation",
       {{"no_int", a.no_int}, {"no_rea", a.no_rea}, {"no_sim", a.no_sim}, {"no_diff", a.no_diff},
        {"no_uni", a.no_uni}, {"no_rea_loss", a.no_rea_loss}}},
      {"sigmas", cfg.sigmas},
      {"seeds", cfg.seeds},
      {"output_dir", cfg.output_dir}};
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

const std::vector<std::string>& seed_columns() {
  static const std::vector<std::string> cols{
      "acc",           "macro_f1",       "macro_precision",   "macro_recall",
      "weighted_f1",   "weighted_precision", "conflict_acc",  "consistent_acc",
      "lambda_conflicted", "lambda_consistent", "selected_epoch", "epochs_run"};
  return cols;
}

std::vector<double> seed_row(const SeedRun& run) {
  const Metrics& m = run.metrics;
  return {m.acc,
          m.macro_f1,
          m.macro_precision,
          m.macro_recall,
          m.weighted_f1,
          m.weighted_precision,
          m.conflict_subset_acc,
          m.consistent_subset_acc,
          run.lambda_conflicted,
          run.lambda_consistent,
          static_cast<double>(run.history.selected_epoch),
          static_cast<double>(run.history.epochs.size())};
}

Summary MainReport::column(const std::string& name) const {
  const std::size_t idx = column_index(name);
  std::vector<double> values;
  for (const SeedRun& r : runs) values.push_back(seed_row(r)[idx]);
  return summarize(values);
}

SeedRun train_and_evaluate(const ExperimentConfig& cfg, const Dataset& data, const AblationFlags& flags,
                           std::uint64_t seed, ModelParams* model_out,
                           std::vector<ModelOutput>* outputs_out) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.ablation = flags.pathway();
  TrainResult trained = train(ModelParams::init(cfg.model_config(), Rng(seed)), data, tc, flags.apply(cfg.loss));
  Evaluation ev = evaluate_outputs(trained.model, data.test, tc.ablation);

  SeedRun run;
  run.seed = seed;
  run.metrics = ev.metrics;
  run.history = std::move(trained.history);
  double conflicted = 0.0;
  double consistent = 0.0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    (data.test[i].conflicted ? conflicted : consistent) += ev.outputs[i].report.lambda;
  }
  if (ev.metrics.conflict_count > 0) run.lambda_conflicted = conflicted / static_cast<double>(ev.metrics.conflict_count);
  if (ev.metrics.consistent_count > 0) {
    run.lambda_consistent = consistent / static_cast<double>(ev.metrics.consistent_count);
  }
  if (model_out) *model_out = std::move(trained.model);
  if (outputs_out) *outputs_out = std::move(ev.outputs);
  return run;
}

MainReport run_main(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_main(cfg, generate(cfg.dataset));
}

MainReport run_main(const ExperimentConfig& cfg, const Dataset& data) {
  cfg.validate();
  MainReport report;
  report.variant = cfg.ablation.name();
  report.dataset_fingerprint = fingerprint(data);
  for (std::uint64_t seed : cfg.seeds) {
    ModelParams model;
    std::vector<ModelOutput> outputs;
    report.runs.push_back(train_and_evaluate(cfg, data, cfg.ablation, seed, &model, &outputs));
    report.models.push_back(std::move(model));
    report.test_outputs.push_back(std::move(outputs));
  }
  return report;
}

AblationReport run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset data = generate(cfg.dataset);
  AblationReport report;
  report.dataset_fingerprint = fingerprint(data);
  for (const AblationFlags& flags : ablation_grid()) {
    MainReport variant;
    variant.variant = flags.name();
    variant.dataset_fingerprint = fingerprint(data);
    for (std::uint64_t seed : cfg.seeds) {
      std::vector<ModelOutput> outputs;
      variant.runs.push_back(train_and_evaluate(cfg, data, flags, seed, nullptr, &outputs));
      variant.test_outputs.push_back(std::move(outputs));
    }
    report.variants.push_back(std::move(variant));
  }
  return report;
}

std::vector<double> RobustnessReport::mean_f1() const {
  std::vector<double> out(sigmas.size(), 0.0);
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    std::vector<double> col;
    for (const auto& row : f1) col.push_back(row[k]);
    out[k] = summarize(col).mean;
  }
  return out;
}

std::vector<ModalityBundle> corrupt_text(std::span<const ModalityBundle> samples, double sigma,
                                         std::uint64_t noise_seed) {
  const Rng base = Rng(noise_seed).substream(kTestNoise);
  std::vector<ModalityBundle> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng = base.substream(i);
    out.push_back(inject_noise(samples[i], sigma, Modality::Text, rng));
  }
  return out;
}

RobustnessReport run_robustness(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset data = generate(cfg.dataset);
  RobustnessReport report;
  report.dataset_fingerprint = fingerprint(data);
  report.sigmas = cfg.sigmas;
  report.seeds = cfg.seeds;
  std::vector<std::vector<ModalityBundle>> noisy;
  for (double sigma : cfg.sigmas) noisy.push_back(corrupt_text(data.test, sigma, cfg.dataset.seed));
  const PathwayAblation pathway = cfg.ablation.pathway();
  for (std::uint64_t seed : cfg.seeds) {
    ModelParams model;
    train_and_evaluate(cfg, data, cfg.ablation, seed, &model);
    std::vector<double> f1;
    std::vector<double> acc;
    for (const auto& split : noisy) {
      const Metrics m = evaluate(model, split, pathway);
      f1.push_back(m.macro_f1);
      acc.push_back(m.acc);
    }
    report.f1.push_back(std::move(f1));
    report.acc.push_back(std::move(acc));
  }
  return report;
}

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

std::string main_metrics_csv(const MainReport& r) {
  std::string out = "seed";
  for (const auto& c : seed_columns()) out += ',' + c;
  out += '\n';
  for (const SeedRun& run : r.runs) out += csv_line(std::to_string(run.seed), seed_row(run));
  std::vector<double> means;
  std::vector<double> stds;
  for (const auto& c : seed_columns()) {
    const Summary s = r.column(c);
    means.push_back(s.mean);
    stds.push_back(s.std);
  }
  out += csv_line("mean", means);
  out += csv_line("std", stds);
  return out;
}

std::string gating_csv(std::span<const ModalityBundle> samples, std::span<const ModelOutput> outputs) {
  if (samples.size() != outputs.size()) throw ShapeError("gating_csv: sample/output count mismatch");
  std::ostringstream out;
  out << "sample,label,conflicted,conflicted_modality,predicted," << conflict_csv_header() << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ModalityBundle& b = samples[i];
    out << i << ',' << b.label << ',' << (b.conflicted ? 1 : 0) << ','
        << (b.conflicted_modality ? std::string(1, modality_code(*b.conflicted_modality)) : std::string("-"))
        << ',' << outputs[i].predicted << ',' << conflict_csv_row(outputs[i].report) << '\n';
  }
  return out.str();
}

json main_summary(const MainReport& r) {
  json mean = json::object();
  json stdev = json::object();
  for (const auto& c : seed_columns()) {
    const Summary s = r.column(c);
    mean[c] = s.mean;
    stdev[c] = s.std;
  }
  json per_seed = json::array();
  for (const SeedRun& run : r.runs) {
    json row{{"seed", run.seed}};
    const std::vector<double> values = seed_row(run);
    for (std::size_t i = 0; i < values.size(); ++i) row[seed_columns()[i]] = values[i];
    row["per_class_f1"] = run.metrics.per_class_f1;
    row["early_stopped"] = run.history.early_stopped;
    per_seed.push_back(std::move(row));
  }
  return json{{"variant", r.variant},
              {"dataset_fingerprint", fingerprint_hex(r.dataset_fingerprint)},
              {"mean", mean},
              {"std", stdev},
              {"per_seed", per_seed}};
}

std::string ablation_csv(const AblationReport& r) {
  std::string out = "variant";
  for (const auto& c : ablation_columns()) out += ',' + c + "_mean," + c + "_std";
  out += '\n';
  for (const MainReport& v : r.variants) {
    std::vector<double> values;
    for (const auto& c : ablation_columns()) {
      const Summary s = v.column(c);
      values.push_back(s.mean);
      values.push_back(s.std);
    }
    out += csv_line(v.variant, values);
  }
  return out;
}

json ablation_summary(const AblationReport& r) {
  json variants = json::array();
  for (const MainReport& v : r.variants) variants.push_back(main_summary(v));
  return json{{"dataset_fingerprint", fingerprint_hex(r.dataset_fingerprint)}, {"variants", variants}};
}

std::string robustness_csv(const RobustnessReport& r) {
  std::string out = "sigma,f1_mean,f1_std,acc_mean,acc_std";
  for (std::uint64_t s : r.seeds) out += ",f1_seed" + std::to_string(s);
  out += '\n';
  for (std::size_t k = 0; k < r.sigmas.size(); ++k) {
    std::vector<double> f1;
    std::vector<double> acc;
    for (std::size_t s = 0; s < r.seeds.size(); ++s) {
      f1.push_back(r.f1[s][k]);
      acc.push_back(r.acc[s][k]);
    }
    const Summary sf = summarize(f1);
    const Summary sa = summarize(acc);
    std::vector<double> values{sf.mean, sf.std, sa.mean, sa.std};
    values.insert(values.end(), f1.begin(), f1.end());
    out += csv_line(format_real(r.sigmas[k]), values);
  }
  return out;
}

json robustness_summary(const RobustnessReport& r) {
  return json{{"dataset_fingerprint", fingerprint_hex(r.dataset_fingerprint)},
              {"noise_modality", "t"},
              {"sigmas", r.sigmas},
              {"seeds", r.seeds},
              {"mean_f1", r.mean_f1()},
              {"f1", r.f1},
              {"acc", r.acc}};
}

std::vector<std::filesystem::path> write_main_report(const MainReport& r, const ExperimentConfig& cfg,
                                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n", written);
  write_text(dir / "metrics.csv", main_metrics_csv(r), written);
  write_text(dir / "summary.json", main_summary(r).dump(2) + "\n", written);
  std::string timing = "seed,epoch,seconds\n";
  const Dataset data = r.test_outputs.empty() ? Dataset{} : generate(cfg.dataset);
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const SeedRun& run = r.runs[i];
    const std::string tag = "seed" + std::to_string(run.seed);
    write_text(dir / ("history_" + tag + ".csv"), history_csv(run.history), written);
    if (i < r.test_outputs.size()) {
      write_text(dir / ("gating_" + tag + ".csv"), gating_csv(data.test, r.test_outputs[i]), written);
    }
    if (i < r.models.size()) {
      const auto path = dir / ("model_" + tag + ".ckpt");
      save_checkpoint_file(path.string(), r.models[i]);
      written.push_back(path);
    }
    for (const EpochRecord& e : run.history.epochs) {
      timing += std::to_string(run.seed) + ',' + std::to_string(e.epoch) + ',' + format_real(e.seconds) + '\n';
    }
  }
  // Wall-clock only; every other file is a deterministic function of the config.
  write_text(dir / "timing.csv", timing, written);
  return written;
}

std::vector<std::filesystem::path> write_ablation_report(const AblationReport& r,
                                                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  write_text(dir / "ablation.csv", ablation_csv(r), written);
  write_text(dir / "ablation.json", ablation_summary(r).dump(2) + "\n", written);
  return written;
}

std::vector<std::filesystem::path> write_robustness_report(const RobustnessReport& r,
                                                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  write_text(dir / "robustness.csv", robustness_csv(r), written);
  write_text(dir / "robustness.json", robustness_summary(r).dump(2) + "\n", written);
  return written;
}

std::string resolve_output_dir(const ExperimentConfig& cfg, const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("CDPR_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.output_dir;
}

}  // namespace cdpr
