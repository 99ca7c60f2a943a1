// cdpr: command-line front end for dataset generation, training, evaluation,
// gradient certification, and the experiment sweeps.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cdpr/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::vector<double> sigmas;
  cdpr::AblationFlags flags;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_ablation) {
  cmd->add_option("--config", o.config_path, "JSON experiment config");
  cmd->add_option("--seed", o.seed, "single run seed");
  cmd->add_option("--seeds", o.seeds, "comma-separated run seeds")->delimiter(',');
  cmd->add_option("--out", o.out, "output directory");
  if (!with_ablation) return;
  cmd->add_flag("--no-int", o.flags.no_int, "pin the gate to the reasoning pathway");
  cmd->add_flag("--no-rea", o.flags.no_rea, "pin the gate to the intuition pathway and drop L_rea");
  cmd->add_flag("--no-sim", o.flags.no_sim, "drop the similarity loss");
  cmd->add_flag("--no-diff", o.flags.no_diff, "drop the difference loss");
  cmd->add_flag("--no-uni", o.flags.no_uni, "drop the unimodal losses");
  cmd->add_flag("--no-rea-loss", o.flags.no_rea_loss, "drop L_rea only");
}

cdpr::ExperimentConfig resolve(const CommonOptions& o) {
  cdpr::ExperimentConfig cfg = o.config_path.empty() ? cdpr::ExperimentConfig{} : cdpr::load_config_file(o.config_path);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.sigmas.empty()) cfg.sigmas = o.sigmas;
  if (o.flags.any()) cfg.ablation = o.flags;
  cfg.output_dir = cdpr::resolve_output_dir(cfg, o.out);
  cfg.validate();
  return cfg;
}

json paths_json(const std::vector<fs::path>& paths) {
  json out = json::array();
  for (const auto& p : paths) out.push_back(p.string());
  return out;
}

json metrics_json(const cdpr::Metrics& m) {
  return json{{"acc", m.acc},
              {"macro_f1", m.macro_f1},
              {"macro_precision", m.macro_precision},
              {"macro_recall", m.macro_recall},
              {"weighted_f1", m.weighted_f1},
              {"weighted_precision", m.weighted_precision},
              {"per_class_f1", m.per_class_f1},
              {"conflict_acc", m.conflict_subset_acc},
              {"consistent_acc", m.consistent_subset_acc},
              {"conflict_count", m.conflict_count},
              {"consistent_count", m.consistent_count}};
}

int cmd_gen(const CommonOptions& o) {
  const cdpr::ExperimentConfig cfg = resolve(o);
  const cdpr::Dataset data = cdpr::generate(cfg.dataset);
  const fs::path dir = fs::path(cfg.output_dir) / "data";
  fs::create_directories(dir);
  const std::pair<const char*, const std::vector<cdpr::ModalityBundle>*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  json files = json::object();
  for (const auto& [name, samples] : splits) {
    const fs::path path = dir / (std::string(name) + ".bin");
    cdpr::write_split_file(path.string(), {cfg.dataset.num_classes, cfg.dataset.feature_dim, *samples});
    files[name] = path.string();
  }
  std::cout << json{{"dataset_fingerprint", cdpr::fingerprint_hex(cdpr::fingerprint(data))}, {"files", files}}.dump(2)
            << '\n';
  return 0;
}

int cmd_train(const CommonOptions& o) {
  const cdpr::ExperimentConfig cfg = resolve(o);
  const cdpr::MainReport report = cdpr::run_main(cfg);
  const auto written = cdpr::write_main_report(report, cfg, fs::path(cfg.output_dir) / "main");
  json out = cdpr::main_summary(report);
  out["files"] = paths_json(written);
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data_path,
             std::optional<double> sigma) {
  const cdpr::ExperimentConfig cfg = resolve(o);
  const cdpr::ModelParams model = cdpr::load_checkpoint_file(checkpoint);
  std::vector<cdpr::ModalityBundle> samples;
  if (data_path.empty()) {
    samples = cdpr::generate(cfg.dataset).test;
  } else {
    cdpr::SplitFile split = cdpr::read_split_file(data_path);
    if (split.feature_dim != model.config.feature_dim || split.num_classes != model.config.num_classes) {
      throw cdpr::ShapeError("eval: data file dimensions do not match the checkpoint");
    }
    samples = std::move(split.samples);
  }
  if (sigma) samples = cdpr::corrupt_text(samples, *sigma, cfg.dataset.seed);
  const cdpr::Metrics m = cdpr::evaluate(model, samples, cfg.ablation.pathway());
  std::cout << metrics_json(m).dump(2) << '\n';
  return 0;
}

int cmd_gradcheck(const CommonOptions& o, std::size_t batch_size, double epsilon, std::size_t coords,
                  double threshold) {
  const cdpr::ExperimentConfig cfg = resolve(o);
  cdpr::DatasetConfig dc = cfg.dataset;
  dc.n_train = batch_size;
  dc.n_val = 1;
  dc.n_test = 1;
  const cdpr::Dataset data = cdpr::generate(dc);
  json runs = json::array();
  bool ok = true;
  for (std::uint64_t seed : cfg.seeds) {
    cdpr::GradCheckOptions opts;
    opts.epsilon = epsilon;
    opts.coords_per_group = coords;
    opts.seed = seed;
    opts.loss = cfg.ablation.apply(cfg.loss);
    opts.ablation = cfg.ablation.pathway();
    const auto model = cdpr::ModelParams::init(cfg.model_config(), cdpr::Rng(seed));
    const cdpr::GradCheckReport r = cdpr::grad_check(model, data.train, opts);
    json groups = json::object();
    for (const auto& g : r.groups) groups[g.name] = {{"probes", g.probes}, {"max_rel_error", g.max_rel_error}};
    runs.push_back({{"seed", seed},
                    {"max_rel_error", r.max_rel_error},
                    {"worst_group", r.worst_group},
                    {"probes", r.total_probes},
                    {"resampled_near_kinks", r.resampled},
                    {"groups", groups}});
    ok = ok && r.max_rel_error < threshold;
  }
  std::cout << json{{"threshold", threshold}, {"passed", ok}, {"runs", runs}}.dump(2) << '\n';
  return ok ? 0 : 1;
}

int cmd_ablate(const CommonOptions& o) {
  const cdpr::ExperimentConfig cfg = resolve(o);
  const cdpr::AblationReport report = cdpr::run_ablation(cfg);
  const auto written = cdpr::write_ablation_report(report, fs::path(cfg.output_dir) / "ablation");
  std::cout << cdpr::ablation_csv(report);
  std::cerr << "wrote " << paths_json(written).dump() << '\n';
  return 0;
}

int cmd_robust(const CommonOptions& o) {
  const cdpr::ExperimentConfig cfg = resolve(o);
  const cdpr::RobustnessReport report = cdpr::run_robustness(cfg);
  const auto written = cdpr::write_robustness_report(report, fs::path(cfg.output_dir) / "robustness");
  std::cout << cdpr::robustness_csv(report);
  std::cerr << "wrote " << paths_json(written).dump() << '\n';
  return 0;
}

std::optional<json> read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  return json::parse(in);
}

int cmd_report(const CommonOptions& o) {
  const cdpr::ExperimentConfig cfg = resolve(o);
  const fs::path dir = cfg.output_dir;
  bool found = false;
  if (auto main = read_json(dir / "main" / "summary.json")) {
    found = true;
    const json& mean = (*main)["mean"];
    const json& sd = (*main)["std"];
    std::cout << "main (" << (*main)["variant"].get<std::string>() << ", "
              << (*main)["per_seed"].size() << " seeds)\n";
    for (const auto& col : cdpr::seed_columns()) {
      std::cout << "  " << col << ": " << mean[col].get<double>() << " +/- " << sd[col].get<double>() << '\n';
    }
  }
  if (auto abl = read_json(dir / "ablation" / "ablation.json")) {
    found = true;
    std::cout << "ablation (dataset " << (*abl)["dataset_fingerprint"].get<std::string>() << ")\n";
    for (const json& v : (*abl)["variants"]) {
      std::cout << "  " << v["variant"].get<std::string>() << ": acc " << v["mean"]["acc"].get<double>()
                << ", conflict acc " << v["mean"]["conflict_acc"].get<double>() << '\n';
    }
  }
  if (auto rob = read_json(dir / "robustness" / "robustness.json")) {
    found = true;
    std::cout << "robustness (noise on text)\n";
    const json& sig = (*rob)["sigmas"];
    const json& f1 = (*rob)["mean_f1"];
    for (std::size_t k = 0; k < sig.size(); ++k) {
      std::cout << "  sigma " << sig[k].get<double>() << ": F1 " << f1[k].get<double>() << '\n';
    }
  }
  if (!found) throw std::runtime_error("report: no summaries found under " + dir.string());
  return 0;
}

int emit_error(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conflict-aware dual-pathway multimodal fusion on synthetic data"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string checkpoint;
  std::string data_path;
  std::optional<double> eval_sigma;
  std::size_t batch_size = 8;
  double epsilon = 1e-5;
  std::size_t coords = 20;
  double threshold = 1e-4;

  auto* gen = app.add_subcommand("gen", "write train/val/test split files");
  add_common(gen, opts, false);
  auto* trn = app.add_subcommand("train", "train one model per seed and evaluate on the test split");
  add_common(trn, opts, true);
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(evl, opts, true);
  evl->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evl->add_option("--data", data_path, "split file (default: generated test split)");
  evl->add_option("--sigma", eval_sigma, "Gaussian noise std added to the text modality");
  auto* grd = app.add_subcommand("gradcheck", "finite-difference check of all parameter gradients");
  add_common(grd, opts, true);
  grd->add_option("--batch", batch_size, "batch size")->check(CLI::PositiveNumber);
  grd->add_option("--epsilon", epsilon, "central-difference step");
  grd->add_option("--coords", coords, "coordinates probed per tensor");
  grd->add_option("--threshold", threshold, "maximum accepted relative error");
  auto* abl = app.add_subcommand("ablate", "run the full model and every single-flag ablation");
  add_common(abl, opts, false);
  auto* rob = app.add_subcommand("robust", "test-time noise sweep on the text modality");
  add_common(rob, opts, true);
  rob->add_option("--sigmas", opts.sigmas, "comma-separated noise levels")->delimiter(',');
  auto* rep = app.add_subcommand("report", "print the summaries found in the output directory");
  add_common(rep, opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("usage", e.what(), 2);
  }

  try {
    if (gen->parsed()) return cmd_gen(opts);
    if (trn->parsed()) return cmd_train(opts);
    if (evl->parsed()) return cmd_eval(opts, checkpoint, data_path, eval_sigma);
    if (grd->parsed()) return cmd_gradcheck(opts, batch_size, epsilon, coords, threshold);
    if (abl->parsed()) return cmd_ablate(opts);
    if (rob->parsed()) return cmd_robust(opts);
    if (rep->parsed()) return cmd_report(opts);
  } catch (const cdpr::ConfigError& e) {
    return emit_error("config", e.what(), 2);
  } catch (const cdpr::ShapeError& e) {
    return emit_error("shape", e.what(), 1);
  } catch (const cdpr::TrainingDiverged& e) {
    return emit_error("diverged", e.what(), 1);
  } catch (const std::exception& e) {
    return emit_error("runtime", e.what(), 1);
  }
  return 0;
}
