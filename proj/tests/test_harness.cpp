#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdpr/harness.hpp"

using namespace cdpr;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.dataset.n_train = 120;
  cfg.dataset.n_val = 40;
  cfg.dataset.n_test = 60;
  cfg.dataset.feature_dim = 8;
  cfg.model.hidden_dim = 8;
  cfg.train.max_epochs = 3;
  cfg.seeds = {0, 1};
  cfg.sigmas = {0.0, 0.5};
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("metrics") {
  SUBCASE("hand case") {
    const std::vector<std::size_t> y{0, 0, 1, 1}, p{0, 1, 1, 1};
    const Metrics m = compute_metrics(y, p, 2);
    CHECK(m.acc == 0.75);
    CHECK(std::fabs(m.macro_f1 - 11.0 / 15.0) < 1e-15);
    CHECK(std::fabs(m.macro_precision - 5.0 / 6.0) < 1e-15);
    CHECK(std::fabs(m.macro_recall - 0.75) < 1e-15);
    // Equal support: weighted averages coincide with macro ones.
    CHECK(std::fabs(m.weighted_f1 - m.macro_f1) < 1e-15);
    CHECK(std::fabs(m.weighted_precision - m.macro_precision) < 1e-15);
  }
  SUBCASE("perfect predictions") {
    const std::vector<std::size_t> y{0, 1, 2, 2};
    const Metrics m = compute_metrics(y, y, 3);
    CHECK(m.acc == 1.0);
    CHECK(m.macro_f1 == 1.0);
  }
  SUBCASE("an absent class counts as zero") {
    const std::vector<std::size_t> y{0, 0, 1}, p{0, 0, 1};
    const Metrics m = compute_metrics(y, p, 3);
    CHECK(std::fabs(m.macro_f1 - 2.0 / 3.0) < 1e-15);
    CHECK(m.weighted_f1 == 1.0);
    CHECK(m.per_class_f1.size() == 3);
  }
  SUBCASE("conflict subsets") {
    const std::vector<std::size_t> y{0, 1, 1, 0}, p{0, 0, 1, 1};
    const std::vector<std::uint8_t> c{1, 1, 0, 0};
    const Metrics m = compute_metrics(y, p, 2, c);
    CHECK(m.conflict_subset_acc == 0.5);
    CHECK(m.consistent_subset_acc == 0.5);
    CHECK(m.conflict_count == 2);
    CHECK(m.consistent_count == 2);
  }
  SUBCASE("invariant to sample order") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 5 + rng.below(40), c = 2 + rng.below(4);
      std::vector<std::size_t> y(n), p(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.below(c);
        p[i] = rng.below(c);
      }
      const Metrics a = compute_metrics(y, p, c);
      for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.below(i + 1);
        std::swap(y[i], y[j]);
        std::swap(p[i], p[j]);
      }
      const Metrics b = compute_metrics(y, p, c);
      CHECK(std::fabs(a.macro_f1 - b.macro_f1) < 1e-15);
      CHECK(std::fabs(a.weighted_f1 - b.weighted_f1) < 1e-15);
      CHECK(a.acc == b.acc);
      CHECK(a.macro_f1 >= 0.0);
      CHECK(a.macro_f1 <= 1.0);
    }
  }
  SUBCASE("complement predictions") {
    const std::vector<std::size_t> y{0, 1, 1, 0}, p{1, 0, 0, 1};
    const Metrics m = compute_metrics(y, p, 2);
    CHECK(m.acc == 0.0);
    CHECK(m.macro_f1 == 0.0);
  }
  SUBCASE("invariant to renaming the classes") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 5 + rng.below(40), c = 2 + rng.below(4);
      std::vector<std::size_t> perm(c);
      for (std::size_t k = 0; k < c; ++k) perm[k] = k;
      for (std::size_t k = c - 1; k > 0; --k) std::swap(perm[k], perm[rng.below(k + 1)]);
      std::vector<std::size_t> y(n), p(n), py(n), pp(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.below(c);
        p[i] = rng.below(c);
        py[i] = perm[y[i]];
        pp[i] = perm[p[i]];
      }
      const Metrics a = compute_metrics(y, p, c);
      const Metrics b = compute_metrics(py, pp, c);
      CHECK(a.acc == b.acc);
      CHECK(std::fabs(a.macro_f1 - b.macro_f1) < 1e-15);
      CHECK(std::fabs(a.macro_precision - b.macro_precision) < 1e-15);
      CHECK(std::fabs(a.weighted_f1 - b.weighted_f1) < 1e-15);
    }
  }
  SUBCASE("errors") {
    const std::vector<std::size_t> y{0, 1}, p{0};
    CHECK_THROWS(compute_metrics(y, p, 2));
    const std::vector<std::size_t> q{0, 5};
    CHECK_THROWS(compute_metrics(y, q, 2));
    CHECK_THROWS(compute_metrics(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 2));
    const ModelParams model = ModelParams::init(ModelConfig{}, Rng(0));
    CHECK_THROWS(evaluate(model, std::vector<ModalityBundle>{}));
  }
}

TEST_CASE("summarize uses the sample standard deviation") {
  const Summary s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(std::fabs(s.std - std::sqrt(5.0 / 3.0)) < 1e-15);
  CHECK(summarize({7.0}).std == 0.0);
}

TEST_CASE("ablation flags") {
  CHECK(ablation_grid().size() == 7);
  CHECK(ablation_grid()[0].name() == "full");
  CHECK(ablation_grid()[6].name() == "no_rea_loss");
  AblationFlags f;
  f.no_rea = true;
  CHECK(f.pathway() == PathwayAblation::NoReasoning);
  CHECK(f.apply(LossConfig{}).gamma_rea == 0.0);
  f.no_sim = true;
  CHECK(f.name() == "no_rea+no_sim");
  CHECK(f.apply(LossConfig{}).beta_sim == 0.0);
  f.no_int = true;
  CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("config json") {
  SUBCASE("round trip") {
    ExperimentConfig cfg = tiny_config();
    cfg.ablation.no_diff = true;
    cfg.loss.cmd_order = 3;
    const ExperimentConfig back = config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
  }
  SUBCASE("missing keys keep defaults") {
    const ExperimentConfig cfg = config_from_json(json::parse(R"({"dataset": {"feature_dim": 12}})"));
    CHECK(cfg.dataset.feature_dim == 12);
    CHECK(cfg.model.hidden_dim == 12);
    CHECK(cfg.train.batch_size == 16);
    CHECK(cfg.seeds.size() == 5);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"datset": {}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"lr": 1}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"patience": "five"}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"dataset": {"conflict_rate": 2}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"seeds": []})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"sigmas": [-0.1]})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"ablation": {"no_int": true, "no_rea": true}})")),
                    ConfigError);
    CHECK_THROWS_AS(load_config_file("/nonexistent/config.json"), ConfigError);
  }
}

TEST_CASE("output directory resolution") {
  ExperimentConfig cfg;
  cfg.output_dir = "from_config";
  unsetenv("CDPR_OUT_DIR");
  CHECK(resolve_output_dir(cfg, "") == "from_config");
  setenv("CDPR_OUT_DIR", "from_env", 1);
  CHECK(resolve_output_dir(cfg, "") == "from_env");
  CHECK(resolve_output_dir(cfg, "from_flag") == "from_flag");
  unsetenv("CDPR_OUT_DIR");
}

TEST_CASE("corrupt_text") {
  DatasetConfig dc;
  dc.n_test = 30;
  const Dataset data = generate(dc);
  const auto clean = corrupt_text(data.test, 0.0, 3);
  CHECK(clean == data.test);
  const auto a = corrupt_text(data.test, 0.3, 3);
  const auto b = corrupt_text(data.test, 0.6, 3);
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    CHECK(a[i][Modality::Video] == data.test[i][Modality::Video]);
    CHECK(a[i][Modality::Audio] == data.test[i][Modality::Audio]);
    CHECK(a[i].label == data.test[i].label);
    // Same direction at every sigma.
    const Vec da = a[i][Modality::Text] - data.test[i][Modality::Text];
    const Vec db = b[i][Modality::Text] - data.test[i][Modality::Text];
    for (std::size_t k = 0; k < da.size(); ++k) CHECK(std::fabs(2.0 * da[k] - db[k]) < 1e-12);
  }
  CHECK(corrupt_text(data.test, 0.3, 3) == a);
}

TEST_CASE("run_main on a tiny configuration") {
  const ExperimentConfig cfg = tiny_config();
  const MainReport r = run_main(cfg);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.variant == "full");
  CHECK(r.dataset_fingerprint == fingerprint(generate(cfg.dataset)));

  std::vector<double> accs;
  for (const auto& run : r.runs) {
    accs.push_back(run.metrics.acc);
    CHECK(run.history.epochs.size() <= 3);
    CHECK(run.lambda_conflicted > 0.0);
    CHECK(run.lambda_conflicted < 1.0);
  }
  const Summary s = r.column("acc");
  CHECK(s.mean == doctest::Approx((accs[0] + accs[1]) / 2).epsilon(1e-15));
  CHECK(s.std == doctest::Approx(std::fabs(accs[0] - accs[1]) / std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS(r.column("nope"));

  const std::string csv = main_metrics_csv(r);
  CHECK(csv.rfind("seed,acc,macro_f1", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(main_summary(r)["dataset_fingerprint"] == fingerprint_hex(r.dataset_fingerprint));

  SUBCASE("report files are reproducible byte for byte") {
    const auto base = std::filesystem::temp_directory_path() / "cdpr_test_harness";
    std::filesystem::remove_all(base);
    const auto first = write_main_report(r, cfg, base / "a");
    const auto second = write_main_report(run_main(cfg), cfg, base / "b");
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
      CHECK(first[i].filename() == second[i].filename());
      if (first[i].filename() == "timing.csv") continue;
      CHECK(slurp(first[i]) == slurp(second[i]));
    }
    const ModelParams back = load_checkpoint_file((base / "a" / "model_seed0.ckpt").string());
    CHECK(evaluate(back, generate(cfg.dataset).test).acc == r.runs[0].metrics.acc);
    std::filesystem::remove_all(base);
  }
}

TEST_CASE("removing the reasoning pathway pins lambda to zero") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {0};
  const Dataset data = generate(cfg.dataset);
  AblationFlags flags;
  flags.no_rea = true;
  std::vector<ModelOutput> outputs;
  const SeedRun run = train_and_evaluate(cfg, data, flags, 0, nullptr, &outputs);
  CHECK(run.lambda_conflicted == 0.0);
  CHECK(run.lambda_consistent == 0.0);
  for (const auto& o : outputs) {
    CHECK(o.report.lambda == 0.0);
    CHECK(o.z_final == o.z_int);
  }
}

TEST_CASE("run_robustness at sigma 0 reproduces clean evaluation") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {0};
  const RobustnessReport r = run_robustness(cfg);
  const MainReport m = run_main(cfg);
  REQUIRE(r.f1.size() == 1);
  REQUIRE(r.f1[0].size() == 2);
  CHECK(r.f1[0][0] == m.runs[0].metrics.macro_f1);
  CHECK(r.acc[0][0] == m.runs[0].metrics.acc);
  CHECK(r.mean_f1().size() == 2);
  const std::string csv = robustness_csv(r);
  CHECK(csv.rfind("sigma,f1_mean,f1_std,acc_mean,acc_std,f1_seed0\n", 0) == 0);
}
