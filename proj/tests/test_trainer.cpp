#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cdpr/trainer.hpp"
#include "reference_model.hpp"

using namespace cdpr;

namespace {

DatasetConfig small_data() {
  DatasetConfig d;
  d.n_train = 200;
  d.n_val = 80;
  d.n_test = 80;
  d.feature_dim = 8;
  return d;
}

ModelConfig model_for(const DatasetConfig& d) {
  ModelConfig m;
  m.feature_dim = d.feature_dim;
  m.hidden_dim = d.feature_dim;
  m.num_classes = d.num_classes;
  return m;
}

std::vector<Mat> tensors(const ModelParams& m) {
  std::vector<Mat> out;
  for_each_param(m, [&](const std::string&, const Mat& x) { out.push_back(x); });
  return out;
}

}  // namespace

TEST_CASE("scheduled_lr") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.warmup_proportion = 0.1;
  // 100 steps -> 10 warmup steps.
  CHECK(scheduled_lr(cfg, 0, 100) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(cfg, 4, 100) == doctest::Approx(5e-4));
  CHECK(scheduled_lr(cfg, 9, 100) == doctest::Approx(1e-3));
  CHECK(scheduled_lr(cfg, 10, 100) == 1e-3);
  CHECK(scheduled_lr(cfg, 99, 100) == 1e-3);
  cfg.warmup_proportion = 0.0;
  CHECK(scheduled_lr(cfg, 0, 100) == 1e-3);
  double prev = 0.0;
  cfg.warmup_proportion = 0.3;
  for (std::size_t s = 0; s < 50; ++s) {
    const double lr = scheduled_lr(cfg, s, 50);
    CHECK(lr >= prev);
    CHECK(lr <= cfg.learning_rate);
    prev = lr;
  }
}

TEST_CASE("AdamW") {
  Rng rng(1);
  ModelParams m = ModelParams::init(model_for(small_data()), Rng(2));
  ref::jitter(m, rng);
  TrainConfig cfg;
  cfg.weight_decay = 0.1;

  SUBCASE("decay exclusions") {
    CHECK(AdamW::decays("fusion.classifier.weight"));
    CHECK(AdamW::decays("perception.proto"));
    CHECK_FALSE(AdamW::decays("fusion.classifier.bias"));
    CHECK_FALSE(AdamW::decays("intuition.ln_gain"));
    CHECK_FALSE(AdamW::decays("intuition.ln_bias"));
    CHECK_FALSE(AdamW::decays("intuition.alpha"));
  }
  SUBCASE("zero gradients shrink only decayed tensors") {
    const std::vector<Mat> before = tensors(m);
    std::vector<Mat> zero;
    for (const Mat& t : before) zero.emplace_back(t.rows(), t.cols());
    AdamW opt(m, cfg);
    opt.step(m, zero, 0.01);
    CHECK(opt.steps() == 1);
    const std::vector<Mat> after = tensors(m);
    std::size_t k = 0;
    for_each_param(m, [&](const std::string& name, const Mat&) {
      const double factor = AdamW::decays(name) ? 1.0 - 0.01 * 0.1 : 1.0;
      for (std::size_t i = 0; i < before[k].size(); ++i) {
        CHECK(after[k][i] == doctest::Approx(factor * before[k][i]).epsilon(1e-15));
      }
      ++k;
    });
  }
  SUBCASE("first step moves each coordinate by about lr") {
    const std::vector<Mat> before = tensors(m);
    std::vector<Mat> grads;
    for (const Mat& t : before) {
      Mat g(t.rows(), t.cols());
      for (double& x : g.span()) x = rng.normal();
      grads.push_back(g);
    }
    cfg.weight_decay = 0.0;
    AdamW opt(m, cfg);
    opt.step(m, grads, 0.01);
    const std::vector<Mat> after = tensors(m);
    for (std::size_t k = 0; k < before.size(); ++k) {
      for (std::size_t i = 0; i < before[k].size(); ++i) {
        const double moved = before[k][i] - after[k][i];
        CHECK(std::fabs(std::fabs(moved) - 0.01) < 1e-6);
        CHECK((moved > 0) == (grads[k][i] > 0));
      }
    }
  }
  SUBCASE("gradient count mismatch") {
    AdamW opt(m, cfg);
    CHECK_THROWS_AS(opt.step(m, {}, 0.01), ShapeError);
  }
}

TEST_CASE("train") {
  const DatasetConfig dc = small_data();
  const Dataset data = generate(dc);
  const ModelParams init = ModelParams::init(model_for(dc), Rng(3));
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.patience = 10;
  cfg.seed = 5;
  const LossConfig loss;

  SUBCASE("zero learning rate leaves the parameters unchanged") {
    cfg.learning_rate = 0.0;
    cfg.max_epochs = 2;
    const TrainResult r = train(init, data, cfg, loss);
    CHECK(tensors(r.model) == tensors(init));
  }
  SUBCASE("patience 1 stops after the first non-improving epoch") {
    cfg.patience = 1;
    cfg.val_metric_hook = [](int, double) { return 0.5; };
    const TrainResult r = train(init, data, cfg, loss);
    CHECK(r.history.epochs.size() == 2);
    CHECK(r.history.early_stopped);
    CHECK(r.history.selected_epoch == 1);
  }
  SUBCASE("the selected epoch is the best validation epoch") {
    cfg.val_metric_hook = [](int epoch, double) { return epoch == 2 ? 0.9 : 0.1 * epoch; };
    const TrainResult r = train(init, data, cfg, loss);
    CHECK(r.history.selected_epoch == 2);
    CHECK_FALSE(r.history.early_stopped);
    CHECK(r.history.epochs.size() == 4);
    const std::string csv = history_csv(r.history);
    CHECK(csv.rfind("epoch,L_cls,L_rea,L_uni,L_diff,L_sim,L_total,val_acc,val_macro_f1,selected\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  }
  SUBCASE("returned parameters score the best recorded validation accuracy") {
    cfg.max_epochs = 8;
    const TrainResult r = train(init, data, cfg, loss);
    double best = 0.0;
    for (const auto& e : r.history.epochs) best = std::max(best, e.val_acc);
    CHECK(r.history.epochs[r.history.selected_epoch - 1].val_acc == best);
    CHECK(evaluate(r.model, data.val).acc == best);
    CHECK(evaluate(r.model, data.val).acc >= r.history.epochs.back().val_acc);
  }
  SUBCASE("same seed, same run; other seed, other run") {
    const TrainResult a = train(init, data, cfg, loss);
    const TrainResult b = train(init, data, cfg, loss);
    CHECK(tensors(a.model) == tensors(b.model));
    CHECK(history_csv(a.history) == history_csv(b.history));
    cfg.seed = 6;
    const TrainResult c = train(init, data, cfg, loss);
    CHECK_FALSE(tensors(c.model) == tensors(a.model));
  }
  SUBCASE("a non-finite head is reported by name") {
    ModelParams broken = init;
    broken.fusion.reasoning_head.weight(0, 0) = std::nan("");
    try {
      train(broken, data, cfg, loss);
      FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
      CHECK(e.component() == "L_rea");
      CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
  }
  SUBCASE("empty splits and bad configs") {
    Dataset empty = data;
    empty.val.clear();
    CHECK_THROWS_AS(train(init, empty, cfg, loss), std::invalid_argument);
    cfg.patience = 0;
    CHECK_THROWS_AS(train(init, data, cfg, loss), ConfigError);
  }
}

TEST_CASE("training lowers the loss over ten epochs") {
  // Patience covers all ten epochs so early stopping cannot cut the run short.
  const DatasetConfig dc;
  const Dataset data = generate(dc);
  TrainConfig cfg;
  cfg.max_epochs = 10;
  cfg.patience = 10;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const TrainResult r = train(ModelParams::init(model_for(dc), Rng(seed)), data, cfg, LossConfig{});
    REQUIRE(r.history.epochs.size() == 10);
    const double first = r.history.epochs.front().train_loss.total;
    const double last = r.history.epochs.back().train_loss.total;
    MESSAGE("seed " << seed << ": L_total " << first << " -> " << last);
    CHECK(last < first);
  }
}

TEST_CASE("grad_check") {
  DatasetConfig dc = small_data();
  const Dataset data = generate(dc);
  Rng rng(4);
  ModelParams m = ModelParams::init(model_for(dc), Rng(7));
  ref::jitter(m, rng, 0.1);
  const std::vector<ModalityBundle> batch(data.train.begin(), data.train.begin() + 8);

  SUBCASE("analytic gradients agree with central differences") {
    const GradCheckReport r = grad_check(m, batch);
    MESSAGE("max relative error " << r.max_rel_error << " in " << r.worst_group << ", resampled " << r.resampled);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.total_probes > 0);
    std::size_t tensors_seen = 0;
    for_each_param(m, [&](const std::string&, const Mat&) { ++tensors_seen; });
    CHECK(r.groups.size() == tensors_seen);
    for (const auto& g : r.groups) CHECK(g.probes > 0);
  }
  SUBCASE("a scaled gradient is caught") {
    GradCheckOptions opts;
    opts.corrupt_group = "fusion.classifier.weight";
    opts.corrupt_scale = 1.01;
    const GradCheckReport r = grad_check(m, batch, opts);
    CHECK(r.worst_group == "fusion.classifier.weight");
    CHECK(r.max_rel_error >= 0.009);
  }
  SUBCASE("a tensor outside the loss has zero error") {
    GradCheckOptions opts;
    opts.ablation = PathwayAblation::NoReasoning;
    opts.loss.gamma_rea = 0.0;
    const GradCheckReport r = grad_check(m, batch, opts);
    const auto proto = std::find_if(r.groups.begin(), r.groups.end(),
                                    [](const GroupCheck& g) { return g.name == "perception.proto"; });
    REQUIRE(proto != r.groups.end());
    CHECK(proto->max_rel_error == 0.0);
    CHECK(r.max_rel_error < 1e-4);
  }
}
