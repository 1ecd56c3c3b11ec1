#include <fstream>

#include "doctest.h"
#include "dnadepth/training.hpp"
#include "fixtures.hpp"

using namespace dnadepth;

namespace {

torch::Tensor batch_of(const std::vector<FrameTriplet>& ts, int which) {
  std::vector<torch::Tensor> v;
  for (const auto& t : ts) v.push_back(t.frames[static_cast<size_t>(which)]);
  return torch::stack(v);
}

// Constant disparities at the four decoder scales that decode to `depth`.
std::vector<torch::Tensor> constant_disparities(double depth, int64_t h, int64_t w,
                                                const TrainConfig& cfg) {
  const double d = depth_to_disp(torch::tensor(depth), cfg.min_depth, cfg.max_depth).item<double>();
  std::vector<torch::Tensor> out;
  for (int s = 0; s < 4; ++s) out.push_back(torch::full({1, 1, h >> s, w >> s}, d));
  return out;
}

std::vector<double> read_parameters(const torch::nn::Module& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) {
    auto flat = p.detach().to(torch::kFloat64).flatten();
    out.insert(out.end(), flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
  }
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config validation and schedule") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.learning_rate(0) == 1e-4);
  CHECK(cfg.learning_rate(34) == 1e-4);
  // The 36th epoch (index 35) runs at the fine-tuning rate.
  CHECK(cfg.learning_rate(35) == 1e-5);
  CHECK(cfg.learning_rate(39) == 1e-5);
  cfg.min_depth = 200;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("disp_to_depth") {
  auto d = disp_to_depth(torch::tensor({1.0, 0.0, 0.5}, torch::kFloat64), 0.1, 100.0);
  CHECK(d[0].item<double>() == doctest::Approx(0.1));
  CHECK(d[1].item<double>() == doctest::Approx(100.0));
  CHECK(d[2].item<double>() == doctest::Approx(1.0 / (0.01 + 9.99 * 0.5)));
  auto c = disp_to_depth(torch::full({2, 2}, 0.3, torch::kFloat64), 0.1, 100.0);
  CHECK(torch::equal(c, torch::full({2, 2}, c[0][0].item<double>(), torch::kFloat64)));
  auto ramp = disp_to_depth(torch::linspace(0.01, 0.99, 50, torch::kFloat64), 0.1, 100.0);
  CHECK((ramp.slice(0, 1) < ramp.slice(0, 0, 49)).all().item<bool>());
  CHECK_THROWS_AS(disp_to_depth(torch::tensor({1.5}), 0.1, 100.0), std::invalid_argument);
  CHECK_THROWS_AS(disp_to_depth(torch::tensor({-0.1}), 0.1, 100.0), std::invalid_argument);
  auto back = depth_to_disp(disp_to_depth(torch::tensor({0.25}, torch::kFloat64), 0.1, 100), 0.1, 100);
  CHECK(back.item<double>() == doctest::Approx(0.25));
}

TEST_CASE("ground-truth depth and pose give a near-zero photometric loss") {
  const auto ts = fixtures::synthetic_triplets(1);
  const auto& t = ts.front();
  TrainConfig cfg;
  auto loss = view_synthesis_loss(batch_of(ts, 1), {batch_of(ts, 0), batch_of(ts, 2)},
                                  {*t.pose_to_prev, *t.pose_to_next},
                                  constant_disparities(10.0, 64, 96, cfg), t.K, LossConfig{}, cfg);
  CHECK(loss.photometric.item<double>() < 1e-3);
  CHECK(loss.smoothness.item<double>() == 0.0);

  // A wrong depth is clearly worse.
  auto wrong = view_synthesis_loss(batch_of(ts, 1), {batch_of(ts, 0), batch_of(ts, 2)},
                                   {*t.pose_to_prev, *t.pose_to_next},
                                   constant_disparities(4.0, 64, 96, cfg), t.K, LossConfig{}, cfg);
  CHECK(wrong.photometric.item<double>() > 10 * loss.photometric.item<double>());
}

TEST_CASE("single-scale objective equals the hand-assembled loss") {
  torch::manual_seed(0);
  const auto ts = fixtures::synthetic_triplets(1);
  const auto& t = ts.front();
  TrainConfig cfg;
  cfg.num_scales = 1;
  LossConfig lc;
  auto disp = torch::rand({1, 1, 64, 96}) * 0.5 + 0.25;
  auto target = batch_of(ts, 1);
  std::vector<torch::Tensor> sources = {batch_of(ts, 0), batch_of(ts, 2)};
  std::vector<Pose> poses = {*t.pose_to_prev, *t.pose_to_next};
  auto loss = view_synthesis_loss(target, sources, poses, {disp}, t.K, lc, cfg);

  auto depth = disp_to_depth(disp, cfg.min_depth, cfg.max_depth);
  auto pts = backproject(depth, t.K, PixelGrid::make(64, 96));
  std::vector<torch::Tensor> errs, masks;
  for (size_t k = 0; k < 2; ++k) {
    auto p = project(pts, poses[k], t.K);
    auto w = warp(sources[k], p.coords, p.valid);
    errs.push_back(photometric_error(target, w.image, lc));
    masks.push_back(w.valid);
  }
  auto m = min_reprojection(errs, masks);
  auto expected = total_loss(masked_mean(m.error, m.valid), edge_aware_smoothness(disp, target), lc);
  CHECK(loss.total.item<double>() == expected.item<double>());
}

TEST_CASE("native-scale variant runs at each disparity's size") {
  const auto ts = fixtures::synthetic_triplets(1);
  const auto& t = ts.front();
  TrainConfig cfg;
  cfg.upsample_disparities = false;
  auto loss = view_synthesis_loss(batch_of(ts, 1), {batch_of(ts, 0), batch_of(ts, 2)},
                                  {*t.pose_to_prev, *t.pose_to_next},
                                  constant_disparities(10.0, 64, 96, cfg), t.K, LossConfig{}, cfg);
  CHECK(std::isfinite(loss.total.item<double>()));
  CHECK(loss.photometric.item<double>() < 0.05);
}

TEST_CASE("view synthesis preconditions") {
  const auto ts = fixtures::synthetic_triplets(1);
  const auto& t = ts.front();
  TrainConfig cfg;
  auto disps = constant_disparities(10.0, 64, 96, cfg);
  CHECK_THROWS_AS(view_synthesis_loss(batch_of(ts, 1), {batch_of(ts, 0)},
                                      {*t.pose_to_prev, *t.pose_to_next}, disps, t.K, {}, cfg),
                  std::invalid_argument);
  disps.pop_back();
  CHECK_THROWS_AS(view_synthesis_loss(batch_of(ts, 1), {batch_of(ts, 0)}, {*t.pose_to_prev},
                                      disps, t.K, {}, cfg),
                  std::invalid_argument);
}

TEST_CASE("train step at random init gives a finite positive loss") {
  torch::manual_seed(1);
  auto t = fixtures::synthetic_triplets(1).front();
  Trainer trainer(fixtures::tiny_model(), fixtures::small_train(), LossConfig{});
  auto r = trainer.train_step({t}, 1e-4);
  CHECK(std::isfinite(r.total));
  CHECK(r.total > 0);
  CHECK(trainer.step == 1);
}

TEST_CASE("mixed flipped and unflipped samples in one batch") {
  auto ts = fixtures::synthetic_triplets(2);
  for (auto& t : ts) t.K.cx = 40.0;  // off-centre, so mirroring changes K
  DatasetOptions opts;
  opts.flip = true;
  opts.color_jitter = true;
  InMemoryDataset ds(ts, opts);
  std::optional<FrameTriplet> flipped, plain;
  for (uint64_t seed = 0; seed < 200 && !(flipped && plain); ++seed) {
    auto t = ds.get(seed % 2, seed);
    (t.K == ts[0].K ? plain : flipped) = t;
  }
  REQUIRE(flipped);
  REQUIRE(plain);
  Trainer trainer(fixtures::tiny_model(), fixtures::small_train(1, 3), LossConfig{});
  CHECK(std::isfinite(trainer.train_step({*flipped, *plain, *flipped}, 1e-4).total));
}

TEST_CASE("fit rejects an empty dataset") {
  struct Empty : TripletDataset {
    size_t size() const override { return 0; }
    FrameTriplet get(size_t, uint64_t) const override { throw std::logic_error("empty"); }
    Intrinsics intrinsics() const override { return {}; }
  } empty;
  CHECK_THROWS_AS(fit(empty, fixtures::tiny_model(), fixtures::small_train(), LossConfig{}),
                  std::invalid_argument);
}

TEST_CASE("non-finite loss raises and leaves the weights alone") {
  auto t = fixtures::synthetic_triplets(1).front();
  Trainer trainer(fixtures::tiny_model(), fixtures::small_train(), LossConfig{});
  const auto before = read_parameters(*trainer.depth_net());
  for (auto& f : t.frames) f = torch::full_like(f, NAN);
  for (auto& f : t.inputs) f = torch::full_like(f, NAN);
  CHECK_THROWS_AS(trainer.train_step({t}, 1e-4), NumericalError);
  CHECK(read_parameters(*trainer.depth_net()) == before);
  CHECK(trainer.step == 0);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  auto p = torch::randn({4, 3}).requires_grad_(true);
  const auto before = p.detach().clone();
  Adam adam({p});
  for (int i = 0; i < 3; ++i) {
    adam.zero_grad();
    (p * 0).sum().backward();
    adam.step(1e-2);
  }
  CHECK(torch::equal(p.detach(), before));
  CHECK(adam.steps() == 3);
}

TEST_CASE("adam matches the textbook update") {
  auto p = torch::tensor({1.0, -2.0}, torch::kFloat64).requires_grad_(true);
  Adam adam({p}, AdamOptions{0.9, 0.999, 1e-8});
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  for (int step = 1; step <= 5; ++step) {
    adam.zero_grad();
    (p * p).sum().backward();
    adam.step(0.1);
    for (int i = 0; i < 2; ++i) {
      const double g = 2 * x[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(p[0].item<double>() == doctest::Approx(x[0]).epsilon(1e-12));
  CHECK(p[1].item<double>() == doctest::Approx(x[1]).epsilon(1e-12));
}

TEST_CASE("checkpoint resume reproduces the next-step loss exactly") {
  const auto dir = fixtures::temp_dir("resume");
  auto ts = fixtures::synthetic_triplets(2);
  Trainer a(fixtures::tiny_model(), fixtures::small_train(), LossConfig{});
  a.train_step({ts[0]}, 1e-4);
  a.train_step({ts[1]}, 1e-4);
  a.save(dir / "a.ckpt");
  const double next = a.train_step({ts[0]}, 1e-4).total;

  auto other = fixtures::small_train();
  other.seed = 99;  // different init, overwritten by the load
  Trainer b(fixtures::tiny_model(), other, LossConfig{});
  b.load(dir / "a.ckpt");
  CHECK(b.step == 2);
  CHECK(b.train_step({ts[0]}, 1e-4).total == next);
  CHECK(read_parameters(*a.depth_net()) == read_parameters(*b.depth_net()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("fit writes logs and per-epoch checkpoints deterministically") {
  const auto dir = fixtures::temp_dir("fit");
  InMemoryDataset ds(fixtures::synthetic_triplets(3), fixtures::no_augmentation());
  auto cfg = fixtures::small_train(2, 2);
  FitOptions opts;
  opts.run_dir = dir / "a";
  const auto a = fit(ds, fixtures::tiny_model(), cfg, LossConfig{}, opts);
  CHECK(a.history.size() == 2);  // 3 samples, batch 2, last partial batch dropped
  CHECK(std::filesystem::exists(dir / "a" / "checkpoints" / "epoch_001.ckpt"));
  CHECK(std::filesystem::exists(dir / "a" / "checkpoints" / "epoch_002.ckpt"));
  std::ifstream csv(dir / "a" / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,epoch,lr,total_loss,photometric,smoothness");

  opts.run_dir = dir / "b";
  const auto b = fit(ds, fixtures::tiny_model(), cfg, LossConfig{}, opts);
  REQUIRE(b.history.size() == a.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].total == b.history[i].total);

  // Stop after one epoch, then resume into the second.
  auto first = cfg;
  first.epochs = 1;
  opts.run_dir = dir / "c";
  fit(ds, fixtures::tiny_model(), first, LossConfig{}, opts);
  opts.resume_from = dir / "c" / "checkpoints" / "epoch_001.ckpt";
  const auto c = fit(ds, fixtures::tiny_model(), cfg, LossConfig{}, opts);
  REQUIRE(c.history.size() == 1);
  CHECK(c.history[0].step == a.history[1].step);
  CHECK(c.history[0].total == a.history[1].total);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fit honours max_steps and small datasets") {
  InMemoryDataset ds(fixtures::synthetic_triplets(1), fixtures::no_augmentation());
  auto cfg = fixtures::small_train(5, 16);
  cfg.max_steps = 3;
  const auto r = fit(ds, fixtures::tiny_model(), cfg, LossConfig{});
  CHECK(r.history.size() == 3);
  CHECK(r.history.back().step == 3);
}

TEST_CASE("fit on a NaN dataset leaves a diagnostic snapshot") {
  const auto dir = fixtures::temp_dir("nan");
  auto ts = fixtures::synthetic_triplets(1);
  for (auto& f : ts[0].frames) f = torch::full_like(f, NAN);
  for (auto& f : ts[0].inputs) f = torch::full_like(f, NAN);
  InMemoryDataset ds(ts, fixtures::no_augmentation());
  FitOptions opts;
  opts.run_dir = dir;
  try {
    fit(ds, fixtures::tiny_model(), fixtures::small_train(), LossConfig{}, opts);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.snapshot_path == (dir / "nan_snapshot.ckpt").string());
    CHECK(std::filesystem::exists(e.snapshot_path));
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
