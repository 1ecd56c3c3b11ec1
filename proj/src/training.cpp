#include "dnadepth/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "dnadepth/config.hpp"

namespace dnadepth {

namespace F = torch::nn::functional;

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor resize_area(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(
      x, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kArea));
}

// Loss of a single scale, all tensors already at the working resolution.
std::pair<torch::Tensor, torch::Tensor> scale_loss(const torch::Tensor& target,
                                                   const std::vector<torch::Tensor>& sources,
                                                   const std::vector<Pose>& poses,
                                                   const torch::Tensor& depth,
                                                   const Intrinsics& K, const LossConfig& cfg) {
  auto grid = PixelGrid::make(target.size(2), target.size(3), target.options());
  auto points = backproject(depth, K, grid);
  std::vector<torch::Tensor> errors, valid;
  for (size_t k = 0; k < sources.size(); ++k) {
    auto proj = project(points, poses[k], K);
    auto warped = warp(sources[k], proj.coords, proj.valid);
    errors.push_back(photometric_error(target, warped.image, cfg));
    valid.push_back(warped.valid);
  }
  if (cfg.automask) {
    auto all = torch::ones_like(valid.front());
    for (const auto& s : sources) {
      errors.push_back(photometric_error(target, s, cfg));
      valid.push_back(all);
    }
  }
  auto best = min_reprojection(errors, valid);
  auto keep = best.valid;
  if (cfg.automask) {
    keep = keep & (best.selection < static_cast<int64_t>(sources.size()));
  }
  return {masked_mean(best.error, keep), keep};
}

std::string format_record(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%lld,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(r.step), static_cast<long long>(r.epoch), r.lr, r.total,
                r.photometric, r.smoothness);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, "train.epochs must be >= 1");
  require(batch_size >= 1, "train.batch_size must be >= 1");
  require(lr_drop_epoch >= 0, "train.lr_drop_epoch must be >= 0");
  require(lr_initial > 0 && lr_final > 0, "learning rates must be positive");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
          "Adam betas must lie in [0,1)");
  require(num_scales >= 1, "train.num_scales must be >= 1");
  require(min_depth > 0 && min_depth < max_depth, "need 0 < min_depth < max_depth");
  require(max_steps >= 0, "train.max_steps must be >= 0");
}

double TrainConfig::learning_rate(int64_t e) const {
  return e < lr_drop_epoch ? lr_initial : lr_final;
}

torch::Tensor disp_to_depth(const torch::Tensor& disp, double min_depth, double max_depth) {
  require(min_depth > 0 && min_depth < max_depth, "disp_to_depth: need 0 < min < max");
  require(!((disp < 0) | (disp > 1) | torch::isnan(disp)).any().item<bool>(),
          "disp_to_depth: disparity outside [0,1]");
  const double max_disp = 1.0 / min_depth;
  const double min_disp = 1.0 / max_depth;
  return 1.0 / (min_disp + (max_disp - min_disp) * disp);
}

torch::Tensor depth_to_disp(const torch::Tensor& depth, double min_depth, double max_depth) {
  const double max_disp = 1.0 / min_depth;
  const double min_disp = 1.0 / max_depth;
  return (1.0 / depth - min_disp) / (max_disp - min_disp);
}

LossBreakdown view_synthesis_loss(const torch::Tensor& target,
                                  const std::vector<torch::Tensor>& sources,
                                  const std::vector<Pose>& poses,
                                  const std::vector<torch::Tensor>& disparities,
                                  const Intrinsics& K, const LossConfig& loss_cfg,
                                  const TrainConfig& train_cfg) {
  require(!sources.empty() && sources.size() == poses.size(),
          "view_synthesis_loss: need one pose per source frame");
  require(static_cast<int64_t>(disparities.size()) >= train_cfg.num_scales,
          "view_synthesis_loss: fewer disparities than num_scales");
  require(target.size(2) == K.height && target.size(3) == K.width,
          "view_synthesis_loss: intrinsics do not match the image size");
  const int64_t h = target.size(2), w = target.size(3);

  std::vector<torch::Tensor> totals, photometric, smoothness;
  for (int64_t s = 0; s < train_cfg.num_scales; ++s) {
    const auto& disp = disparities[static_cast<size_t>(s)];
    torch::Tensor error;
    if (train_cfg.upsample_disparities) {
      auto depth = disp_to_depth(resize_bilinear(disp, h, w), train_cfg.min_depth,
                                 train_cfg.max_depth);
      error = scale_loss(target, sources, poses, depth, K, loss_cfg).first;
    } else {
      const int64_t hs = disp.size(2), ws = disp.size(3);
      std::vector<torch::Tensor> small;
      for (const auto& src : sources) small.push_back(resize_area(src, hs, ws));
      auto depth = disp_to_depth(disp, train_cfg.min_depth, train_cfg.max_depth);
      error = scale_loss(resize_area(target, hs, ws), small, poses, depth,
                         resize_intrinsics(K, ws, hs), loss_cfg)
                  .first;
    }
    auto smooth = edge_aware_smoothness(disp, resize_area(target, disp.size(2), disp.size(3)));
    LossConfig weighted = loss_cfg;
    if (train_cfg.smoothness_decay) weighted.beta_smooth /= std::pow(2.0, static_cast<double>(s));
    totals.push_back(total_loss(error, smooth, weighted));
    photometric.push_back(error);
    smoothness.push_back(smooth);
  }
  return LossBreakdown{torch::stack(totals).mean(), torch::stack(photometric).mean(),
                       torch::stack(smoothness).mean()};
}

Batch collate(const std::vector<FrameTriplet>& triplets) {
  require(!triplets.empty(), "collate: empty batch");
  auto stack = [&](auto pick) {
    std::vector<torch::Tensor> v;
    for (const auto& t : triplets) v.push_back(pick(t));
    return torch::stack(v);
  };
  return Batch{stack([](const FrameTriplet& t) { return t.frames[0]; }),
               stack([](const FrameTriplet& t) { return t.frames[1]; }),
               stack([](const FrameTriplet& t) { return t.frames[2]; }),
               stack([](const FrameTriplet& t) { return t.inputs[0]; }),
               stack([](const FrameTriplet& t) { return t.inputs[1]; }),
               stack([](const FrameTriplet& t) { return t.inputs[2]; })};
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss)
    : model_cfg_(model), train_cfg_(train), loss_cfg_(loss) {
  train_cfg_.validate();
  loss_cfg_.validate();
  torch::manual_seed(train_cfg_.seed);
  depth_ = DepthNet(model_cfg_.depth);
  pose_ = PoseNet(model_cfg_.pose);
  auto params = depth_->parameters();
  for (const auto& p : pose_->parameters()) params.push_back(p);
  adam_ = std::make_unique<Adam>(params, AdamOptions{train_cfg_.adam_beta1, train_cfg_.adam_beta2});
}

LossBreakdown Trainer::batch_loss(const std::vector<FrameTriplet>& batch) {
  const auto b = collate(batch);
  auto disparities = depth_->forward(b.input_target);
  std::array<torch::Tensor, 2> vecs = {pose_->forward(b.input_target, b.input_prev),
                                       pose_->forward(b.input_target, b.input_next)};
  for (const auto& v : vecs) {
    if (!torch::isfinite(v).all().item<bool>()) {
      throw NumericalError("PoseNet produced a non-finite pose at step " + std::to_string(step));
    }
  }

  // Samples mirrored by augmentation carry a mirrored principal point, so the
  // geometry runs once per distinct camera.
  std::vector<std::pair<Intrinsics, std::vector<int64_t>>> groups;
  for (size_t i = 0; i < batch.size(); ++i) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first == batch[i].K; });
    if (it == groups.end()) {
      groups.push_back({batch[i].K, {static_cast<int64_t>(i)}});
    } else {
      it->second.push_back(static_cast<int64_t>(i));
    }
  }

  LossBreakdown out;
  for (const auto& [K, members] : groups) {
    const double weight = static_cast<double>(members.size()) / static_cast<double>(batch.size());
    auto select = [&, idx = torch::tensor(members, torch::kLong)](const torch::Tensor& t) {
      return members.size() == batch.size() ? t : t.index_select(0, idx);
    };
    std::vector<torch::Tensor> disp;
    for (const auto& d : disparities) disp.push_back(select(d));
    const std::vector<Pose> poses = {pose_from_6dof(select(vecs[0])),
                                     pose_from_6dof(select(vecs[1]))};
    auto part = view_synthesis_loss(select(b.target), {select(b.prev), select(b.next)}, poses,
                                    disp, K, loss_cfg_, train_cfg_);
    if (!out.total.defined()) {
      out = LossBreakdown{part.total * weight, part.photometric * weight,
                          part.smoothness * weight};
    } else {
      out.total = out.total + part.total * weight;
      out.photometric = out.photometric + part.photometric * weight;
      out.smoothness = out.smoothness + part.smoothness * weight;
    }
  }
  return out;
}

StepResult Trainer::train_step(const std::vector<FrameTriplet>& batch, double lr) {
  depth_->train();
  pose_->train();
  auto loss = batch_loss(batch);
  const double total = loss.total.item<double>();
  if (!std::isfinite(total)) {
    throw NumericalError("non-finite loss at step " + std::to_string(step));
  }
  adam_->zero_grad();
  loss.total.backward();
  adam_->step(lr);
  ++step;
  return StepResult{total, loss.photometric.item<double>(), loss.smoothness.item<double>()};
}

StepResult Trainer::evaluate_loss(const std::vector<FrameTriplet>& batch) {
  torch::NoGradGuard no_grad;
  depth_->eval();
  pose_->eval();
  auto loss = batch_loss(batch);
  return StepResult{loss.total.item<double>(), loss.photometric.item<double>(),
                    loss.smoothness.item<double>()};
}

void Trainer::save(const std::filesystem::path& path) const {
  Archive archive;
  archive.manifest = {{"format", "dnadepth-checkpoint"},
                      {"version", 1},
                      {"step", step},
                      {"epoch", epoch},
                      {"batch_index", batch_index},
                      {"model", model_cfg_},
                      {"train", train_cfg_},
                      {"loss", loss_cfg_}};
  save_module(archive, "depth", *depth_);
  save_module(archive, "pose", *pose_);
  adam_->save(archive, "adam");
  write_archive(path, archive);
}

void Trainer::load(const std::filesystem::path& path) {
  const auto archive = read_archive(path);
  if (archive.manifest.value("format", "") != "dnadepth-checkpoint") {
    throw IoError("not a training checkpoint: " + path.string());
  }
  load_module(archive, "depth", *depth_);
  load_module(archive, "pose", *pose_);
  adam_->load(archive, "adam");
  step = archive.manifest.at("step").get<int64_t>();
  epoch = archive.manifest.at("epoch").get<int64_t>();
  batch_index = archive.manifest.value("batch_index", int64_t{0});
}

FitResult fit(const TripletDataset& dataset, const ModelConfig& model, const TrainConfig& train,
              const LossConfig& loss, const FitOptions& options) {
  require(dataset.size() > 0, "fit: empty dataset");
  Trainer trainer(model, train, loss);
  if (options.resume_from) trainer.load(*options.resume_from);

  FitResult result;
  std::ofstream csv;
  const bool writing = !options.run_dir.empty();
  if (writing) {
    std::filesystem::create_directories(options.run_dir / "checkpoints");
    const auto log = options.run_dir / "metrics.csv";
    const bool fresh = !std::filesystem::exists(log) || !options.resume_from;
    csv.open(log, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw IoError("cannot write " + log.string());
    if (fresh) csv << "step,epoch,lr,total_loss,photometric,smoothness\n";
  }

  const size_t n = dataset.size();
  const size_t batch = std::min<size_t>(static_cast<size_t>(train.batch_size), n);
  const size_t batches_per_epoch = n / batch;
  auto reached_limit = [&] { return train.max_steps > 0 && trainer.step >= train.max_steps; };

  auto snapshot = [&](const NumericalError& e) {
    if (!writing) throw e;
    const auto path = options.run_dir / "nan_snapshot.ckpt";
    trainer.save(path);
    throw NumericalError(e.what(), path.string());
  };

  while (trainer.epoch < train.epochs && !reached_limit()) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 shuffle_rng(sample_seed(train.seed, trainer.epoch, n));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = train.learning_rate(trainer.epoch);

    while (static_cast<size_t>(trainer.batch_index) < batches_per_epoch && !reached_limit()) {
      std::vector<FrameTriplet> triplets;
      for (size_t k = 0; k < batch; ++k) {
        const size_t pos = static_cast<size_t>(trainer.batch_index) * batch + k;
        triplets.push_back(dataset.get(order[pos], sample_seed(train.seed, trainer.epoch, pos)));
      }
      StepResult r;
      try {
        r = trainer.train_step(triplets, lr);
      } catch (const NumericalError& e) {
        snapshot(e);
      }
      ++trainer.batch_index;
      const StepRecord rec{trainer.step, trainer.epoch, lr, r.total, r.photometric, r.smoothness};
      result.history.push_back(rec);
      if (writing) csv << format_record(rec) << "\n" << std::flush;
      if (options.on_step) options.on_step(rec);
    }
    if (static_cast<size_t>(trainer.batch_index) >= batches_per_epoch) {
      ++trainer.epoch;
      trainer.batch_index = 0;
      if (writing) {
        char name[64];
        std::snprintf(name, sizeof(name), "epoch_%03lld.ckpt",
                      static_cast<long long>(trainer.epoch));
        const auto path = options.run_dir / "checkpoints" / name;
        trainer.save(path);
        result.checkpoints.push_back(path);
      }
    }
  }
  if (writing) {
    const auto last = options.run_dir / "checkpoints" / "last.ckpt";
    trainer.save(last);
    if (result.checkpoints.empty() || result.checkpoints.back() != last) {
      result.checkpoints.push_back(last);
    }
  }
  return result;
}

}  // namespace dnadepth
