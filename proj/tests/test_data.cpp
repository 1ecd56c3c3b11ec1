#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "dnadepth/data.hpp"
#include "fixtures.hpp"

using namespace dnadepth;
namespace fs = std::filesystem;

namespace {

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  for (const auto& l : lines) os << l << "\n";
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

}  // namespace

TEST_SUITE("data") {

TEST_CASE("frame identifiers") {
  auto id = FrameId::parse("2011_09_26/2011_09_26_drive_0022_sync 473 r");
  CHECK(id.sequence == "2011_09_26/2011_09_26_drive_0022_sync");
  CHECK(id.index == 473);
  CHECK(id.side == 'r');
  CHECK(FrameId::parse(id.to_string()) == id);
  CHECK(FrameId::parse("seq 5").side == 'l');
  CHECK_THROWS_AS(FrameId::parse("seq"), std::invalid_argument);
  CHECK_THROWS_AS(FrameId::parse("seq 3 x"), std::invalid_argument);
}

TEST_CASE("split files") {
  const auto dir = fixtures::temp_dir("split");
  write_lines(dir / "one.txt", {"a 1 l"});
  CHECK(load_split(dir / "one.txt").size() == 1);

  write_lines(dir / "dup.txt", {"a 1 l", "a 2 l", "a 1 l", "", "b 3 r"});
  const auto ids = load_split(dir / "dup.txt");
  REQUIRE(ids.size() == 3);
  CHECK(ids[2].sequence == "b");

  write_lines(dir / "empty.txt", {});
  CHECK_THROWS_AS(load_split(dir / "empty.txt"), std::invalid_argument);
  CHECK_THROWS_AS(load_split(dir / "missing.txt"), IoError);

  write_lines(dir / "m" / "train_files.txt", {"a 1 l", "a 2 l", "a 3 l"});
  write_lines(dir / "m" / "val_files.txt", {"a 4 l"});
  write_lines(dir / "m" / "test_files.txt", {"b 1 l", "b 2 l"});
  const auto m = load_split_manifest(dir / "m");
  CHECK(m.train.size() == 3);
  CHECK(m.val.size() == 1);
  CHECK(m.test.size() == 2);

  write_lines(dir / "m" / "test_files.txt", {"a 2 l"});
  CHECK_THROWS_AS(load_split_manifest(dir / "m"), std::invalid_argument);

  write_split(dir / "w.txt", ids);
  CHECK((load_split(dir / "w.txt") == ids));
  fs::remove_all(dir);
}

TEST_CASE("depth file formats") {
  const auto dir = fixtures::temp_dir("depth");
  cv::Mat raw(2, 3, CV_16U, cv::Scalar(0));
  raw.at<uint16_t>(0, 1) = 25600;
  raw.at<uint16_t>(1, 2) = 256;
  cv::imwrite((dir / "gt.png").string(), raw);
  const auto png = read_depth_png(dir / "gt.png");
  CHECK(png.at<float>(0, 1) == 100.0f);
  CHECK(png.at<float>(1, 2) == 1.0f);
  CHECK(png.at<float>(0, 0) == 0.0f);

  cv::Mat depth(4, 5, CV_32F);
  cv::randu(depth, 0.5, 80.0);
  write_depth_raster(dir / "d.f32", depth);
  CHECK(fs::file_size(dir / "d.f32") == 4 * 5 * 4);
  const auto back = read_depth_raster(dir / "d.f32");
  CHECK(cv::norm(back, depth, cv::NORM_INF) == 0.0);
  std::ifstream sidecar(dir / "d.json");
  const auto meta = nlohmann::json::parse(sidecar);
  CHECK(meta["shape"] == nlohmann::json::array({4, 5}));
  CHECK(meta["units"] == "m");

  write_depth_png(dir / "round.png", depth);
  const auto rounded = read_depth_png(dir / "round.png");
  CHECK(cv::norm(rounded, depth, cv::NORM_INF) <= 0.5 / 256 + 1e-6);

  CHECK(read_depth_any(dir / "d").has_value());
  CHECK_FALSE(read_depth_any(dir / "nothing").has_value());
  fs::remove_all(dir);
}

TEST_CASE("rgb round trip") {
  const auto dir = fixtures::temp_dir("rgb");
  torch::manual_seed(0);
  auto img = torch::rand({3, 8, 10});
  write_rgb(dir / "x.png", img);
  auto back = read_rgb(dir / "x.png");
  CHECK(back.sizes() == img.sizes());
  CHECK(max_abs(back - img) <= 0.5 / 255 + 1e-6);
  {
    std::ofstream bad(dir / "bad.png");
    bad << "not an image";
  }
  try {
    read_rgb(dir / "bad.png");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("bad.png") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("synthetic plane geometry") {
  SyntheticSceneSpec spec;
  CHECK(spec.pixel_shift() == 5.0);
  auto t = generate_synthetic_scene(spec);
  CHECK(t.frames[0].sizes() == torch::IntArrayRef({3, 64, 96}));
  CHECK((*t.gt_depth == 10.0).all().item<bool>());
  CHECK(t.pose_to_next->translation[0][0].item<double>() == doctest::Approx(-0.5));
  CHECK(t.pose_to_prev->translation[0][0].item<double>() == doctest::Approx(0.5));

  // Frame t+1 is frame t shifted by f*b/d = 5 pixels.
  auto next = t.frames[2].slice(2, 0, 91);
  auto target = t.frames[1].slice(2, 5, 96);
  CHECK(max_abs(next - target) < 1e-5);

  const auto check = check_synthetic_triplet(t);
  CHECK(check.residual < 1e-3);
  CHECK_FALSE(check.identical_frames);

  spec.baseline = 0;
  CHECK(check_synthetic_triplet(generate_synthetic_scene(spec)).identical_frames);

  spec.plane_depth = 0;
  CHECK_THROWS_AS(generate_synthetic_scene(spec), std::invalid_argument);
}

TEST_CASE("non-integer shifts still reconstruct within interpolation error") {
  SyntheticSceneSpec spec;
  spec.plane_depth = 7.3;
  spec.baseline = 0.31;
  spec.texture_seed = 4;
  CHECK(check_synthetic_triplet(generate_synthetic_scene(spec)).residual < 1e-3);
}

TEST_CASE("augmentation") {
  auto t = generate_synthetic_scene(SyntheticSceneSpec{});
  t.K.cx = 30;
  Augmentation flip;
  flip.flip = true;
  auto f = t;
  apply_augmentation(f, flip);
  CHECK(torch::equal(f.frames[1], t.frames[1].flip({2})));
  CHECK(f.K.cx == doctest::Approx(95 - 30));
  // Geometry survives the mirror: the GT warp still reconstructs.
  CHECK(check_synthetic_triplet(f).residual < 1e-3);

  Augmentation jitter;
  jitter.brightness = 1.1;
  jitter.contrast = 0.9;
  jitter.saturation = 1.2;
  auto j = t;
  apply_augmentation(j, jitter);
  CHECK(torch::equal(j.frames[1], t.frames[1]));
  CHECK_FALSE(torch::equal(j.inputs[1], t.inputs[1]));
  CHECK(j.inputs[1].min().item<double>() >= 0.0);
  CHECK(j.inputs[1].max().item<double>() <= 1.0);

  DatasetOptions opts;
  std::mt19937_64 a(5), b(5);
  const auto x = Augmentation::draw(a, opts), y = Augmentation::draw(b, opts);
  CHECK(x.flip == y.flip);
  CHECK(x.brightness == y.brightness);
  DatasetOptions off = fixtures::no_augmentation();
  std::mt19937_64 c(5);
  CHECK(Augmentation::draw(c, off).identity());
}

TEST_CASE("intrinsics rescaling commutes with image resizing") {
  Intrinsics K{721.5, 721.5, 609.6, 172.9, 1242, 375};
  const auto small = resize_intrinsics(K, 640, 192);
  const double sx = 640.0 / 1242, sy = 192.0 / 375;
  for (double X : {-5.0, 0.0, 3.0}) {
    for (double Y : {-1.0, 0.5}) {
      const double Z = 12.0;
      const double u = K.fx * X / Z + K.cx, v = K.fy * Y / Z + K.cy;
      // Pixel-centre mapping of an image resize.
      const double u_resized = (u + 0.5) * sx - 0.5, v_resized = (v + 0.5) * sy - 0.5;
      const double us = small.fx * X / Z + small.cx, vs = small.fy * Y / Z + small.cy;
      CHECK(std::abs(us - u_resized) < 0.5);
      CHECK(std::abs(vs - v_resized) < 0.5);
    }
  }
}

TEST_CASE("kitti layout loading") {
  const auto dir = fixtures::temp_dir("kitti");
  SyntheticSceneSpec spec;
  spec.num_scenes = 10;
  const auto ids = write_synthetic_dataset(spec, dir);
  CHECK(ids.size() == 10);
  int groups = 0;
  for (const auto& e : fs::directory_iterator(dir)) groups += e.is_directory() && e.path().filename() != "splits";
  CHECK(groups == 10);
  const auto m = load_split_manifest(dir / "splits");
  CHECK(m.train.size() + m.test.size() == 10);
  CHECK(m.test.size() == 2);

  DatasetOptions opts = fixtures::no_augmentation();
  opts.root = dir;
  opts.width = 64;
  opts.height = 32;
  const auto K = dataset_intrinsics(opts, ids[0]);
  CHECK(K == spec.intrinsics());
  auto t = load_kitti_triplet(opts, ids[0], K);
  REQUIRE(t.has_value());
  CHECK(t->frames[0].sizes() == torch::IntArrayRef({3, 32, 64}));
  CHECK(t->K.width == 64);
  CHECK(t->K.fx == doctest::Approx(100.0 * 64 / 96));
  REQUIRE(t->gt_depth.has_value());
  CHECK(t->gt_depth->sizes() == torch::IntArrayRef({1, 64, 96}));
  CHECK(t->gt_depth->max().item<double>() == doctest::Approx(10.0));
  CHECK(t->pose_to_next.has_value());

  FrameId first = ids[0];
  first.index = 0;
  CHECK_FALSE(load_kitti_triplet(opts, first, K).has_value());
  FrameId last = ids[0];
  last.index = 2;
  CHECK_FALSE(load_kitti_triplet(opts, last, K).has_value());

  KittiDataset ds(opts, {ids[0], first, ids[1]});
  CHECK(ds.size() == 2);
  CHECK(ds.skipped() == 1);
  DatasetOptions aug = opts;
  aug.flip = true;
  aug.color_jitter = true;
  KittiDataset jittered(aug, ids);
  auto a = jittered.get(3, 17), b = jittered.get(3, 17);
  CHECK(torch::equal(a.inputs[1], b.inputs[1]));
  CHECK(a.K == b.K);

  // A corrupt image names the file.
  const auto target = image_path(opts, ids[1]);
  { std::ofstream(target, std::ios::trunc) << "garbage"; }
  try {
    load_kitti_triplet(opts, ids[1], K);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(target.filename().string()) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("sample seeds") {
  CHECK(sample_seed(0, 0, 0) == sample_seed(0, 0, 0));
  CHECK(sample_seed(0, 0, 1) != sample_seed(0, 0, 0));
  CHECK(sample_seed(0, 1, 0) != sample_seed(0, 0, 0));
  CHECK(sample_seed(1, 0, 0) != sample_seed(0, 0, 0));
}

}  // TEST_SUITE
