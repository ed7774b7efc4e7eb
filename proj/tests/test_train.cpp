#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include <crowdnet/train.hpp>

#include "support/oracles.hpp"

using namespace crowdnet;

namespace {

std::vector<std::string> make_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("img_" + std::to_string(i));
  return ids;
}

NetworkConfig unit_config() {
  NetworkConfig cfg;
  cfg.preset = "toy";
  cfg.deep_widths = {1, 1, 1, 1, 1};
  cfg.shallow_width = 1;
  return cfg;
}

std::vector<PatchRecord> make_patches(Rng& rng, int n) {
  std::vector<PatchRecord> records;
  for (int i = 0; i < n; ++i) {
    PatchRecord rec;
    rec.image = GrayImage(kPatchSize, kPatchSize);
    for (uint8_t& p : rec.image.pixels)
      p = static_cast<uint8_t>(rng.uniform_int(256));
    std::vector<Point> pts;
    for (int j = 0; j < 5; ++j)
      pts.push_back({rng.uniform(0.0, 225.0), rng.uniform(0.0, 225.0)});
    rec.gt = generate_density_map(pts, kPatchSize, kPatchSize, 4.0);
    rec.image_id = "patch_" + std::to_string(i);
    rec.gt_count = rec.gt.sum();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

TEST_CASE("kfold assigns every image to exactly one fold") {
  const FoldPlan plan = kfold_split(make_ids(50), 5, 17);
  REQUIRE(plan.k == 5);
  REQUIRE(plan.folds.size() == 5);
  for (const auto& fold : plan.folds) REQUIRE(fold.size() == 10);

  std::set<std::string> seen;
  for (const auto& fold : plan.folds)
    for (const auto& id : fold) REQUIRE(seen.insert(id).second);
  REQUIRE(seen.size() == 50);
}

TEST_CASE("kfold spreads the remainder one per fold") {
  const FoldPlan plan = kfold_split(make_ids(11), 5, 3);
  std::vector<size_t> sizes;
  for (const auto& fold : plan.folds) sizes.push_back(fold.size());
  REQUIRE(sizes == std::vector<size_t>{3, 2, 2, 2, 2});
}

TEST_CASE("kfold is seed-deterministic and seed-sensitive") {
  const FoldPlan a = kfold_split(make_ids(20), 4, 9);
  const FoldPlan b = kfold_split(make_ids(20), 4, 9);
  REQUIRE(a.folds == b.folds);
  const FoldPlan c = kfold_split(make_ids(20), 4, 10);
  REQUIRE(a.folds != c.folds);

  REQUIRE_THROWS_AS(kfold_split(make_ids(3), 5, 0), Error);
  REQUIRE_THROWS_AS(kfold_split(make_ids(3), 0, 0), Error);
}

TEST_CASE("fold_split_ids separates the held-out fold") {
  const FoldPlan plan = kfold_split(make_ids(10), 5, 1);
  const auto [train_ids, val_ids] = fold_split_ids(plan, 2);
  REQUIRE(val_ids == plan.folds[2]);
  REQUIRE(train_ids.size() == 8);
  for (const auto& id : val_ids)
    REQUIRE(std::find(train_ids.begin(), train_ids.end(), id) == train_ids.end());

  REQUIRE_THROWS_AS(fold_split_ids(plan, 5), Error);
  REQUIRE_THROWS_AS(fold_split_ids(plan, -1), Error);
}

TEST_CASE("train config presets") {
  const TrainConfig paper = TrainConfig::paper();
  REQUIRE(paper.lr == kPaperLr);
  REQUIRE(paper.momentum == 0.9);
  REQUIRE(paper.batch == 16);
  REQUIRE(paper.iterations == 3000);
  REQUIRE(paper.eval_interval == 100);
  REQUIRE_FALSE(paper.per_pixel_loss);

  const TrainConfig toy = TrainConfig::toy();
  REQUIRE(toy.preset == "toy");
  REQUIRE(toy.per_pixel_loss);

  TrainConfig bad = paper;
  bad.lr = -1.0;
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad = paper;
  bad.momentum = 1.0;
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad = paper;
  bad.batch = 0;
  REQUIRE_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("training logs the scheduled iterations") {
  Rng rng(91);
  const auto records = make_patches(rng, 3);
  TrainConfig cfg = TrainConfig::toy();
  cfg.batch = 2;
  cfg.iterations = 5;
  cfg.eval_interval = 2;
  cfg.seed = 4;

  const TrainResult r = train(build_network(unit_config(), 5), records, cfg);
  std::vector<int64_t> its;
  for (const auto& row : r.log.rows) its.push_back(row.iteration);
  REQUIRE(its == std::vector<int64_t>{1, 2, 4, 5});
  for (const auto& row : r.log.rows) {
    REQUIRE(std::isfinite(row.train_loss));
    REQUIRE(row.train_loss >= 0.0);
    REQUIRE(std::isnan(row.val_mae));  // no validation set supplied
    REQUIRE(row.wall_time_sec >= 0.0);
  }
  REQUIRE_FALSE(r.best.has_value());
  REQUIRE(r.network.convs.size() == 17);
}

TEST_CASE("zero learning rate leaves the network untouched") {
  Rng rng(92);
  const auto records = make_patches(rng, 2);
  TrainConfig cfg = TrainConfig::toy();
  cfg.lr = 0.0;
  cfg.batch = 2;
  cfg.iterations = 3;
  cfg.eval_interval = 1;

  const Network before = build_network(unit_config(), 6);
  const TrainResult r = train(before, records, cfg);
  for (size_t i = 0; i < before.convs.size(); ++i) {
    REQUIRE(r.network.convs[i].weights.value.data == before.convs[i].weights.value.data);
    REQUIRE(r.network.convs[i].bias.value.data == before.convs[i].bias.value.data);
  }
  // Constant parameters: the same batch must produce the same loss.
  REQUIRE(r.log.rows.front().train_loss > 0.0);
}

TEST_CASE("training is reproducible for a fixed seed") {
  Rng rng(93);
  const auto records = make_patches(rng, 4);
  TrainConfig cfg = TrainConfig::toy();
  cfg.lr = 0.5;
  cfg.batch = 2;
  cfg.iterations = 4;
  cfg.eval_interval = 1;
  cfg.seed = 11;

  const TrainResult a = train(build_network(unit_config(), 8), records, cfg);
  const TrainResult b = train(build_network(unit_config(), 8), records, cfg);
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  for (size_t i = 0; i < a.log.rows.size(); ++i)
    REQUIRE(a.log.rows[i].train_loss == b.log.rows[i].train_loss);
  for (size_t i = 0; i < a.network.convs.size(); ++i)
    REQUIRE(a.network.convs[i].weights.value.data ==
            b.network.convs[i].weights.value.data);

  // A different data order changes the very first batch.
  TrainConfig cfg2 = cfg;
  cfg2.seed = 12;
  const TrainResult c = train(build_network(unit_config(), 8), records, cfg2);
  REQUIRE(a.log.rows.front().train_loss != c.log.rows.front().train_loss);
}

TEST_CASE("training rejects malformed patches") {
  TrainConfig cfg = TrainConfig::toy();
  REQUIRE_THROWS_AS(train(build_network(unit_config(), 1), {}, cfg), Error);

  PatchRecord bad;
  bad.image = GrayImage(100, 100);
  bad.gt = DensityMap(100, 100);
  bad.image_id = "short";
  REQUIRE_THROWS_WITH(train(build_network(unit_config(), 1), {bad}, cfg),
                      Catch::Matchers::ContainsSubstring("short"));
}

TEST_CASE("evaluate_mae averages absolute count errors") {
  // Constant-output network: zero weights, fusion bias 2^-10, so a 64x64 image
  // integrates to exactly 4 heads.
  Network net = build_network(unit_config(), 2);
  for (ConvLayer& L : net.convs) {
    for (float& v : L.weights.value.data) v = 0.0f;
    for (float& v : L.bias.value.data) v = 0.0f;
  }
  net.fusion_layer().bias.value.at(0, 0, 0, 0) = 1.0f / 1024.0f;

  std::vector<EvalImage> images;
  images.push_back({"a", GrayImage(64, 64), 3.0});
  images.push_back({"b", GrayImage(64, 64), 5.0});

  const EvalResult r = evaluate_mae(net, images);
  REQUIRE(r.rows.size() == 2);
  REQUIRE(r.rows[0].image_id == "a");
  REQUIRE_THAT(r.rows[0].predicted, Catch::Matchers::WithinAbs(4.0, 1e-6));
  REQUIRE_THAT(r.rows[1].predicted, Catch::Matchers::WithinAbs(4.0, 1e-6));
  // MAE = (|4-3| + |4-5|) / 2.
  REQUIRE_THAT(r.mae, Catch::Matchers::WithinAbs(1.0, 1e-6));

  // Order does not change the mean.
  std::swap(images[0], images[1]);
  REQUIRE_THAT(evaluate_mae(net, images).mae, Catch::Matchers::WithinAbs(1.0, 1e-6));

  REQUIRE_THROWS_AS(evaluate_mae(net, {}), Error);
}

TEST_CASE("validation tracking keeps the best network") {
  Rng rng(94);
  const auto records = make_patches(rng, 2);
  std::vector<EvalImage> val;
  val.push_back({"v0", records[0].image, records[0].gt_count});

  TrainConfig cfg = TrainConfig::toy();
  cfg.lr = 0.5;
  cfg.batch = 1;
  cfg.iterations = 3;
  cfg.eval_interval = 1;

  const TrainResult r =
      train(build_network(unit_config(), 3), records, cfg, &val);
  REQUIRE(r.best.has_value());
  double min_mae = std::numeric_limits<double>::infinity();
  for (const auto& row : r.log.rows) {
    REQUIRE(std::isfinite(row.val_mae));
    min_mae = std::min(min_mae, row.val_mae);
  }
  REQUIRE(r.best_val_mae == min_mae);

  // The stored best network reproduces its logged validation MAE.
  const EvalResult check = evaluate_mae(*r.best, val);
  REQUIRE_THAT(check.mae, Catch::Matchers::WithinAbs(r.best_val_mae, 1e-9));
}

TEST_CASE("synthetic dataset is deterministic and in range") {
  const auto a = synth_dataset(3, 5, 20, 256, 42);
  const auto b = synth_dataset(3, 5, 20, 256, 42);
  REQUIRE(a.size() == 3);
  REQUIRE(a[0].image_id == "synth_000");
  REQUIRE(a[2].image_id == "synth_002");
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(a[i].image.height == 256);
    REQUIRE(a[i].image.width == 256);
    REQUIRE(a[i].points.size() >= 5);
    REQUIRE(a[i].points.size() <= 20);
    REQUIRE(a[i].image.pixels == b[i].image.pixels);
    REQUIRE(a[i].points.size() == b[i].points.size());
  }

  const auto c = synth_dataset(3, 5, 20, 256, 43);
  REQUIRE(a[0].image.pixels != c[0].image.pixels);
}

TEST_CASE("synthetic points respect the separation floor") {
  const auto ds = synth_dataset(2, 30, 60, 256, 7);
  for (const auto& img : ds) {
    for (size_t i = 0; i < img.points.size(); ++i)
      for (size_t j = i + 1; j < img.points.size(); ++j) {
        const double dx = img.points[i].x - img.points[j].x;
        const double dy = img.points[i].y - img.points[j].y;
        REQUIRE(dx * dx + dy * dy >= kSynthMinSeparation * kSynthMinSeparation);
      }
    for (const auto& p : img.points) {
      REQUIRE(p.x >= 0.0);
      REQUIRE(p.x < 256.0);
      REQUIRE(p.y >= 0.0);
      REQUIRE(p.y < 256.0);
    }
  }
}

TEST_CASE("synthetic ground truth integrates to the point count") {
  const auto ds = synth_dataset(2, 10, 40, 256, 19);
  for (const auto& img : ds) {
    const DensityMap dm = generate_density_map(img.points, 256, 256, 4.0);
    REQUIRE_THAT(dm.sum(),
                 Catch::Matchers::WithinAbs(static_cast<double>(img.points.size()),
                                            1e-3));
  }
}

TEST_CASE("synthetic generator rejects impossible requests") {
  REQUIRE_THROWS_AS(synth_dataset(0, 1, 2, 256, 0), Error);
  REQUIRE_THROWS_AS(synth_dataset(1, 5, 3, 256, 0), Error);
  REQUIRE_THROWS_AS(synth_dataset(1, 0, 6000, 256, 0), Error);
  REQUIRE_THROWS_AS(synth_dataset(1, 1, 10, 100, 0), Error);
  // Packing 5000 heads at 3 px separation into 225x225 jams before finishing.
  REQUIRE_THROWS_WITH(synth_dataset(1, 5000, 5000, 225, 1),
                      Catch::Matchers::ContainsSubstring("could not place"));
}
