// crowdnet command line: gt, synth, augment, split, train, predict, eval,
// render, rf. Exit 0 on success, 2 on usage errors, 1 otherwise with a
// one-line reason on stderr.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <crowdnet/crowdnet.hpp>

namespace cn = crowdnet;

namespace {

std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("CROWDNET_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0')
    cn::fail("CROWDNET_SEED is not an unsigned integer: \"", s, "\"");
  return static_cast<uint64_t>(v);
}

uint64_t pick_seed(uint64_t configured) {
  if (auto s = env_seed()) return *s;
  return configured;
}

cn::AppConfig load_config(const std::string& path) {
  if (path.empty()) return cn::AppConfig{};
  return cn::parse_config(cn::read_file_text(path));
}

struct GtArgs {
  std::string annotations, image, out;
  int64_t width = 0, height = 0;
  double sigma = 4.0;
  int radius = -1;
};

int run_gt(const GtArgs& a) {
  cn::ParsedAnnotations ann =
      cn::parse_annotations(cn::read_file_text(a.annotations));
  int64_t w = a.width, h = a.height;
  if (!a.image.empty()) {
    const cn::GrayImage img = cn::parse_pgm(cn::read_file_bytes(a.image));
    w = img.width;
    h = img.height;
  }
  if (w < 1 || h < 1)
    cn::fail("gt: need --image or positive --width/--height for the map size");
  const int warnings = ann.warnings + cn::clamp_annotations(ann.set, w, h);
  const cn::DensityMap dm =
      cn::generate_density_map(ann.set.points, w, h, a.sigma, a.radius);
  cn::write_file_bytes(a.out, cn::serialize_density(dm));
  std::printf("points %zu sum %.6f clamp_warnings %d\n", ann.set.points.size(),
              dm.sum(), warnings);
  return 0;
}

struct SynthArgs {
  std::string out_dir;
  int n = 10, count_lo = 20, count_hi = 200;
  int64_t size = 256;
  uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  std::error_code ec;
  std::filesystem::create_directories(a.out_dir, ec);
  if (ec) cn::fail("synth: cannot create ", a.out_dir, ": ", ec.message());
  const auto images =
      cn::synth_dataset(a.n, a.count_lo, a.count_hi, a.size, pick_seed(a.seed));
  std::vector<std::string> ids;
  for (const cn::SynthImage& im : images) {
    cn::write_file_bytes(cn::image_path(a.out_dir, im.image_id),
                         cn::serialize_pgm(im.image));
    cn::AnnotationSet set{im.image_id, im.points};
    cn::write_file_text(cn::annotation_path(a.out_dir, im.image_id),
                        cn::emit_annotations(set));
    ids.push_back(im.image_id);
  }
  cn::write_file_text(a.out_dir + "/images.txt", cn::format_id_list(ids));
  std::printf("wrote %zu images to %s\n", ids.size(), a.out_dir.c_str());
  return 0;
}

struct AugmentArgs {
  std::string dataset, list, config, out_manifest, out_blob;
};

int run_augment(const AugmentArgs& a) {
  const cn::AppConfig cfg = load_config(a.config);
  const cn::AugmentOptions opts = cfg.augment_options();
  const auto ids = cn::parse_id_list(cn::read_file_text(a.list));
  if (ids.empty()) cn::fail("augment: empty image list ", a.list);

  std::vector<cn::PatchRecord> records;
  int warnings = 0;
  for (const std::string& id : ids) {
    cn::LoadedImage im = cn::load_dataset_image(a.dataset, id);
    warnings += im.warnings;
    auto recs = cn::augment_image(im.image, im.points, id, opts);
    records.insert(records.end(), std::make_move_iterator(recs.begin()),
                   std::make_move_iterator(recs.end()));
  }
  const size_t before = records.size();
  if (opts.oversample)
    records = cn::oversample_dense(records, opts.oversample_multiplicity);
  cn::write_patch_dataset(records, a.out_manifest, a.out_blob);
  std::printf("images %zu patches %zu oversampled %zu clamp_warnings %d\n", ids.size(),
              before, records.size(), warnings);
  return 0;
}

struct SplitArgs {
  std::string list, out;
  int k = 5;
  uint64_t seed = 0;
};

int run_split(const SplitArgs& a) {
  const auto ids = cn::parse_id_list(cn::read_file_text(a.list));
  const cn::FoldPlan plan = cn::kfold_split(ids, a.k, pick_seed(a.seed));
  cn::write_file_text(a.out, cn::emit_fold_plan(plan));
  std::printf("split %zu images into %d folds\n", ids.size(), a.k);
  return 0;
}

struct TrainArgs {
  std::string config, manifest, blob, out, best_out, log;
  std::string val_dataset, val_list;
};

int run_train(const TrainArgs& a) {
  cn::AppConfig cfg = load_config(a.config);
  cfg.training.seed = pick_seed(cfg.training.seed);

  const auto records = cn::read_patch_dataset(a.manifest, a.blob);
  if (records.empty()) cn::fail("train: manifest ", a.manifest, " holds no patches");

  std::vector<cn::EvalImage> val;
  if (!a.val_list.empty()) {
    for (const std::string& id : cn::parse_id_list(cn::read_file_text(a.val_list))) {
      cn::LoadedImage im = cn::load_dataset_image(a.val_dataset, id);
      val.push_back({id, std::move(im.image), static_cast<double>(im.points.size())});
    }
    if (val.empty()) cn::fail("train: validation list ", a.val_list, " is empty");
  }

  cn::Network net = cn::build_network(cfg.network_config(), cfg.training.seed);
  cn::TrainResult result = cn::train(std::move(net), records, cfg.training,
                                     val.empty() ? nullptr : &val);

  cn::write_file_bytes(a.out,
                       cn::serialize_weights(cn::network_to_records(result.network)));
  if (!a.log.empty()) cn::write_file_text(a.log, cn::format_train_log_csv(result.log));
  if (!a.best_out.empty()) {
    if (!result.best) cn::fail("train: --best-out needs --val-dataset/--val-list");
    cn::write_file_bytes(
        a.best_out, cn::serialize_weights(cn::network_to_records(*result.best)));
  }

  const cn::TrainLogRow& last = result.log.rows.back();
  if (result.best)
    std::printf("iterations %lld final_loss %.6g best_val_mae %.6f\n",
                static_cast<long long>(last.iteration), last.train_loss,
                result.best_val_mae);
  else
    std::printf("iterations %lld final_loss %.6g\n",
                static_cast<long long>(last.iteration), last.train_loss);
  return 0;
}

struct PredictArgs {
  std::string weights, image, out, config;
};

int run_predict(const PredictArgs& a) {
  const cn::AppConfig cfg = load_config(a.config);
  const cn::Network net = cn::network_from_records(
      cn::parse_weights(cn::read_file_bytes(a.weights)), cfg.mean_pixel);
  const cn::GrayImage img = cn::parse_pgm(cn::read_file_bytes(a.image));

  auto [padded, rec] = cn::pad_to_multiple(cn::image_to_tensor(img));
  const cn::Tensor density = cn::crop_to_record(
      cn::forward_density(net, padded, cn::ForwardMode::inference), rec);
  if (!a.out.empty())
    cn::write_file_bytes(a.out,
                         cn::serialize_density(cn::density_from_tensor(density)));
  std::printf("count %.6f\n", cn::count_from_density(density));
  return 0;
}

struct EvalArgs {
  std::string weights, dataset, list, out, config;
};

int run_eval(const EvalArgs& a) {
  const cn::AppConfig cfg = load_config(a.config);
  const cn::Network net = cn::network_from_records(
      cn::parse_weights(cn::read_file_bytes(a.weights)), cfg.mean_pixel);

  std::vector<cn::EvalImage> images;
  for (const std::string& id : cn::parse_id_list(cn::read_file_text(a.list))) {
    cn::LoadedImage im = cn::load_dataset_image(a.dataset, id);
    images.push_back({id, std::move(im.image), static_cast<double>(im.points.size())});
  }
  if (images.empty()) cn::fail("eval: image list ", a.list, " is empty");

  const cn::EvalResult result = cn::evaluate_mae(net, images);
  if (!a.out.empty()) cn::write_file_text(a.out, cn::format_eval_csv(result.rows));
  std::printf("images %zu mae %.6f\n", images.size(), result.mae);
  return 0;
}

struct RenderArgs {
  std::string density, out;
};

int run_render(const RenderArgs& a) {
  const cn::DensityMap dm = cn::parse_density(cn::read_file_bytes(a.density));
  cn::write_file_bytes(a.out, cn::serialize_pgm(cn::render_heatmap(dm)));
  return 0;
}

struct RfArgs {
  std::string config;
  std::string preset;
};

int run_rf(const RfArgs& a) {
  cn::AppConfig cfg = load_config(a.config);
  if (!a.preset.empty()) cfg.network_preset = a.preset;
  const cn::NetworkConfig net_cfg = cfg.network_config();

  const auto modified = cn::deep_branch_specs(net_cfg, /*original=*/false);
  const auto original = cn::deep_branch_specs(net_cfg, /*original=*/true);
  const auto rf_mod = cn::receptive_field(cn::strip_names(modified));
  const auto rf_orig = cn::receptive_field(cn::strip_names(original));

  std::printf("%-14s %22s %22s\n", "deep branch", "dilated+pool4/s1",
              "original pool4/s2");
  for (size_t i = 0; i < modified.size(); ++i)
    std::printf("%-14s rf %5lld jump %4lld   rf %5lld jump %4lld\n",
                modified[i].name.c_str(), static_cast<long long>(rf_mod[i].rf),
                static_cast<long long>(rf_mod[i].jump),
                static_cast<long long>(rf_orig[i].rf),
                static_cast<long long>(rf_orig[i].jump));

  const auto shallow = cn::shallow_branch_specs(net_cfg);
  const auto rf_sh = cn::receptive_field(cn::strip_names(shallow));
  std::printf("%-14s\n", "shallow branch");
  for (size_t i = 0; i < shallow.size(); ++i)
    std::printf("%-14s rf %5lld jump %4lld\n", shallow[i].name.c_str(),
                static_cast<long long>(rf_sh[i].rf),
                static_cast<long long>(rf_sh[i].jump));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowd density estimation toolkit"};
  app.require_subcommand(1);

  GtArgs gt;
  auto* gt_cmd = app.add_subcommand("gt", "build a density map from annotations");
  gt_cmd->add_option("--annotations", gt.annotations, "annotation JSON")->required();
  gt_cmd->add_option("--image", gt.image, "PGM image supplying the map size");
  gt_cmd->add_option("--width", gt.width, "map width when no --image is given");
  gt_cmd->add_option("--height", gt.height, "map height when no --image is given");
  gt_cmd->add_option("--sigma", gt.sigma, "Gaussian sigma in pixels");
  gt_cmd->add_option("--radius", gt.radius, "kernel radius (default ceil(3 sigma))");
  gt_cmd->add_option("--out", gt.out, "output DMAP path")->required();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out-dir", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--images", synth.n, "number of images");
  synth_cmd->add_option("--min-count", synth.count_lo, "minimum crowd count");
  synth_cmd->add_option("--max-count", synth.count_hi, "maximum crowd count");
  synth_cmd->add_option("--size", synth.size, "square image size");
  synth_cmd->add_option("--seed", synth.seed, "rng seed");

  AugmentArgs augment;
  auto* augment_cmd =
      app.add_subcommand("augment", "extract multi-scale training patches");
  augment_cmd->add_option("--dataset", augment.dataset, "dataset directory")->required();
  augment_cmd->add_option("--list", augment.list, "image id list file")->required();
  augment_cmd->add_option("--config", augment.config, "JSON config");
  augment_cmd->add_option("--out-manifest", augment.out_manifest, "manifest JSONL path")
      ->required();
  augment_cmd->add_option("--out-blob", augment.out_blob, "patch blob path")->required();

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "write a k-fold plan");
  split_cmd->add_option("--list", split.list, "image id list file")->required();
  split_cmd->add_option("--k", split.k, "fold count");
  split_cmd->add_option("--seed", split.seed, "rng seed");
  split_cmd->add_option("--out", split.out, "fold plan JSON path")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train on a patch manifest");
  train_cmd->add_option("--config", train.config, "JSON config");
  train_cmd->add_option("--manifest", train.manifest, "patch manifest")->required();
  train_cmd->add_option("--blob", train.blob, "patch blob")->required();
  train_cmd->add_option("--out", train.out, "output CNWT weights")->required();
  train_cmd->add_option("--best-out", train.best_out,
                        "CNWT weights of the best validation MAE");
  train_cmd->add_option("--log", train.log, "training log CSV");
  train_cmd->add_option("--val-dataset", train.val_dataset,
                        "validation dataset directory");
  train_cmd->add_option("--val-list", train.val_list, "validation id list");

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "predict a density map and count");
  predict_cmd->add_option("--weights", predict.weights, "CNWT weights")->required();
  predict_cmd->add_option("--image", predict.image, "input PGM")->required();
  predict_cmd->add_option("--out", predict.out, "output DMAP path");
  predict_cmd->add_option("--config", predict.config, "JSON config");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate MAE over an image list");
  eval_cmd->add_option("--weights", eval.weights, "CNWT weights")->required();
  eval_cmd->add_option("--dataset", eval.dataset, "dataset directory")->required();
  eval_cmd->add_option("--list", eval.list, "image id list file")->required();
  eval_cmd->add_option("--out", eval.out, "per-image CSV path");
  eval_cmd->add_option("--config", eval.config, "JSON config");

  RenderArgs render;
  auto* render_cmd = app.add_subcommand("render", "render a DMAP as a PGM heatmap");
  render_cmd->add_option("--density", render.density, "input DMAP")->required();
  render_cmd->add_option("--out", render.out, "output PGM")->required();

  RfArgs rf;
  auto* rf_cmd = app.add_subcommand("rf", "print per-layer receptive fields");
  rf_cmd->add_option("--config", rf.config, "JSON config");
  rf_cmd->add_option("--preset", rf.preset, "network preset (paper or toy)")
      ->check(CLI::IsMember({"paper", "toy"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(gt_cmd)) return run_gt(gt);
    if (app.got_subcommand(synth_cmd)) return run_synth(synth);
    if (app.got_subcommand(augment_cmd)) return run_augment(augment);
    if (app.got_subcommand(split_cmd)) return run_split(split);
    if (app.got_subcommand(train_cmd)) return run_train(train);
    if (app.got_subcommand(predict_cmd)) return run_predict(predict);
    if (app.got_subcommand(eval_cmd)) return run_eval(eval);
    if (app.got_subcommand(render_cmd)) return run_render(render);
    if (app.got_subcommand(rf_cmd)) return run_rf(rf);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
