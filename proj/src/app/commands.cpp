#include "app/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "app/manifest.hpp"
#include "data/io.hpp"
#include "train/objective.hpp"
#include "util/error.hpp"
#include "util/seed.hpp"

namespace depthforge {

namespace fs = std::filesystem;

namespace {

// Largest depth a 16-bit PNG can hold.
constexpr double kMaxPngDepth = 65535.0 / 256.0;

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
  const fs::path probe = fs::path(dir) / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory '" + dir + "' is not writable");
  }
  fs::remove(probe, ec);
}

std::vector<NamedPath> files_with_ext(const std::string& dir, const std::string& ext) {
  std::vector<NamedPath> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) {
      out.push_back({e.path().stem().string(), e.path().string()});
    }
  }
  std::sort(out.begin(), out.end(), [](const NamedPath& a, const NamedPath& b) { return a.name < b.name; });
  return out;
}

void require_dir(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("'" + dir + "' is not a directory");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void run_gen(const GenParams& p) {
  if (p.scenes == 0) throw InvalidArgument("--scenes must be positive");
  if (!(p.gt_density > 0.0 && p.gt_density <= 1.0)) {
    throw InvalidArgument("--gt-density must lie in (0, 1], got " + fmt(p.gt_density));
  }
  SceneConfig cfg;
  cfg.width = p.width;
  cfg.height = p.height;
  cfg.gt_density = p.gt_density;
  cfg.validate();
  make_dir(p.out_dir);
  RunManifest m("gen");
  m.set("scenes", std::to_string(p.scenes));
  m.set("size", std::to_string(p.width) + "x" + std::to_string(p.height));
  m.set("gt_density", fmt(p.gt_density));
  m.set("seed", std::to_string(p.seed));
  for (std::size_t i = 0; i < p.scenes; ++i) {
    const fs::path dir = fs::path(p.out_dir) / sample_dir_name(i);
    write_sample(dir.string(), gen_scene(cfg, mix_seed(p.seed, i)));
    for (const char* f : {"left.png", "right.png", "depth_left.png", "depth_right.png", "calib.txt", "true_rho.pfm"}) {
      m.add_output((dir / f).string());
    }
  }
  m.write((fs::path(p.out_dir) / "manifest.txt").string());
}

TrainResult run_train(const TrainParams& p, const std::function<void(const EpochLog&)>& on_epoch) {
  const RunConfig cfg = load_run_config(p.config_path);
  const std::vector<StereoSample> data = read_dataset(p.data_dir);
  const std::vector<StereoSample> val = read_dataset(p.val_dir);
  make_dir(p.out_dir);
  TrainOptions opt;
  opt.out_dir = p.out_dir;
  opt.resume = p.resume;
  opt.on_epoch = on_epoch;
  TrainResult result = train(data, val, cfg.net, cfg.train, opt);

  RunManifest m("train");
  m.set("seed", std::to_string(cfg.train.seed));
  std::istringstream snapshot(format_run_config(cfg));
  for (std::string line; std::getline(snapshot, line);) {
    const std::size_t eq = line.find(" = ");
    if (eq != std::string::npos) m.set("config." + line.substr(0, eq), line.substr(eq + 3));
  }
  m.set("stop_reason", result.stop_reason);
  m.set("epochs", std::to_string(result.log.size()));
  m.add_input("config", p.config_path);
  m.add_input("data", p.data_dir);
  m.add_input("val", p.val_dir);
  if (!p.resume.empty()) m.add_input("resume", p.resume);
  for (const char* f : {"train_log.csv", "last.ckpt", "best.ckpt"}) m.add_output((fs::path(p.out_dir) / f).string());
  m.write((fs::path(p.out_dir) / "manifest.txt").string());
  return result;
}

std::vector<NamedPath> list_images(const std::string& dir) {
  require_dir(dir);
  std::vector<NamedPath> out;
  for (const std::string& d : list_sample_dirs(dir)) {
    out.push_back({fs::path(d).filename().string(), (fs::path(d) / "left.png").string()});
  }
  if (out.empty()) out = files_with_ext(dir, ".png");
  if (out.empty()) throw IoError("no images found in '" + dir + "'");
  return out;
}

std::vector<NamedPath> list_ground_truth(const std::string& dir) {
  require_dir(dir);
  std::vector<NamedPath> out;
  for (const std::string& d : list_sample_dirs(dir)) {
    out.push_back({fs::path(d).filename().string(), (fs::path(d) / "depth_left.png").string()});
  }
  if (out.empty()) out = files_with_ext(dir, ".png");
  if (out.empty()) throw IoError("no ground-truth depth maps found in '" + dir + "'");
  return out;
}

std::vector<NamedPath> list_predictions(const std::string& dir) {
  require_dir(dir);
  std::vector<NamedPath> out = files_with_ext(dir, ".pfm");
  for (const NamedPath& png : files_with_ext(dir, ".png")) {
    const bool has_pfm = std::any_of(out.begin(), out.end(), [&](const NamedPath& p) { return p.name == png.name; });
    if (!has_pfm) out.push_back(png);
  }
  std::sort(out.begin(), out.end(), [](const NamedPath& a, const NamedPath& b) { return a.name < b.name; });
  if (out.empty()) throw IoError("no predictions found in '" + dir + "'");
  return out;
}

void run_predict(const std::string& checkpoint, const std::string& images_dir, const std::string& out_dir) {
  const Network net = network_from_checkpoint(load_checkpoint(checkpoint));
  const std::vector<NamedPath> images = list_images(images_dir);
  make_dir(out_dir);
  RunManifest m("predict");
  m.add_input("checkpoint", checkpoint);
  m.add_input("images", images_dir);
  for (const NamedPath& img : images) {
    const Tensor image = read_image(img.path);
    const Tensor rho = predict_full_resolution(net, image, image.dim(2), image.dim(3));
    require_finite(rho, "predicted inverse depth");
    DepthMap depth{Tensor(rho.shape()), Tensor(rho.shape(), 1.0)};
    for (std::size_t i = 0; i < rho.size(); ++i) {
      depth.depth[i] = rho[i] > 0.0 ? std::min(1.0 / rho[i], kMaxPngDepth) : kMaxPngDepth;
    }
    const fs::path base = fs::path(out_dir) / img.name;
    write_pfm(base.string() + ".pfm", rho);
    write_depth_png(base.string() + ".png", depth);
    m.add_output(base.string() + ".pfm");
    m.add_output(base.string() + ".png");
  }
  m.write((fs::path(out_dir) / "manifest.txt").string());
}

Tensor read_prediction_depth(const std::string& path) {
  if (fs::path(path).extension() == ".pfm") return depth_from_inverse(read_pfm(path));
  return read_depth_png(path).depth;
}

Metrics run_eval(const std::string& pred_dir, const std::string& gt_dir, const Protocol& protocol) {
  protocol.validate();
  const std::vector<NamedPath> preds = list_predictions(pred_dir);
  const std::vector<NamedPath> gts = list_ground_truth(gt_dir);
  if (preds.size() != gts.size()) {
    throw InvalidArgument("prediction count " + std::to_string(preds.size()) + " does not match ground-truth count " +
                          std::to_string(gts.size()));
  }
  DepthPairs all;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const DepthMap gt = read_depth_png(gts[i].path);
    Tensor pred = read_prediction_depth(preds[i].path);
    const std::size_t H = gt.depth.dim(2), W = gt.depth.dim(3);
    if (pred.dim(2) != H || pred.dim(3) != W) pred = resize_bilinear(pred, H, W);
    all.append(apply_protocol(pred, gt, protocol, true));
  }
  if (all.size() == 0) throw InvalidArgument("no ground-truth pixel survives the " + protocol.name + " protocol");
  return compute_metrics(all);
}

}  // namespace depthforge
