#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eval/metrics.hpp"
#include "train/trainer.hpp"

namespace depthforge {

struct GenParams {
  std::string out_dir;
  std::size_t scenes = 0;
  std::size_t width = 64, height = 32;
  double gt_density = 1.0;
  std::uint64_t seed = 0;
};

/// Scene i is gen_scene(cfg, mix_seed(seed, i)). Writes numbered sample folders
/// and manifest.txt.
void run_gen(const GenParams& params);

struct TrainParams {
  std::string data_dir, val_dir, config_path, out_dir, resume;
};

/// Reads both datasets and the config, trains into out_dir and writes
/// manifest.txt. DivergenceError propagates.
TrainResult run_train(const TrainParams& params, const std::function<void(const EpochLog&)>& on_epoch = {});

/// Named images of a directory: sample folders contribute their left view,
/// otherwise every *.png file is used. Sorted by name.
struct NamedPath {
  std::string name, path;
};
std::vector<NamedPath> list_images(const std::string& dir);
/// Ground truth: depth_left.png of sample folders, otherwise *.png depth maps.
std::vector<NamedPath> list_ground_truth(const std::string& dir);
/// Predictions: <name>.pfm (inverse depth), else <name>.png (depth).
std::vector<NamedPath> list_predictions(const std::string& dir);

/// Writes <name>.pfm (inverse depth) and <name>.png (depth) per image, at
/// image resolution, plus manifest.txt.
void run_predict(const std::string& checkpoint, const std::string& images_dir, const std::string& out_dir);

/// Depth in meters from a prediction file; a PFM holds inverse depth.
Tensor read_prediction_depth(const std::string& path);

/// Pairs predictions with ground truth in sorted order (counts must match),
/// resizes each prediction bilinearly to its ground truth and pools all pixels.
Metrics run_eval(const std::string& pred_dir, const std::string& gt_dir, const Protocol& protocol);

}  // namespace depthforge
