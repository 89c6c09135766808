#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data/scene.hpp"
#include "geometry/stereo.hpp"
#include "tensor/tensor.hpp"

namespace depthforge {

/// Decoded PNG samples, row-major, interleaved channels (alpha stripped).
struct RawImage {
  std::size_t width = 0, height = 0, channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

RawImage read_png(const std::string& path);
void write_png(const std::string& path, const RawImage& image);

/// 8-bit gray or RGB (converted with Rec. 601 luma), scaled to [0, 1]; 1 x 1 x H x W.
Tensor read_image(const std::string& path);
/// Quantizes [0, 1] to 8 bits.
void write_image(const std::string& path, const Tensor& image);

/// 16-bit single channel, meters = raw / 256, raw 0 = invalid.
DepthMap read_depth_png(const std::string& path);
/// Invalid pixels are written as 0; depths of 256 m or more are rejected.
void write_depth_png(const std::string& path, const DepthMap& depth);

/// Grayscale PFM ("Pf"), little-endian, bottom-to-top rows.
Tensor read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor& image);

/// Lines `f_px=<float>` and `baseline_m=<float>`.
Calib read_calib(const std::string& path);
void write_calib(const std::string& path, const Calib& calib);

StereoSample load_kitti_sample(const std::string& left_path, const std::string& right_path,
                               const std::string& depth_l_path, const std::string& depth_r_path,
                               const std::string& calib_path);

/// Sample folder layout: left.png, right.png, depth_left.png, depth_right.png,
/// calib.txt and, for synthetic scenes, true_rho.pfm.
void write_sample(const std::string& dir, const StereoSample& sample);
StereoSample read_sample(const std::string& dir);

/// Numbered sample folders 000000, 000001, ... under `dir`.
std::string sample_dir_name(std::size_t index);
std::vector<std::string> list_sample_dirs(const std::string& dir);
std::vector<StereoSample> read_dataset(const std::string& dir);

}  // namespace depthforge
