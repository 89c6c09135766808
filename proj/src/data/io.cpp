#include "data/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "util/error.hpp"

namespace depthforge {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngError {
  char message[256] = {0};
};

void on_png_error(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(err->message, sizeof err->message, "%s", msg);
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

// Returns false with err filled on a libpng error. No C++ objects with
// nontrivial state are created between setjmp and longjmp.
bool decode_png(std::FILE* fp, RawImage& out, PngError& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (!png) {
    std::snprintf(err.message, sizeof err.message, "out of memory");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  std::vector<png_byte>* buffer = new std::vector<png_byte>();
  bool ok = false;
  if (setjmp(png_jmpbuf(png)) == 0) {
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    const std::size_t channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer->resize(rowbytes * h);
    rows->resize(h);
    for (png_uint_32 y = 0; y < h; ++y) (*rows)[y] = buffer->data() + y * rowbytes;
    png_read_image(png, rows->data());
    png_read_end(png, nullptr);

    out.width = w;
    out.height = h;
    out.channels = channels;
    out.bit_depth = depth;
    out.samples.resize(static_cast<std::size_t>(w) * h * channels);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      const std::size_t y = i / (w * channels), rest = i % (w * channels);
      if (depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, (*rows)[y] + 2 * rest, 2);
        out.samples[i] = v;
      } else {
        out.samples[i] = (*rows)[y][rest];
      }
    }
    ok = true;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  delete rows;
  delete buffer;
  return ok;
}

bool encode_png(std::FILE* fp, const RawImage& img, PngError& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (!png) {
    std::snprintf(err.message, sizeof err.message, "out of memory");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte>* row = new std::vector<png_byte>();
  bool ok = false;
  if (setjmp(png_jmpbuf(png)) == 0) {
    png_init_io(png, fp);
    const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t per_row = img.width * img.channels;
    row->resize(per_row * (img.bit_depth == 16 ? 2 : 1));
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t i = 0; i < per_row; ++i) {
        const std::uint16_t v = img.samples[y * per_row + i];
        if (img.bit_depth == 16) {
          (*row)[2 * i] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
          (*row)[2 * i + 1] = static_cast<png_byte>(v & 0xff);
        } else {
          (*row)[i] = static_cast<png_byte>(v);
        }
      }
      png_write_row(png, row->data());
    }
    png_write_end(png, nullptr);
    ok = true;
  }
  png_destroy_write_struct(&png, &info);
  delete row;
  return ok;
}

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
  return f;
}

void replace_file(const std::string& tmp, const std::string& path) {
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write '" + path + "': " + ec.message());
}

}  // namespace

RawImage read_png(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path + "' is not a PNG file");
  }
  std::rewind(f.get());
  RawImage img;
  PngError err;
  if (!decode_png(f.get(), img, err)) throw IoError("corrupt PNG '" + path + "': " + err.message);
  return img;
}

void write_png(const std::string& path, const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidArgument("write_png supports 1 or 3 channels");
  if (image.bit_depth != 8 && image.bit_depth != 16) throw InvalidArgument("write_png supports 8 or 16 bits");
  if (image.samples.size() != image.width * image.height * image.channels || image.width == 0 || image.height == 0) {
    throw InvalidArgument("write_png: sample count does not match the image size");
  }
  const std::string tmp = path + ".tmp";
  PngError err;
  bool ok;
  {
    FilePtr f = open_file(tmp, "wb");
    ok = encode_png(f.get(), image, err);
    if (ok && std::fflush(f.get()) != 0) {
      ok = false;
      std::snprintf(err.message, sizeof err.message, "flush failed");
    }
  }
  if (!ok) {
    fs::remove(tmp);
    throw IoError("cannot write PNG '" + path + "': " + err.message);
  }
  replace_file(tmp, path);
}

Tensor read_image(const std::string& path) {
  const RawImage raw = read_png(path);
  if (raw.bit_depth != 8) throw IoError("'" + path + "': expected an 8-bit image, got " +
                                        std::to_string(raw.bit_depth) + "-bit");
  Tensor t({1, 1, raw.height, raw.width});
  const std::size_t c = raw.channels;
  for (std::size_t i = 0; i < raw.width * raw.height; ++i) {
    double v;
    if (c >= 3) {
      v = 0.299 * raw.samples[i * c] + 0.587 * raw.samples[i * c + 1] + 0.114 * raw.samples[i * c + 2];
    } else {
      v = raw.samples[i * c];
    }
    t[i] = v / 255.0;
  }
  return t;
}

void write_image(const std::string& path, const Tensor& image) {
  const Dims4 d = image.dims4();
  if (d.n != 1 || d.c != 1) throw ShapeError("write_image expects 1 x 1 x H x W");
  RawImage raw{d.w, d.h, 1, 8, std::vector<std::uint16_t>(d.w * d.h)};
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    raw.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  write_png(path, raw);
}

DepthMap read_depth_png(const std::string& path) {
  const RawImage raw = read_png(path);
  if (raw.bit_depth != 16 || raw.channels != 1) {
    throw IoError("'" + path + "': depth maps must be 16-bit single-channel PNG");
  }
  DepthMap d{Tensor({1, 1, raw.height, raw.width}), Tensor({1, 1, raw.height, raw.width})};
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    if (raw.samples[i] != 0) {
      d.depth[i] = raw.samples[i] / 256.0;
      d.valid[i] = 1.0;
    }
  }
  return d;
}

void write_depth_png(const std::string& path, const DepthMap& depth) {
  const Dims4 d = depth.depth.dims4();
  if (d.n != 1 || d.c != 1) throw ShapeError("write_depth_png expects 1 x 1 x H x W");
  RawImage raw{d.w, d.h, 1, 16, std::vector<std::uint16_t>(d.w * d.h, 0)};
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    if (depth.valid[i] == 0.0) continue;
    const double z = depth.depth[i];
    const long v = std::lround(256.0 * z);
    if (!std::isfinite(z) || v > 65535 || v < 0) {
      throw InvalidArgument("depth " + std::to_string(z) + " m cannot be stored in a 16-bit depth PNG");
    }
    // A valid pixel must not collapse onto the invalid sentinel.
    raw.samples[i] = static_cast<std::uint16_t>(std::max(v, 1L));
  }
  write_png(path, raw);
}

Tensor read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (!in || magic != "Pf" || w == 0 || h == 0 || scale == 0.0) {
    throw IoError("'" + path + "' is not a grayscale PFM file");
  }
  in.get();  // single whitespace after the header
  const bool little = scale < 0.0;
  Tensor t({1, 1, h, w});
  std::vector<unsigned char> row(4 * w);
  for (std::size_t r = 0; r < h; ++r) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()))) {
      throw IoError("'" + path + "' is truncated");
    }
    const std::size_t y = h - 1 - r;
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        const std::uint32_t byte = row[4 * x + (little ? b : 3 - b)];
        bits |= byte << (8 * b);
      }
      t[y * w + x] = std::bit_cast<float>(bits);
    }
  }
  return t;
}

void write_pfm(const std::string& path, const Tensor& image) {
  const Dims4 d = image.dims4();
  if (d.n != 1 || d.c != 1) throw ShapeError("write_pfm expects 1 x 1 x H x W");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "Pf\n" << d.w << ' ' << d.h << "\n-1.0\n";
    std::vector<unsigned char> row(4 * d.w);
    for (std::size_t r = 0; r < d.h; ++r) {
      const std::size_t y = d.h - 1 - r;
      for (std::size_t x = 0; x < d.w; ++x) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(image[y * d.w + x]));
        for (int b = 0; b < 4; ++b) row[4 * x + b] = static_cast<unsigned char>(bits >> (8 * b));
      }
      out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("failed writing '" + path + "'");
  }
  replace_file(tmp, path);
}

Calib read_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open calibration '" + path + "'");
  std::optional<double> f, b;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(line.substr(eq + 1), &used);
    } catch (const std::exception&) {
      throw IoError("calibration '" + path + "': unreadable value for '" + key + "'");
    }
    if (key == "f_px") f = value;
    if (key == "baseline_m") b = value;
  }
  if (!f || !b) throw IoError("calibration '" + path + "' needs f_px and baseline_m");
  try {
    return Calib::make(*f, *b);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument("calibration '" + path + "': " + e.what());
  }
}

void write_calib(const std::string& path, const Calib& calib) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  char buf[96];
  std::snprintf(buf, sizeof buf, "f_px=%.17g\nbaseline_m=%.17g\n", calib.f, calib.b);
  out << buf;
  if (!out) throw IoError("failed writing '" + path + "'");
}

StereoSample load_kitti_sample(const std::string& left_path, const std::string& right_path,
                               const std::string& depth_l_path, const std::string& depth_r_path,
                               const std::string& calib_path) {
  StereoSample s;
  s.left = read_image(left_path);
  s.right = read_image(right_path);
  s.depth_left = read_depth_png(depth_l_path);
  s.depth_right = read_depth_png(depth_r_path);
  s.calib = read_calib(calib_path);
  const Shape& shape = s.left.shape();
  auto same = [&](const Tensor& t, const std::string& path) {
    if (t.shape() != shape) {
      throw ShapeError("'" + path + "' is " + shape_string(t.shape()) + " but '" + left_path + "' is " +
                       shape_string(shape));
    }
  };
  same(s.right, right_path);
  same(s.depth_left.depth, depth_l_path);
  same(s.depth_right.depth, depth_r_path);
  return s;
}

void write_sample(const std::string& dir, const StereoSample& sample) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const fs::path p(dir);
  write_image((p / "left.png").string(), sample.left);
  write_image((p / "right.png").string(), sample.right);
  write_depth_png((p / "depth_left.png").string(), sample.depth_left);
  write_depth_png((p / "depth_right.png").string(), sample.depth_right);
  write_calib((p / "calib.txt").string(), sample.calib);
  if (!sample.true_rho_left.empty()) write_pfm((p / "true_rho.pfm").string(), sample.true_rho_left);
}

StereoSample read_sample(const std::string& dir) {
  const fs::path p(dir);
  StereoSample s = load_kitti_sample((p / "left.png").string(), (p / "right.png").string(),
                                     (p / "depth_left.png").string(), (p / "depth_right.png").string(),
                                     (p / "calib.txt").string());
  if (fs::exists(p / "true_rho.pfm")) s.true_rho_left = read_pfm((p / "true_rho.pfm").string());
  return s;
}

std::string sample_dir_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

std::vector<std::string> list_sample_dirs(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "left.png")) out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<StereoSample> read_dataset(const std::string& dir) {
  std::vector<StereoSample> out;
  for (const std::string& d : list_sample_dirs(dir)) out.push_back(read_sample(d));
  if (out.empty()) throw IoError("no samples found in '" + dir + "'");
  return out;
}

}  // namespace depthforge
