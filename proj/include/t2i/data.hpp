#pragma once

// Paired datasets, the PPM codec, synthetic datasets, manifests and montages.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "t2i/generator.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

struct PairedSample {
  std::string id;
  Tensor input;                       // [H,W,3] in [-1,1]
  std::vector<std::int32_t> labels;   // segmentation: H*W class indices, row-major
  Tensor target;                      // regression: [H,W,C] in [-1,1]
};

struct Dataset {
  Task task = Task::segmentation;
  std::size_t num_classes = 0;  // segmentation only
  std::size_t image_size = 0;
  std::vector<PairedSample> samples;

  std::size_t target_channels() const;  // num_classes, or the regression target depth
  void validate() const;                // throws DataError
};

// ---- PPM (P6, maxval 255) ----------------------------------------------

struct Image8 {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

std::vector<std::uint8_t> encode_ppm(const Image8& image);
// Errors carry the byte offset of the problem (DataError).
Image8 decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");
Image8 read_ppm(const std::string& path);
void write_ppm(const Image8& image, const std::string& path);

// v255 = round((v + 1) * 127.5), clamped to [0,255]; v = p / 127.5 - 1.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t p);
// [H,W,1|3] tensor in [-1,1] <-> 8-bit RGB (one channel is replicated).
Image8 to_image8(const Tensor& image);
Tensor from_image8(const Image8& image);  // [H,W,3]

// Tensor images on disk, PPM only.
Tensor load_image(const std::string& path);
void save_image(const Tensor& image, const std::string& path);

// ---- segmentation rendering ----------------------------------------------

using Rgb = std::array<std::uint8_t, 3>;
// Fixed class palette; colors repeat after 16 classes.
Rgb palette_color(std::size_t cls);
Image8 render_labels(const std::vector<std::int32_t>& labels, std::size_t width, std::size_t height);
// Per-pixel argmax over the last axis of [H,W,K] (or [1,H,W,K]) logits.
std::vector<std::int32_t> argmax_labels(const Tensor& logits);

// ---- synthetic datasets ---------------------------------------------------

// Colored rectangles, ellipses and triangles on textured backgrounds.
// Classes for K = 3: 0 background, 1 shape interior, 2 shape border band of
// `border` pixels. K = 2: background / shape. K > 3: the interior class is
// 1 + (shape kind % (K - 2)) and the border is K - 1.
Dataset synth_segmentation_dataset(std::size_t n, std::size_t image_size, std::size_t num_classes,
                                   std::uint64_t seed, std::size_t border = 2);

// One axis-aligned shape used by the segmentation renderer.
struct ShapeSpec {
  enum class Kind { rectangle, ellipse, triangle } kind = Kind::rectangle;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // bounding box, pixel units, half-open
  Rgb color{};
};
// Class map of a scene; later shapes are drawn over earlier ones.
std::vector<std::int32_t> render_segmentation(const std::vector<ShapeSpec>& shapes, std::size_t image_size,
                                              std::size_t num_classes, std::size_t border);

// Overlapping fronto-parallel rectangles with a linear depth ramp each; the
// target is the nearest surface depth d in [0,1] mapped to 2d - 1, and empty
// pixels sit on the far plane (d = 1).
struct DepthRect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel box
  double depth = 1;                       // depth at (x0, y0)
  double slope_x = 0, slope_y = 0;        // depth change per pixel
  Rgb color{};
};
double depth_at(const DepthRect& r, double x, double y);
// Returns the [S,S,1] depth target (in [-1,1]) and writes the shaded input.
Tensor render_depth(const std::vector<DepthRect>& rects, std::size_t image_size, Tensor* input = nullptr);
Dataset synth_depth_dataset(std::size_t n, std::size_t image_size, std::uint64_t seed);

// ---- manifests --------------------------------------------------------------

// Header lines "task=...", "classes=...", "size=...", then one
// "input<TAB>target" pair per line; relative paths resolve against the
// manifest's directory. Segmentation targets use the red channel as the
// class index.
Dataset load_manifest(const std::string& path);

// ---- montages -----------------------------------------------------------

// Rows of equally sized tiles separated by 2 white pixels.
Image8 montage(const std::vector<std::vector<Image8>>& rows);
inline constexpr std::size_t kMontageSeparator = 2;

}  // namespace t2i
