#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlf/tensor.hpp"

namespace vlf {

// Pixel rectangle, half-open: x in [x0, x1), y in [y0, y1).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return width() <= 0 || height() <= 0; }
  bool contains(double x, double y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }
  bool operator==(const Box&) const = default;
};

// Small RGB raster, 8 bits per channel, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height

  static Image blank(int width, int height, std::uint8_t value = 0);
  std::uint8_t& at(int x, int y, int channel);
  std::uint8_t at(int x, int y, int channel) const;
  bool operator==(const Image&) const = default;
};

// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// Subpixel window in image coordinates.
struct WindowD {
  double x0, y0, x1, y1;
};

// Expands a face box by margin * box side on every edge and clamps to the
// image bounds.
WindowD expand_box(const Box& box, double margin, int image_w, int image_h);

// Bilinear resample of a window into a square output raster.
Image crop_resize(const Image& img, const WindowD& window, int out_size);

// Maps pixel values to [-1, 1] as a [h x w x 3] tensor.
Tensor image_to_tensor(const Image& img);

// Maps a source-image box through a crop_resize(window, out_size) transform.
WindowD map_box_to_crop(const Box& box, const WindowD& window, int out_size);

std::string hash_image(const Image& img);

}  // namespace vlf
