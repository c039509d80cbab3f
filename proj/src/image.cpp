#include "vlf/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vlf/errors.hpp"
#include "vlf/hash.hpp"

namespace vlf {

Image Image::blank(int width, int height, std::uint8_t value) {
  Image img;
  img.width = width;
  img.height = height;
  img.rgb.assign(static_cast<std::size_t>(3) * width * height, value);
  return img;
}

std::uint8_t& Image::at(int x, int y, int channel) {
  return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
}

std::uint8_t Image::at(int x, int y, int channel) const {
  return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw DataError("write failed for " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError(path + " is not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError(path + " has an unsupported PPM header");
  }
  in.get();  // single whitespace after maxval
  Image img = Image::blank(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw DataError(path + " truncated");
  return img;
}

WindowD expand_box(const Box& box, double margin, int image_w, int image_h) {
  if (box.empty()) throw DataError("expand_box: degenerate face box");
  const double mx = margin * box.width();
  const double my = margin * box.height();
  WindowD w{box.x0 - mx, box.y0 - my, box.x1 + mx, box.y1 + my};
  w.x0 = std::max(0.0, w.x0);
  w.y0 = std::max(0.0, w.y0);
  w.x1 = std::min(static_cast<double>(image_w), w.x1);
  w.y1 = std::min(static_cast<double>(image_h), w.y1);
  return w;
}

namespace {

double sample_bilinear(const Image& img, double x, double y, int channel) {
  // Pixel centers at integer + 0.5.
  const double fx = std::clamp(x - 0.5, 0.0, img.width - 1.0);
  const double fy = std::clamp(y - 0.5, 0.0, img.height - 1.0);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double tx = fx - x0;
  const double ty = fy - y0;
  const double v00 = img.at(x0, y0, channel);
  const double v10 = img.at(x1, y0, channel);
  const double v01 = img.at(x0, y1, channel);
  const double v11 = img.at(x1, y1, channel);
  return (1 - ty) * ((1 - tx) * v00 + tx * v10) +
         ty * ((1 - tx) * v01 + tx * v11);
}

}  // namespace

Image crop_resize(const Image& img, const WindowD& window, int out_size) {
  if (window.x1 <= window.x0 || window.y1 <= window.y0) {
    throw DataError("crop_resize: empty window");
  }
  Image out = Image::blank(out_size, out_size);
  const double sx = (window.x1 - window.x0) / out_size;
  const double sy = (window.y1 - window.y0) / out_size;
  for (int y = 0; y < out_size; ++y) {
    for (int x = 0; x < out_size; ++x) {
      const double srcx = window.x0 + (x + 0.5) * sx;
      const double srcy = window.y0 + (y + 0.5) * sy;
      for (int c = 0; c < 3; ++c) {
        const double v = sample_bilinear(img, srcx, srcy, c);
        out.at(x, y, c) =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const Image& img) {
  std::vector<double> data(img.rgb.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<double>(img.rgb[i]) / 127.5 - 1.0;
  }
  return Tensor::from_data({img.height, img.width, 3}, std::move(data));
}

WindowD map_box_to_crop(const Box& box, const WindowD& window, int out_size) {
  const double sx = out_size / (window.x1 - window.x0);
  const double sy = out_size / (window.y1 - window.y0);
  return WindowD{(box.x0 - window.x0) * sx, (box.y0 - window.y0) * sy,
                 (box.x1 - window.x0) * sx, (box.y1 - window.y0) * sy};
}

std::string hash_image(const Image& img) {
  std::ostringstream head;
  head << img.width << "x" << img.height << ":";
  std::string blob = head.str();
  blob.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return sha256_hex(blob);
}

}  // namespace vlf
