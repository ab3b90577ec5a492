#ifndef QSATTN_IMAGE_IO_HPP
#define QSATTN_IMAGE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "qsattn/tensor.hpp"

namespace qsattn {

// Interleaved RGB, row-major, 3 bytes per pixel.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;

  uint8_t* px(int x, int y) { return rgb.data() + 3 * (static_cast<size_t>(y) * width + x); }
  const uint8_t* px(int x, int y) const { return rgb.data() + 3 * (static_cast<size_t>(y) * width + x); }
};

// PNG or JPEG, decided by file magic. Throws IoError on unreadable input.
ImageU8 read_image(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

ImageU8 resize_bilinear(const ImageU8& img, int new_w, int new_h);
ImageU8 crop(const ImageU8& img, int x0, int y0, int w, int h);
ImageU8 hflip(const ImageU8& img);

// [3,H,W] in [-1,1]; 255 maps to exactly +1 and 0 to -1.
template <std::floating_point S>
Tensor<S> image_to_tensor(const ImageU8& img) {
  const Index H = img.height, W = img.width;
  std::vector<S> d(static_cast<size_t>(3 * H * W));
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        d[static_cast<size_t>((c * H + y) * W + x)] =
            static_cast<S>(img.rgb[3 * static_cast<size_t>(y * W + x) + static_cast<size_t>(c)]) / S(127.5) - S(1);
  return Tensor<S>({3, H, W}, std::move(d));
}

template <std::floating_point S>
ImageU8 tensor_to_image(const Tensor<S>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image: expected [3,H,W], got " + shape_str(t.shape()));
  const Index H = t.dim(1), W = t.dim(2);
  ImageU8 img;
  img.width = static_cast<int>(W);
  img.height = static_cast<int>(H);
  img.rgb.resize(static_cast<size_t>(3 * H * W));
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double v = (static_cast<double>(t.data()[static_cast<size_t>((c * H + y) * W + x)]) + 1.0) * 127.5;
        v = std::min(255.0, std::max(0.0, std::round(v)));
        img.rgb[3 * static_cast<size_t>(y * W + x) + static_cast<size_t>(c)] = static_cast<uint8_t>(v);
      }
  return img;
}

}  // namespace qsattn

#endif  // QSATTN_IMAGE_IO_HPP
