#include "qsattn/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

namespace qsattn {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

ImageU8 read_png_file(FILE* fp, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: allocation failure reading " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png: allocation failure reading " + path);
  }
  std::vector<png_bytep> row_ptrs;
  ImageU8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: failed to decode " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);  // palette/gray/low-depth -> 8-bit
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(3 * static_cast<size_t>(img.width) * static_cast<size_t>(img.height));
  row_ptrs.resize(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y) row_ptrs[static_cast<size_t>(y)] = img.px(0, y);
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

ImageU8 read_jpeg_file(FILE* fp, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("jpeg: failed to decode " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  ImageU8 img;
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.rgb.resize(3 * static_cast<size_t>(img.width) * static_cast<size_t>(img.height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.px(0, static_cast<int>(cinfo.output_scanline));
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  unsigned char magic[8] = {0};
  const size_t got = std::fread(magic, 1, sizeof(magic), fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return read_png_file(fp.get(), path);
  if (got >= 2 && magic[0] == 0xff && magic[1] == 0xd8) return read_jpeg_file(fp.get(), path);
  throw IoError("unrecognized image format: " + path);
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.width <= 0 || img.height <= 0 || img.rgb.size() != 3u * static_cast<size_t>(img.width) * static_cast<size_t>(img.height))
    throw IoError("write_png: malformed image buffer for " + path);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: allocation failure writing " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: allocation failure writing " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.px(0, y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 resize_bilinear(const ImageU8& img, int new_w, int new_h) {
  if (new_w <= 0 || new_h <= 0) throw ConfigError("resize_bilinear: target size must be positive");
  ImageU8 out;
  out.width = new_w;
  out.height = new_h;
  out.rgb.resize(3 * static_cast<size_t>(new_w) * static_cast<size_t>(new_h));
  const double sx = static_cast<double>(img.width) / new_w;
  const double sy = static_cast<double>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::max(0, std::min(img.height - 1, static_cast<int>(std::floor(fy))));
    const int y1 = std::min(img.height - 1, y0 + 1);
    const double wy = std::min(1.0, std::max(0.0, fy - y0));
    for (int x = 0; x < new_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::max(0, std::min(img.width - 1, static_cast<int>(std::floor(fx))));
      const int x1 = std::min(img.width - 1, x0 + 1);
      const double wx = std::min(1.0, std::max(0.0, fx - x0));
      for (int c = 0; c < 3; ++c) {
        const double v00 = img.px(x0, y0)[c], v01 = img.px(x1, y0)[c];
        const double v10 = img.px(x0, y1)[c], v11 = img.px(x1, y1)[c];
        const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        out.px(x, y)[c] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
      }
    }
  }
  return out;
}

ImageU8 crop(const ImageU8& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height)
    throw ConfigError("crop: window outside image bounds");
  ImageU8 out;
  out.width = w;
  out.height = h;
  out.rgb.resize(3 * static_cast<size_t>(w) * static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) std::memcpy(out.px(0, y), img.px(x0, y0 + y), 3 * static_cast<size_t>(w));
  return out;
}

ImageU8 hflip(const ImageU8& img) {
  ImageU8 out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      std::memcpy(out.px(x, y), img.px(img.width - 1 - x, y), 3);
  return out;
}

}  // namespace qsattn
