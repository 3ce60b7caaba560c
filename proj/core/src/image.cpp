// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "styleloop/error.hpp"

namespace styleloop {

namespace fs = std::filesystem;

bool ImageTensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

uint8_t quantize_u8(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<uint8_t>(std::lround((c + 1.0) * 127.5));
}

namespace {

std::vector<uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open image '" + path.string() + "'");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool has_png_signature(const std::vector<uint8_t>& b) {
  return b.size() >= 8 && png_sig_cmp(b.data(), 0, 8) == 0;
}

bool has_jpeg_signature(const std::vector<uint8_t>& b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

Rgb8 decode_jpeg(const std::vector<uint8_t>& bytes) {
  struct ErrorMgr {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
  };
  jpeg_decompress_struct info{};
  ErrorMgr err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = [](j_common_ptr cinfo) {
    auto* e = reinterpret_cast<ErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, e->message);
    std::longjmp(e->jump, 1);
  };
  if (setjmp(err.jump) != 0) {
    jpeg_destroy_decompress(&info);
    throw IoError(std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  Rgb8 img;
  img.width = static_cast<int>(info.output_width);
  img.height = static_cast<int>(info.output_height);
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = img.pixels.data() + static_cast<size_t>(info.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return img;
}

}  // namespace

Rgb8 decode_png(const std::vector<uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    throw IoError(std::string("png decode failed: ") + image.message);
  }
  // Alpha is dropped by compositing over black; grayscale expands to RGB.
  image.format = PNG_FORMAT_RGB;
  Rgb8 img;
  img.width = static_cast<int>(image.width);
  img.height = static_cast<int>(image.height);
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  png_color black{0, 0, 0};
  if (png_image_finish_read(&image, &black, img.pixels.data(), 0, nullptr) == 0) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("png decode failed: " + msg);
  }
  return img;
}

std::vector<uint8_t> encode_png(const Rgb8& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr) == 0) {
    throw IoError(std::string("png encode failed: ") + image.message);
  }
  std::vector<uint8_t> out(size);
  if (png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr) == 0) {
    throw IoError(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void write_png(const Rgb8& img, const fs::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write image '" + path.string() + "'");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("short write to '" + path.string() + "'");
  }
}

Rgb8 decode_image_file(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    if (has_png_signature(bytes)) {
      return decode_png(bytes);
    }
    if (has_jpeg_signature(bytes)) {
      return decode_jpeg(bytes);
    }
  } catch (const IoError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
  throw IoError("'" + path.string() + "': unsupported image format");
}

ImageTensor to_tensor(const Rgb8& img) {
  ImageTensor t(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(c, y, x) = normalize_u8(img.pixels[(static_cast<size_t>(y) * img.width + x) * 3 + c]);
      }
    }
  }
  return t;
}

Rgb8 to_rgb8(const ImageTensor& img) {
  Rgb8 out;
  out.height = img.height;
  out.width = img.width;
  out.pixels.resize(img.pixels() * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.pixels[(static_cast<size_t>(y) * img.width + x) * 3 + c] = quantize_u8(img.at(c, y, x));
      }
    }
  }
  return out;
}

Rgb8 resize_bilinear(const Rgb8& img, int height, int width) {
  if (img.height == height && img.width == width) {
    return img;
  }
  Rgb8 out;
  out.height = height;
  out.width = width;
  out.pixels.resize(static_cast<size_t>(height) * width * 3);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  auto src = [&](int y, int x, int c) {
    return static_cast<double>(img.pixels[(static_cast<size_t>(y) * img.width + x) * 3 + c]);
  };
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src(y0, x0, c) * (1.0 - wx) + src(y0, x1, c) * wx;
        const double bottom = src(y1, x0, c) * (1.0 - wx) + src(y1, x1, c) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        out.pixels[(static_cast<size_t>(y) * width + x) * 3 + c] =
            static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

ImageTensor load_image(const fs::path& path, int size) {
  return to_tensor(resize_bilinear(decode_image_file(path), size, size));
}

void save_image(const ImageTensor& img, const fs::path& path) {
  if (!img.all_finite()) {
    throw IoError("refusing to save non-finite image to '" + path.string() + "'");
  }
  write_png(to_rgb8(img), path);
}

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

ag::Tensor image_to_rows(const ImageTensor& img) {
  const int n = img.height * img.width;
  std::vector<double> v(static_cast<size_t>(n) * 3);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < n; ++i) {
      v[static_cast<size_t>(i) * 3 + c] = img.data[static_cast<size_t>(c) * n + i];
    }
  }
  return ag::Tensor::from(n, 3, std::move(v));
}

ImageTensor rows_to_image(const ag::Tensor& rows, int height, int width) {
  if (rows.rows() != height * width || rows.cols() != 3) {
    throw ShapeError("rows_to_image: expected [h*w x 3]");
  }
  ImageTensor img(height, width);
  const int n = height * width;
  const auto d = rows.data();
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < n; ++i) {
      img.data[static_cast<size_t>(c) * n + i] = d[static_cast<size_t>(i) * 3 + c];
    }
  }
  return img;
}

}  // namespace styleloop
