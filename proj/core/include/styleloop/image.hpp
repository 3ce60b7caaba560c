// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "styleloop/autograd.hpp"

namespace styleloop {

/// RGB image, planar [3 x H x W], values nominally in [-1, 1].
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static constexpr int kChannels = 3;

  ImageTensor() = default;
  ImageTensor(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<size_t>(kChannels) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
  bool same_shape(const ImageTensor& o) const { return height == o.height && width == o.width; }
  bool all_finite() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// 8-bit interleaved RGB.
struct Rgb8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // size 3*h*w
};

inline double normalize_u8(uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }
/// Clamp to [-1, 1] and round to the nearest 8-bit level.
uint8_t quantize_u8(double v);

Rgb8 decode_image_file(const std::filesystem::path& path);
Rgb8 decode_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_png(const Rgb8& img);
void write_png(const Rgb8& img, const std::filesystem::path& path);

ImageTensor to_tensor(const Rgb8& img);
Rgb8 to_rgb8(const ImageTensor& img);

/// Bilinear resize (half-pixel centres, edge clamp, no antialiasing).
/// Same-size input is returned unchanged.
Rgb8 resize_bilinear(const Rgb8& img, int height, int width);

/// Reads PNG or JPEG, converts grayscale/alpha to RGB, resizes to size x size
/// and maps [0, 255] linearly onto [-1, 1]. Throws IoError.
ImageTensor load_image(const std::filesystem::path& path, int size);

/// Clamps to [-1, 1], maps to 8 bit and writes a PNG. Throws IoError.
void save_image(const ImageTensor& img, const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);
/// Image files directly inside `dir`, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Conversions to the [h*w x 3] autograd layout.
ag::Tensor image_to_rows(const ImageTensor& img);
ImageTensor rows_to_image(const ag::Tensor& rows, int height, int width);

}  // namespace styleloop
