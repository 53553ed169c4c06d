#pragma once

// 8-bit PGM/PPM export. Grayscale maps are min-max normalized per map; the
// original range is kept in a "# min=<a> max=<b>" header comment so pixel
// values can be mapped back: x = min + q / 255 * (max - min).

#include <array>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "handocc/tensor.hpp"

namespace handocc::image {

struct GrayMap {
  std::size_t width = 0, height = 0;
  double min = 0.0, max = 0.0;
  std::vector<unsigned char> pixels;  // row-major

  /// Value represented by pixel (r, c) after undoing the normalization.
  double value(std::size_t r, std::size_t c) const;
};

/// map: [h x w] (or [h x w x 1]).
GrayMap normalize(const Tensor& map);
void write_pgm(std::ostream& out, const GrayMap& g);
void write_pgm(const std::filesystem::path& path, const Tensor& map);
GrayMap read_pgm(const std::filesystem::path& path);

/// rgb: [H x W x 3] in [0, 1], clamped.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

/// Mean over channels of an [h x w x c] map.
Tensor channel_mean(const Tensor& map);

/// Copy of rgb with small crosses at the given (u, v) pixel positions.
Tensor draw_points(const Tensor& rgb, const Tensor& uv, const std::array<double, 3>& color);

}  // namespace handocc::image
