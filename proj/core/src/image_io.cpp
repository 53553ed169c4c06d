#include "handocc/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "handocc/error.hpp"

namespace handocc::image {

double GrayMap::value(std::size_t r, std::size_t c) const {
  return min + static_cast<double>(pixels.at(r * width + c)) / 255.0 * (max - min);
}

GrayMap normalize(const Tensor& map) {
  const Shape& s = map.shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[2] == 1))) {
    throw DimensionError("grayscale export needs an [h x w] map, got " + shape_to_string(s));
  }
  map.check_finite("grayscale export");
  GrayMap g;
  g.height = s[0];
  g.width = s[1];
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  g.min = *lo;
  g.max = *hi;
  const double span = g.max - g.min;
  g.pixels.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    g.pixels[i] = span > 0.0 ? static_cast<unsigned char>(std::lround(255.0 * (map[i] - g.min) / span)) : 0;
  }
  return g;
}

void write_pgm(std::ostream& out, const GrayMap& g) {
  char range[96];
  std::snprintf(range, sizeof range, "# min=%.17g max=%.17g\n", g.min, g.max);
  out << "P5\n" << range << g.width << ' ' << g.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_pgm(out, normalize(map));
  if (!out) throw IoError("write failed for " + path.string());
}

GrayMap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != "P5") throw IoError(path.string() + " is not a binary PGM");
  GrayMap g;
  std::string line;
  while (in.peek() == '#') {
    std::getline(in, line);
    std::sscanf(line.c_str(), "# min=%lf max=%lf", &g.min, &g.max);
  }
  int maxval = 0;
  in >> g.width >> g.height >> maxval;
  in.get();
  if (!in || maxval != 255) throw IoError("unsupported PGM header in " + path.string());
  g.pixels.resize(g.width * g.height);
  in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
  if (!in) throw IoError("truncated PGM " + path.string());
  return g;
}

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  const Shape& s = rgb.shape();
  if (s.size() != 3 || s[2] != 3) throw DimensionError("PPM export needs [H x W x 3], got " + shape_to_string(s));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << s[1] << ' ' << s[0] << "\n255\n";
  std::vector<unsigned char> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(rgb[i], 0.0, 1.0)));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor channel_mean(const Tensor& map) {
  const Shape& s = map.shape();
  if (s.size() != 3) throw DimensionError("channel_mean needs [h x w x c], got " + shape_to_string(s));
  Tensor out({s[0], s[1]});
  for (std::size_t i = 0; i < s[0] * s[1]; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < s[2]; ++c) acc += map[i * s[2] + c];
    out[i] = acc / static_cast<double>(s[2]);
  }
  return out;
}

Tensor draw_points(const Tensor& rgb, const Tensor& uv, const std::array<double, 3>& color) {
  Tensor out = rgb;
  const auto h = static_cast<long>(rgb.dim(0)), w = static_cast<long>(rgb.dim(1));
  for (std::size_t j = 0; j < uv.dim(0); ++j) {
    const long u = std::lround(uv.at(j, 0)), v = std::lround(uv.at(j, 1));
    for (long d = -1; d <= 1; ++d) {
      for (const auto& [x, y] : {std::pair{u + d, v}, std::pair{u, v + d}}) {
        if (x < 0 || y < 0 || x >= w || y >= h) continue;
        for (std::size_t k = 0; k < 3; ++k) out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), k) = color[k];
      }
    }
  }
  return out;
}

}  // namespace handocc::image
