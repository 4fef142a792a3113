#include "m2cnn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include <fmt/format.h>

#include "m2cnn/error.hpp"

namespace m2cnn {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  if (token.empty()) throw FormatError(fmt::format("{}: truncated PPM header", path.string()));
  return token;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string token = header_token(in, path);
  try {
    std::size_t pos = 0;
    const long v = std::stol(token, &pos);
    if (pos != token.size() || v <= 0) throw std::invalid_argument(token);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError(fmt::format("{}: bad PPM header field '{}'", path.string(), token));
  }
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  if (header_token(in, path) != "P6") throw FormatError(fmt::format("{}: not a binary PPM (P6)", path.string()));
  const std::size_t width = header_number(in, path);
  const std::size_t height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (maxval != 255) throw FormatError(fmt::format("{}: only maxval 255 is supported, got {}", path.string(), maxval));
  std::vector<unsigned char> raw(width * height * Image::channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError(fmt::format("{}: truncated pixel data", path.string()));
  }
  Image img(height, width);
  std::copy(raw.begin(), raw.end(), img.pixels.begin());
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.empty()) throw EmptyImageError("cannot write an empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(), [](double v) {
    return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
  });
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

}  // namespace m2cnn
