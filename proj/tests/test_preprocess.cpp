#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "m2cnn/error.hpp"
#include "m2cnn/image.hpp"
#include "m2cnn/preprocess.hpp"
#include "oracles.hpp"

using namespace m2cnn;

namespace {

Image random_image(std::size_t h, std::size_t w, Rng& rng) {
  Image img(h, w);
  for (auto& v : img.pixels) v = std::floor(rng.uniform(0.0, 256.0));
  return img;
}

std::vector<double> channel(const Image& img, std::size_t c) {
  std::vector<double> out(img.height * img.width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixels[i * 3 + c];
  return out;
}

std::vector<double> outer(const std::vector<double>& k) {
  std::vector<double> k2(k.size() * k.size());
  for (std::size_t i = 0; i < k.size(); ++i)
    for (std::size_t j = 0; j < k.size(); ++j) k2[i * k.size() + j] = k[i] * k[j];
  return k2;
}

}  // namespace

TEST_CASE("preprocessing defaults") {
  PreprocessParams p;
  CHECK(p.alpha == 4.0);
  CHECK(p.beta == -4.0);
  CHECK(p.rho == 10.0);
  CHECK(p.gamma == 128.0);
  CHECK(p.kernel_radius() == 30);
  p.rho = 0.0;
  CHECK_THROWS_AS(p.validate(), ParameterError);
}

TEST_CASE("crop_black_border") {
  Image img(20, 20);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x) {
      const double dy = y - 9.5, dx = x - 9.5;
      if (dy * dy + dx * dx <= 25.0)
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 200.0;
    }
  Image crop = crop_black_border(img, 10.0);
  CHECK(crop.height == 10);
  CHECK(crop.width == 10);
  CHECK(crop.at(5, 5, 0) == 200.0);

  Image full(6, 7, 50.0);
  CHECK(crop_black_border(full, 10.0) == full);

  CHECK_THROWS_AS(crop_black_border(Image(8, 8, 0.0), 10.0), EmptyImageError);
}

TEST_CASE("gaussian kernel") {
  for (double rho : {0.5, 1.0, 2.5, 10.0}) {
    for (std::size_t radius : {1, 3, 7, 30}) {
      auto k = gaussian_kernel(rho, radius);
      REQUIRE(k.size() == 2 * radius + 1);
      double s = 0.0;
      for (double v : k) s += v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t i = 0; i < radius; ++i) CHECK(k[i] == k[2 * radius - i]);
    }
  }
  auto k = gaussian_kernel(1.0, 3);
  double norm = 0.0;
  for (int i = -3; i <= 3; ++i) norm += std::exp(-0.5 * i * i) / std::sqrt(2.0 * std::numbers::pi);
  CHECK(k[3] == doctest::Approx((1.0 / std::sqrt(2.0 * std::numbers::pi)) / norm).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_kernel(0.0, 3), ParameterError);
  CHECK_THROWS_AS(gaussian_kernel(-1.0, 3), ParameterError);
}

TEST_CASE("constant image normalises to exactly 128") {
  PreprocessParams p;
  for (double c : {0.0, 17.0, 128.0, 200.5, 255.0}) {
    Image out = normalize_minpool(Image(40, 33, c), p);
    for (double v : out.pixels) REQUIRE(v == 128.0);
  }
}

TEST_CASE("alpha=1 beta=0 gamma=0 is the identity") {
  Rng rng(4);
  Image img = random_image(12, 9, rng);
  PreprocessParams p;
  p.alpha = 1.0;
  p.beta = 0.0;
  p.gamma = 0.0;
  CHECK(normalize_minpool(img, p) == img);
}

TEST_CASE("single bright pixel matches a 2-D convolution oracle") {
  PreprocessParams p;
  Image img(41, 41, 128.0);
  for (std::size_t c = 0; c < 3; ++c) img.at(20, 20, c) = 255.0;
  Image out = normalize_minpool(img, p);
  const std::size_t r = p.kernel_radius();
  const auto k2 = outer(gaussian_kernel(p.rho, r));
  for (std::size_t c = 0; c < 3; ++c) {
    const auto blurred = oracle::filter2d_replicate(channel(img, c), 41, 41, k2, r);
    for (std::size_t i = 0; i < blurred.size(); ++i) {
      const double want = std::clamp(p.alpha * img.pixels[i * 3 + c] + p.beta * blurred[i] + p.gamma, 0.0, 255.0);
      REQUIRE(out.pixels[i * 3 + c] == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("separable blur agrees with full 2-D filtering") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Image img = random_image(16, 16, rng);
    for (double rho : {1.0, 2.0, 10.0}) {
      const std::size_t r = static_cast<std::size_t>(std::ceil(3 * rho));
      Image sep = gaussian_blur(img, rho, r);
      const auto k2 = outer(gaussian_kernel(rho, r));
      for (std::size_t c = 0; c < 3; ++c) {
        const auto full = oracle::filter2d_replicate(channel(img, c), 16, 16, k2, r);
        for (std::size_t i = 0; i < full.size(); ++i) REQUIRE(std::abs(sep.pixels[i * 3 + c] - full[i]) < 1e-9);
      }
    }
  }
}

TEST_CASE("bilinear resize") {
  Rng rng(8);
  Image img = random_image(7, 5, rng);
  CHECK(resize_bilinear(img, 7, 5) == img);

  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 3}, {13, 2}, {1, 1}, {40, 29}}) {
    for (double v : resize_bilinear(Image(6, 4, 77.25), h, w).pixels) REQUIRE(v == 77.25);
  }

  // Pixel centres of a 3-wide output land on source coordinates 0, 0.5, 1
  // (the outer two after clamping), so the middle row and column average.
  Image board(2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    board.at(0, 1, c) = 255.0;
    board.at(1, 0, c) = 255.0;
  }
  Image up = resize_bilinear(board, 3, 3);
  const double want[3][3] = {{0.0, 127.5, 255.0}, {127.5, 127.5, 127.5}, {255.0, 127.5, 0.0}};
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) CHECK(up.at(y, x, 1) == want[y][x]);

  CHECK_THROWS_AS(resize_bilinear(img, 0, 4), ParameterError);
}

TEST_CASE("preprocess_image crops, normalises and resizes") {
  Image img(30, 30);
  for (std::size_t y = 5; y < 25; ++y)
    for (std::size_t x = 5; x < 25; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 90.0;
  PreprocessParams p;
  p.rho = 2.0;
  Image out = preprocess_image(img, p, 16);
  CHECK(out.height == 16);
  CHECK(out.width == 16);
  for (double v : out.pixels) CHECK(v == 128.0);
}

TEST_CASE("ppm round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "m2cnn_test_ppm";
  std::filesystem::create_directories(dir);
  Rng rng(12);
  Image img = random_image(5, 9, rng);
  write_ppm(dir / "a.ppm", img);
  CHECK(read_ppm(dir / "a.ppm") == img);
  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), IoError);
  {
    std::ofstream bad(dir / "bad.ppm");
    bad << "P3\n1 1\n255\n0 0 0\n";
  }
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), FormatError);
  std::filesystem::remove_all(dir);
}
