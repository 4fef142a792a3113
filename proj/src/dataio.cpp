#include "m2cnn/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "m2cnn/error.hpp"
#include "m2cnn/rng.hpp"

namespace m2cnn {

void SynthSpec::validate() const {
  if (resolution < 16) throw ParameterError(fmt::format("synthetic resolution must be >= 16, got {}", resolution));
  if (dot_size < 1) throw ParameterError("dot_size must be >= 1 pixel");
  if (dot_count_min < 0 || dot_count_max < dot_count_min) {
    throw ParameterError(fmt::format("bad dot count range [{}, {}]", dot_count_min, dot_count_max));
  }
  if (blobs_per_grade < 1 || region_count < 0) throw ParameterError("blob/region counts out of range");
  if (!(blob_radius > 0.0) || !(region_radius > 0.0)) throw ParameterError("lesion radii must be positive");
}

std::size_t SynthSpec::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"resolution", s.resolution},       {"counts", s.counts},
                     {"dot_size", s.dot_size},           {"dot_count_min", s.dot_count_min},
                     {"dot_count_max", s.dot_count_max}, {"blobs_per_grade", s.blobs_per_grade},
                     {"blob_radius", s.blob_radius},     {"region_count", s.region_count},
                     {"region_radius", s.region_radius}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  static const std::set<std::string> known{"resolution",      "counts",      "dot_size",     "dot_count_min",
                                           "dot_count_max",   "blobs_per_grade", "blob_radius", "region_count",
                                           "region_radius",   "seed"};
  if (!j.is_object()) throw ParameterError("synthetic spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ParameterError(fmt::format("unknown synthetic spec key '{}'", key));
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("resolution", s.resolution);
  get("counts", s.counts);
  get("dot_size", s.dot_size);
  get("dot_count_min", s.dot_count_min);
  get("dot_count_max", s.dot_count_max);
  get("blobs_per_grade", s.blobs_per_grade);
  get("blob_radius", s.blob_radius);
  get("region_count", s.region_count);
  get("region_radius", s.region_radius);
  get("seed", s.seed);
}

namespace {

struct Disc {
  double cx, cy, radius;
};

double quantize(double v) { return std::clamp(std::round(v), 0.0, 255.0); }

// Uniform point within frac * radius of the disc centre.
std::pair<double, double> point_in_disc(Rng& rng, const Disc& d, double frac) {
  const double r = d.radius * frac * std::sqrt(rng.uniform());
  const double theta = 2.0 * std::numbers::pi * rng.uniform();
  return {d.cy + r * std::sin(theta), d.cx + r * std::cos(theta)};
}

void blend(Image& img, std::size_t y, std::size_t x, const std::array<double, 3>& color, double alpha) {
  for (std::size_t c = 0; c < Image::channels; ++c) {
    img.at(y, x, c) = quantize(img.at(y, x, c) + alpha * (color[c] - img.at(y, x, c)));
  }
}

void paint_blob(Image& img, double cy, double cx, double radius) {
  static constexpr std::array<double, 3> kExudate{240.0, 220.0, 120.0};
  const auto lo_y = static_cast<long>(std::floor(cy - radius - 1)), hi_y = static_cast<long>(std::ceil(cy + radius + 1));
  const auto lo_x = static_cast<long>(std::floor(cx - radius - 1)), hi_x = static_cast<long>(std::ceil(cx + radius + 1));
  for (long y = std::max(0L, lo_y); y <= std::min<long>(hi_y, static_cast<long>(img.height) - 1); ++y) {
    for (long x = std::max(0L, lo_x); x <= std::min<long>(hi_x, static_cast<long>(img.width) - 1); ++x) {
      const double dist = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
      const double alpha = std::clamp(radius + 0.5 - dist, 0.0, 1.0);
      if (alpha > 0.0 && img.at(y, x, 0) > 0.0) blend(img, y, x, kExudate, alpha);
    }
  }
}

void paint_region(Image& img, double cy, double cx, double radius) {
  static constexpr std::array<double, 3> kRegion{250.0, 150.0, 140.0};
  const double sigma = radius / 2.0;
  const auto reach = static_cast<long>(std::ceil(radius));
  for (long y = std::max(0L, static_cast<long>(cy) - reach);
       y <= std::min<long>(static_cast<long>(cy) + reach, static_cast<long>(img.height) - 1); ++y) {
    for (long x = std::max(0L, static_cast<long>(cx) - reach);
         x <= std::min<long>(static_cast<long>(cx) + reach, static_cast<long>(img.width) - 1); ++x) {
      const double d2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
      if (d2 > radius * radius || img.at(y, x, 0) <= 0.0) continue;
      blend(img, y, x, kRegion, 0.75 * std::exp(-d2 / (2.0 * sigma * sigma)));
    }
  }
}

}  // namespace

SyntheticSample render_sample(const SynthSpec& spec, std::size_t index, int grade) {
  spec.validate();
  if (grade < 0 || grade >= kNumGrades) throw LabelError(fmt::format("grade {} outside [0,{})", grade, kNumGrades));
  const std::size_t res = spec.resolution;
  const double R = static_cast<double>(res);
  const double scale = R / 128.0;

  Rng bg_rng(mix_seed(spec.seed, 2 * index));
  Rng lesion_rng(mix_seed(spec.seed, 2 * index + 1));

  Disc disc{R / 2 + bg_rng.uniform(-0.02, 0.02) * R, R / 2 + bg_rng.uniform(-0.02, 0.02) * R,
            R * bg_rng.uniform(0.42, 0.46)};
  const std::array<double, 3> base{bg_rng.uniform(150, 190), bg_rng.uniform(70, 95), bg_rng.uniform(35, 55)};

  SyntheticSample s;
  s.background = Image(res, res, 0.0);
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      const double dy = (y + 0.5 - disc.cy) / disc.radius;
      const double dx = (x + 0.5 - disc.cx) / disc.radius;
      const double d2 = dx * dx + dy * dy;
      if (d2 > 1.0) continue;
      for (std::size_t c = 0; c < Image::channels; ++c) {
        // Keep the fundus strictly above the black level so lesions never
        // leak outside the disc.
        s.background.at(y, x, c) = std::max(1.0, quantize(base[c] * (1.0 - 0.3 * d2) + 2.0 * bg_rng.normal()));
      }
    }
  }

  Image img = s.background;
  if (grade == 4) {
    for (int i = 0; i < spec.region_count; ++i) {
      const auto [cy, cx] = point_in_disc(lesion_rng, disc, 0.6);
      paint_region(img, cy, cx, spec.region_radius * scale * lesion_rng.uniform(0.8, 1.2));
    }
  }
  if (grade >= 2) {
    const int count = std::max(1, spec.blobs_per_grade * (grade - 1) + lesion_rng.between(-1, 1));
    const double radius = spec.blob_radius * scale * (1.0 + 0.5 * (grade - 2));
    for (int i = 0; i < count; ++i) {
      const auto [cy, cx] = point_in_disc(lesion_rng, disc, 0.8);
      paint_blob(img, cy, cx, radius * lesion_rng.uniform(0.8, 1.2));
    }
  }
  if (grade >= 1) {
    const int count = lesion_rng.between(spec.dot_count_min, spec.dot_count_max);
    std::set<std::pair<std::size_t, std::size_t>> dots;
    for (int i = 0; i < count; ++i) {
      const auto [cy, cx] = point_in_disc(lesion_rng, disc, 0.8);
      for (std::size_t dy = 0; dy < spec.dot_size; ++dy) {
        for (std::size_t dx = 0; dx < spec.dot_size; ++dx) {
          const auto y = static_cast<std::size_t>(cy) + dy, x = static_cast<std::size_t>(cx) + dx;
          if (y >= res || x >= res || s.background.at(y, x, 0) <= 0.0) continue;
          for (std::size_t c = 0; c < Image::channels; ++c) img.at(y, x, c) = quantize(0.3 * s.background.at(y, x, c));
          dots.insert({y, x});
        }
      }
    }
    s.dot_pixels.assign(dots.begin(), dots.end());
  }
  s.image = {fmt::format("img_{:05d}", index), std::move(img), grade};
  return s;
}

Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::vector<int> grades;
  for (int g = 0; g < kNumGrades; ++g) grades.insert(grades.end(), spec.counts[static_cast<std::size_t>(g)], g);
  Rng rng(mix_seed(spec.seed, 0xD15EA5EULL));
  for (std::size_t i = grades.size(); i > 1; --i) std::swap(grades[i - 1], grades[rng.below(i)]);
  Dataset out;
  out.reserve(grades.size());
  for (std::size_t i = 0; i < grades.size(); ++i) out.push_back(render_sample(spec, i, grades[i]).image);
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream csv(dir / "labels.csv");
  if (!csv) throw IoError(fmt::format("cannot write {}", (dir / "labels.csv").string()));
  csv << "filename,grade\n";
  for (const auto& item : data) {
    const std::string rel = "images/" + item.id + ".ppm";
    write_ppm(dir / rel, item.pixels);
    csv << rel << ',' << item.grade << '\n';
  }
  if (!csv) throw IoError(fmt::format("short write to {}", (dir / "labels.csv").string()));
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_path) {
  std::ifstream in(labels_path);
  if (!in) throw IngestionError(fmt::format("cannot open labels file {}", labels_path.string()));
  Dataset out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw IngestionError(fmt::format("{} row {}: expected 'filename,grade', got '{}'", labels_path.string(), row, line));
    }
    const std::string file = trim(line.substr(0, comma));
    const std::string grade_text = trim(line.substr(comma + 1));
    if (row == 1 && file == "filename" && grade_text == "grade") continue;
    int grade = 0;
    const auto [ptr, ec] = std::from_chars(grade_text.data(), grade_text.data() + grade_text.size(), grade);
    if (ec != std::errc{} || ptr != grade_text.data() + grade_text.size()) {
      throw IngestionError(fmt::format("{} row {}: unparsable grade '{}'", labels_path.string(), row, grade_text));
    }
    if (grade < 0 || grade >= kNumGrades) {
      throw IngestionError(
          fmt::format("{} row {}: grade {} outside [0,{}]", labels_path.string(), row, grade, kNumGrades - 1));
    }
    const auto path = dir / file;
    if (!std::filesystem::exists(path)) {
      throw IngestionError(fmt::format("{} row {}: missing image {}", labels_path.string(), row, path.string()));
    }
    try {
      out.push_back({std::filesystem::path(file).stem().string(), read_ppm(path), grade});
    } catch (const Error& e) {
      throw IngestionError(fmt::format("{} row {}: {}", labels_path.string(), row, e.what()));
    }
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) { return load_dataset(dir, dir / "labels.csv"); }

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
                           bool hflip) {
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Rng flip_rng(mix_seed(seed ^ 0xF11FF11FULL, epoch));
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      b.indices.push_back(order[i]);
      b.labels.push_back(data[order[i]].grade);
      b.flipped.push_back(hflip && flip_rng.uniform() < 0.5 ? 1 : 0);
    }
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

void check_uniform_size(const Dataset& data, const std::vector<std::size_t>& indices) {
  for (auto i : indices) {
    if (data[i].pixels.height != data[indices[0]].pixels.height ||
        data[i].pixels.width != data[indices[0]].pixels.width) {
      throw DimensionError(fmt::format("batch mixes image sizes ({} vs {})", data[indices[0]].id, data[i].id));
    }
  }
}

}  // namespace

Tensor batch_tensor(const Dataset& data, const Batch& batch) {
  if (batch.indices.empty()) throw ContractError("empty batch");
  check_uniform_size(data, batch.indices);
  const std::size_t h = data[batch.indices[0]].pixels.height, w = data[batch.indices[0]].pixels.width;
  Tensor t({batch.size(), h, w, 3});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Image& img = data[batch.indices[b]].pixels;
    const bool flip = !batch.flipped.empty() && batch.flipped[b];
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          t[((b * h + y) * w + x) * 3 + c] = (img.at(y, flip ? w - 1 - x : x, c) - 128.0) / 128.0;
  }
  return t;
}

Tensor dataset_tensor(const Dataset& data, std::size_t begin, std::size_t end) {
  Batch b;
  for (std::size_t i = begin; i < end; ++i) {
    b.indices.push_back(i);
    b.labels.push_back(data[i].grade);
  }
  return batch_tensor(data, b);
}

Dataset resize_dataset(const Dataset& data, std::size_t resolution) {
  Dataset out;
  out.reserve(data.size());
  for (const auto& item : data) {
    const bool same = item.pixels.height == resolution && item.pixels.width == resolution;
    out.push_back({item.id, same ? item.pixels : resize_bilinear(item.pixels, resolution, resolution), item.grade});
  }
  return out;
}

Dataset preprocess_dataset(const Dataset& data, const PreprocessParams& params, std::size_t size) {
  params.validate();
  Dataset out;
  out.reserve(data.size());
  for (const auto& item : data) out.push_back({item.id, preprocess_image(item.pixels, params, size), item.grade});
  return out;
}

std::vector<int> grades_of(const Dataset& data) {
  std::vector<int> g;
  g.reserve(data.size());
  for (const auto& item : data) g.push_back(item.grade);
  return g;
}

}  // namespace m2cnn
