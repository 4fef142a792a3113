#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "m2cnn/image.hpp"
#include "m2cnn/preprocess.hpp"
#include "m2cnn/tensor.hpp"

namespace m2cnn {

inline constexpr int kNumGrades = 5;

struct LabeledImage {
  std::string id;
  Image pixels;
  int grade = 0;
};

using Dataset = std::vector<LabeledImage>;

/// Parameters of the synthetic ordinal-lesion generator. Lengths are given at
/// a 128-pixel reference scale and scaled with resolution, except dot_size,
/// which stays in absolute pixels: the tiny dots are meant to vanish when the
/// image is downsampled.
struct SynthSpec {
  std::size_t resolution = 128;
  std::array<std::size_t, kNumGrades> counts{20, 20, 20, 20, 20};
  std::size_t dot_size = 1;
  int dot_count_min = 10;           // grade >= 1
  int dot_count_max = 16;
  int blobs_per_grade = 3;          // grade g >= 2 gets about blobs_per_grade * (g - 1)
  double blob_radius = 2.5;         // grade 2; grows by half of this per grade above 2
  int region_count = 2;             // grade 4 only
  double region_radius = 14.0;
  std::uint64_t seed = 0;

  /// Throws ParameterError.
  void validate() const;
  std::size_t total() const;
};

void to_json(nlohmann::json& j, const SynthSpec& spec);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, SynthSpec& spec);

/// One rendered sample along with its lesion-free background, so callers can
/// measure what the lesions contribute.
struct SyntheticSample {
  LabeledImage image;
  Image background;
  std::vector<std::pair<std::size_t, std::size_t>> dot_pixels;  // (y, x)
};

SyntheticSample render_sample(const SynthSpec& spec, std::size_t index, int grade);

/// Deterministic in spec (including seed). Grades are interleaved by a seeded
/// permutation; pixels are integral so the dataset survives a PPM round trip.
Dataset generate_synthetic(const SynthSpec& spec);

/// Writes images/<id>.ppm and labels.csv (header "filename,grade").
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

/// Rows "filename,grade" with filenames relative to dir; an optional
/// "filename,grade" header is skipped. Throws IngestionError naming the row.
Dataset load_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_path);
Dataset load_dataset(const std::filesystem::path& dir);

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<std::uint8_t> flipped;
  std::vector<int> labels;
  std::size_t size() const { return indices.size(); }
};

/// Seeded permutation of the dataset for the given epoch, cut into batches;
/// the final short batch is kept. With hflip, each item is mirrored with
/// probability 1/2, decided from (seed, epoch, position).
std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
                           bool hflip = false);

/// [N,H,W,3] tensor with intensities mapped to (v - 128) / 128.
Tensor batch_tensor(const Dataset& data, const Batch& batch);
/// Whole dataset in order, no flips.
Tensor dataset_tensor(const Dataset& data, std::size_t begin, std::size_t end);

Dataset resize_dataset(const Dataset& data, std::size_t resolution);
Dataset preprocess_dataset(const Dataset& data, const PreprocessParams& params, std::size_t size);

std::vector<int> grades_of(const Dataset& data);

}  // namespace m2cnn
