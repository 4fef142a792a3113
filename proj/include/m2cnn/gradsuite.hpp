#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace m2cnn {

/// One randomly shaped graph compared against central differences.
struct GradCase {
  std::string family;
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
};

/// Number of graph families; case i uses family i % count.
std::size_t gradient_family_count();

/// Builds a small random graph (shapes, values, labels drawn from seed) and
/// checks every input element.
GradCase run_gradient_case(std::size_t family, std::uint64_t seed, double h = 1e-5);

std::vector<GradCase> gradient_suite(std::size_t count, std::uint64_t seed, double h = 1e-5);

}  // namespace m2cnn
