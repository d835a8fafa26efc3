#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pharos/hashcore.hpp"
#include "pharos/semantics.hpp"

namespace testing {

inline std::vector<int> random_signs(std::mt19937_64& rng, int bits) {
  std::vector<int> s(static_cast<std::size_t>(bits));
  for (auto& v : s) v = (rng() & 1) ? 1 : -1;
  return s;
}

inline pharos::HashCode random_code(std::mt19937_64& rng, int bits) {
  const auto s = random_signs(rng, bits);
  return pharos::HashCode::from_signs(s);
}

inline pharos::LabelVector random_labels(std::mt19937_64& rng, int classes) {
  pharos::LabelVector y(classes);
  while (y.count() == 0)
    for (int c = 0; c < classes; ++c) y.set(c, rng() % 3 == 0);
  return y;
}

inline pharos::LabelVector labels_of(std::initializer_list<int> bits) {
  std::vector<std::uint8_t> b(bits.begin(), bits.end());
  return pharos::LabelVector::from_bits(b);
}

inline double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pharos_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
