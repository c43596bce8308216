#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <unistd.h>

#include "genbench/tasks.hpp"

namespace testing {

inline genbench::SpaceParams cardinality(int n, int k) {
  return {genbench::SpaceKind::cardinality, n, k, genbench::Parity::even, 0, 0};
}

inline genbench::SpaceParams parity(int n, genbench::Parity p) {
  return {genbench::SpaceKind::parity, n, 0, p, 0, 0};
}

inline genbench::SpaceParams bas(int rows, int cols) {
  return {genbench::SpaceKind::bars_and_stripes, rows * cols, 0, genbench::Parity::even, rows, cols};
}

/// Unweighted training set with epsilon = T / |S|.
template <typename Range>
genbench::TrainingSet make_train(const genbench::SolutionSpace& space, const Range& bits) {
  genbench::SampleMultiset s(space.width());
  for (auto x : bits) s.add(genbench::Bitstring(space.width(), static_cast<std::uint32_t>(x)));
  const double eps = static_cast<double>(s.unique_size()) / static_cast<double>(space.size());
  return genbench::TrainingSet{s, eps, std::nullopt, space};
}

inline genbench::TrainingSet make_train(const genbench::SolutionSpace& space,
                                        std::initializer_list<std::uint32_t> bits) {
  return make_train<std::initializer_list<std::uint32_t>>(space, bits);
}

/// Fresh per-process scratch directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("genbench_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
