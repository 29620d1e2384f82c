#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#ifndef STAGEVQA_TEST_DATA
#error "STAGEVQA_TEST_DATA must point at tests/data"
#endif

namespace testutil {

inline std::string data(const std::string& name) { return std::string(STAGEVQA_TEST_DATA) + "/" + name; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("stagevqa-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
