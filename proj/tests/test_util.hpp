#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lssbm/common.hpp"

namespace test {

/// Running mean and variance (Welford).
struct Moments {
  long long n = 0;
  double m = 0.0;
  double s = 0.0;

  void add(double x) {
    ++n;
    const double d = x - m;
    m += d / static_cast<double>(n);
    s += d * (x - m);
  }
  double mean() const { return m; }
  double variance() const { return n > 1 ? s / static_cast<double>(n - 1) : 0.0; }
  double se() const { return std::sqrt(variance() / static_cast<double>(n)); }
  bool mean_within(double target, double n_se) const { return std::abs(m - target) <= n_se * se(); }
};

/// Redirects warnings into a list for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  std::function<void(std::string_view)> saved;
  WarningCapture() : saved(lssbm::warning_sink()) {
    lssbm::warning_sink() = [this](std::string_view m) { messages.emplace_back(m); };
  }
  ~WarningCapture() { lssbm::warning_sink() = saved; }
  bool contains(std::string_view needle) const {
    for (const auto& m : messages)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }
};

/// Fresh scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("lssbm_test_" + name);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace test
