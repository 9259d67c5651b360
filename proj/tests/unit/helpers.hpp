#pragma once

#include <atomic>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "hawk/simulate.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hawk_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

/// Textbook O(N) single-bin DFT with std::complex, as an independent oracle.
inline std::complex<double> naive_dft_bin(std::span<const double> x, int k) {
  std::complex<double> acc{0.0, 0.0};
  const double n = static_cast<double>(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    acc += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * k * static_cast<double>(j) / n);
  }
  return acc;
}

inline std::vector<double> sine(int n, double amplitude, double cycles, double phase = 0.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) v[j] = amplitude * std::sin(2.0 * std::numbers::pi * cycles * j / n + phase);
  return v;
}

/// Single-harmonic appliance with no jitter, transient or leakage.
inline hawk::sim::ApplianceSpec plain_appliance(int id, double power_w, const hawk::sim::GridSpec& grid = {},
                                                int transient = 0) {
  hawk::sim::ApplianceSpec s;
  s.id = id;
  s.name = "load" + std::to_string(id);
  s.rated_power_w = power_w;
  s.harmonics = hawk::sim::harmonics_for_power(power_w, grid.voltage_rms_v, 0.0, {});
  s.power_jitter_rel = 0.0;
  s.transient_cycles = transient;
  s.transient_shape = hawk::sim::TransientShape::Ramp;
  s.transient_noise_rel = 0.0;
  return s;
}

}  // namespace testutil
