#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "tsm/instance.hpp"

namespace tsm::testing {

// The three-test desk instance used throughout the suites:
//   stmt coverage          fault detection
//   t1: s1                 t1: f4
//   t2: s2 s3              t2: f1 f2 f3
//   t3: s1 s3              t3: f1 f2 f3
inline TsmInstance desk_instance() {
  TsmInstance inst;
  inst.test_ids = {"t1", "t2", "t3"};
  inst.num_stmts = 3;
  inst.num_faults = 4;
  inst.stmt = {1, 0, 0,
               0, 1, 1,
               1, 0, 1};
  inst.fault = {0, 0, 0, 1,
                1, 1, 1, 0,
                1, 1, 1, 0};
  return inst;
}

// Frozen reference values for the desk instance, computed with an
// independent dense-SVD implementation (biadjacency W, u = P sqrt(S),
// cosine with absolute value).
inline constexpr double kDeskC12 = 0.061013089740519597;
inline constexpr double kDeskC13 = 0.20180098796454382;
inline constexpr double kDeskC23 = 0.51760953749051875;
inline constexpr double kDeskTripObjective = 2.0610130897405194;   // {t1,t2}
inline constexpr double kDeskBicriteriaObjective = 0.5;            // {t2,t3}
inline constexpr double kDeskSigma1 = 3.011865357439766;
inline constexpr double kDeskSigma2 = 1.5190959183416965;
inline constexpr double kDeskSigma3 = 0.7880448334529169;

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("tsm_test_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path.string();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace tsm::testing
