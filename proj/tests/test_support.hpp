// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "lrf/error.hpp"

namespace testing_support {

/// Code of the lrf::Error thrown by f; records a failure if nothing is thrown.
template <class F> lrf::ErrorCode error_of(F &&f) {
  try {
    f();
  } catch (const lrf::Error &e) {
    return e.code();
  }
  ADD_FAILURE() << "no lrf::Error thrown";
  return lrf::ErrorCode::kConfigError;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lrf_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;
  const std::filesystem::path &path() const { return path_; }

private:
  std::filesystem::path path_;
};

} // namespace testing_support
