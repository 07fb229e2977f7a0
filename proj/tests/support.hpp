#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "strlab/error.hpp"
#include "strlab/ops.hpp"
#include "strlab/random.hpp"

namespace strlab::testing {

template <typename S = double>
Tensor<S> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

inline ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no strlab::Error thrown";
  return ErrorCode::Io;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("strlab_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace strlab::testing
