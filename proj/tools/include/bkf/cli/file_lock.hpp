#pragma once

#include <filesystem>

namespace bkf::cli {

/// Exclusive advisory lock on `<path>.lock`, held for the object's lifetime.
/// Throws IoError when another process holds it.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& path);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path lock_path_;
  int fd_ = -1;
};

}  // namespace bkf::cli
