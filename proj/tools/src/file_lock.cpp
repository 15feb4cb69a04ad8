#include "bkf/cli/file_lock.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "bkf/error.hpp"

namespace bkf::cli {

OutputLock::OutputLock(const std::filesystem::path& path) : lock_path_(path.string() + ".lock") {
  fd_ = ::open(lock_path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot create lock '" + lock_path_.string() + "': " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("output '" + path.string() + "' is locked by another process");
  }
}

OutputLock::~OutputLock() {
  if (fd_ < 0) return;
  std::error_code ec;
  std::filesystem::remove(lock_path_, ec);
  ::flock(fd_, LOCK_UN);
  ::close(fd_);
}

}  // namespace bkf::cli
