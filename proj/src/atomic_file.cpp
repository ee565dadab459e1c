#include "ransim/atomic_file.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>

#include "ransim/error.hpp"
#include "ransim/fault.hpp"

namespace ransim {

namespace {

[[noreturn]] void io_fail(const std::string& what, const std::filesystem::path& p, int err) {
  throw Error(Errc::io, what + " " + p.string() + ": " + std::strerror(err));
}

void write_all(int fd, ByteView data, const std::filesystem::path& p) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("write failed on", p, errno);
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

AtomicFile::AtomicFile(std::filesystem::path target, mode_t mode)
    : target_(std::move(target)), temp_(target_.string() + std::string(kTempSuffix)) {
  fd_ = ::open(temp_.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_NOFOLLOW | O_CLOEXEC, mode);
  if (fd_ < 0) io_fail("cannot create", temp_, errno);
}

AtomicFile::~AtomicFile() {
  if (fd_ >= 0) ::close(fd_);
  if (!published_) ::unlink(temp_.c_str());
}

void AtomicFile::write(ByteView data) {
  if (fd_ < 0) throw Error(Errc::usage, "AtomicFile already synced");
  write_all(fd_, data, temp_);
}

void AtomicFile::sync() {
  if (fd_ < 0) return;
  if (::fsync(fd_) != 0) io_fail("fsync failed on", temp_, errno);
  const int rc = ::close(fd_);
  fd_ = -1;
  if (rc != 0) io_fail("close failed on", temp_, errno);
}

void AtomicFile::publish(bool no_replace) {
  sync();
  if (no_replace) {
    if (::link(temp_.c_str(), target_.c_str()) != 0) io_fail("cannot create", target_, errno);
    ::unlink(temp_.c_str());
  } else if (::rename(temp_.c_str(), target_.c_str()) != 0) {
    io_fail("cannot rename onto", target_, errno);
  }
  published_ = true;
  fsync_directory(target_.parent_path());
}

void write_file_atomic(const std::filesystem::path& target, ByteView data, mode_t mode) {
  AtomicFile f(target, mode);
  f.write(data);
  f.sync();
  RANSIM_FAULT_POINT("atomic.temp_written");
  f.publish();
}

void append_durable(const std::filesystem::path& target, ByteView data) {
  const int fd = ::open(target.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_NOFOLLOW | O_CLOEXEC, 0644);
  if (fd < 0) io_fail("cannot open", target, errno);
  try {
    write_all(fd, data, target);
    if (::fdatasync(fd) != 0) io_fail("fdatasync failed on", target, errno);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

void fsync_directory(const std::filesystem::path& dir) {
  const auto d = dir.empty() ? std::filesystem::path(".") : dir;
  const int fd = ::open(d.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) io_fail("cannot open directory", d, errno);
  ::fsync(fd);
  ::close(fd);
}

void remove_durable(const std::filesystem::path& path) {
  if (::unlink(path.c_str()) != 0) {
    if (errno == ENOENT) return;
    io_fail("cannot remove", path, errno);
  }
  fsync_directory(path.parent_path());
}

}  // namespace ransim
