#pragma once

#include <sys/types.h>

#include <filesystem>

#include "ransim/bytes.hpp"

namespace ransim {

inline constexpr std::string_view kTempSuffix = ".ransim-tmp";

/// Temp-file-then-rename writer. Data goes to `<target>.ransim-tmp` in the
/// same directory; publish() makes it visible under `target` in one step.
/// An unpublished temp file is unlinked on destruction.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target, mode_t mode = 0644);
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile();

  void write(ByteView data);
  /// fsync + close of the temp file.
  void sync();
  /// Rename over `target` (or link without replacing when `no_replace`), then fsync the directory.
  void publish(bool no_replace = false);

  const std::filesystem::path& temp_path() const noexcept { return temp_; }
  const std::filesystem::path& target() const noexcept { return target_; }

 private:
  std::filesystem::path target_;
  std::filesystem::path temp_;
  int fd_ = -1;
  bool published_ = false;
};

/// Full protocol in one call. Throws Errc::io.
void write_file_atomic(const std::filesystem::path& target, ByteView data, mode_t mode = 0644);

/// Appends and fdatasyncs. The write is a single write(2) call per chunk.
void append_durable(const std::filesystem::path& target, ByteView data);

void fsync_directory(const std::filesystem::path& dir);

/// unlink(2) followed by a directory fsync. Throws Errc::io (ENOENT is not an error).
void remove_durable(const std::filesystem::path& path);

}  // namespace ransim
