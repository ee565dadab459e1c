#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ransim/crypto.hpp"
#include "ransim/manifest.hpp"
#include "ransim/safety.hpp"
#include "ransim/telemetry.hpp"

namespace ransim {

struct FileFailure {
  std::string relative_path;
  std::string error;

  friend bool operator==(const FileFailure&, const FileFailure&) = default;
};

struct EncryptReport {
  std::uint64_t files_scanned = 0;
  std::uint64_t files_encrypted = 0;
  std::uint64_t files_skipped = 0;
  std::uint64_t bytes_processed = 0;
  double duration = 0;  // seconds
  std::vector<FileFailure> failures;
  bool cap_halted = false;
};

struct DecryptReport {
  std::uint64_t files_restored = 0;
  std::uint64_t checksum_matches = 0;
  std::uint64_t bytes_restored = 0;
  std::vector<FileFailure> failures;
  double duration = 0;
};

struct VerifyReport {
  bool manifest_present = false;
  std::uint64_t entries = 0;
  std::uint64_t entries_verified = 0;
  std::uint64_t residual_tokens = 0;  // .locked files on disk
  std::uint64_t stray_temp_files = 0;
  std::vector<FileFailure> failures;

  /// Locked corpus: every entry verified and nothing else wrong.
  /// Unlocked corpus: no tokens, no manifest, no temp files.
  bool ok() const;
};

enum class ExecutionMode {
  serial,    // one file at a time, end to end
  parallel,  // OpenMP-parallel read/crypto/temp-write, ordered serial commit
};

struct EngineOptions {
  ExecutionMode mode = ExecutionMode::parallel;
  int threads = 0;  // 0: OpenMP default
  std::size_t flush_every = 100;
  /// Plaintext bytes buffered per parallel batch (at least one file).
  std::uint64_t batch_bytes = 256ull << 20;
  /// Called after each committed file with (done, total).
  std::function<void(std::uint64_t, std::uint64_t)> on_progress;
};

/// Sandbox-relative, '/'-separated spelling of `path`.
std::string relative_to_root(const std::filesystem::path& path, const SandboxConfig& cfg);

/// Encrypt and decrypt runs hold an exclusive flock on the consent marker;
/// a second concurrent run fails with Errc::refused.

/// Depth-first, lexicographic walk of cfg.root. Encrypts every confined,
/// whitelisted, unlocked regular file; appends to `manifest` in traversal
/// order. Requires the escrowed key at cfg.escrow_path to match `recipient`.
EncryptReport recursive_encrypt(const SandboxConfig& cfg, const KeyPair& recipient, Manifest& manifest,
                                EventLog& log, const EngineOptions& options = {});

/// Replaces `path` by `<path>.locked`. `before_publish` runs once the token is
/// durable in its temp file but before it is renamed into place; the
/// original is deleted only after the rename.
ManifestEntry encrypt_file(const std::filesystem::path& path, const KeyPair& recipient,
                           const SandboxConfig& cfg,
                           const std::function<void(const ManifestEntry&)>& before_publish = {});

/// Errc::key_missing (nothing touched) if `private_key_path` does not exist.
DecryptReport decrypt_all(const SandboxConfig& cfg, const std::filesystem::path& private_key_path,
                          Manifest& manifest, EventLog& log, const EngineOptions& options = {});

/// Errc::wrong_key (nothing touched) if the first entry does not unwrap.
DecryptReport decrypt_all(const SandboxConfig& cfg, const KeyPair& private_key, Manifest& manifest,
                          EventLog& log, const EngineOptions& options = {});

/// Trial-unwraps the first entry. Throws Errc::wrong_key on failure.
void check_key_matches(const KeyPair& private_key, const Manifest& manifest);

/// True while another process (or another open of the marker) holds the run lock.
bool run_in_progress(const SandboxConfig& cfg);

/// Report-only. `manifest` may be null (unlocked corpus).
VerifyReport verify_corpus(const SandboxConfig& cfg, const Manifest* manifest);

}  // namespace ransim
