#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>

#include "ransim/crypto.hpp"

namespace ransim {

inline constexpr std::string_view kMarkerFileName = ".ransim-sandbox";
inline constexpr std::string_view kEscrowFileName = "key.pem";
inline constexpr std::string_view kEventsFileName = "events.jsonl";
inline constexpr std::string_view kLockSuffix = ".locked";

inline constexpr std::uint64_t kDefaultMaxFiles = 10'000;
inline constexpr std::uint64_t kDefaultMaxTotalBytes = 2ull << 30;
inline constexpr std::uint64_t kMaxFileBytes = 256ull << 20;

std::set<std::string> default_whitelist();

struct SandboxConfig {
  std::filesystem::path root;  // canonical
  std::string sandbox_id;      // from the marker file
  std::set<std::string> whitelist = default_whitelist();  // lowercase, with leading dot
  std::uint64_t max_files = kDefaultMaxFiles;
  std::uint64_t max_total_bytes = kDefaultMaxTotalBytes;
  std::uint64_t max_file_bytes = kMaxFileBytes;
  std::filesystem::path escrow_path;  // defaults to root/key.pem

  std::filesystem::path manifest_path() const;
  std::filesystem::path events_path() const;
  std::filesystem::path marker_path() const;
};

/// Creates `root` (if needed) and its consent marker. Returns the sandbox id;
/// an existing marker is kept. Refuses the filesystem root and home directories.
std::string init_sandbox(const std::filesystem::path& root);

/// Canonicalizes `root_path` and checks the consent marker.
/// Errc::usage for a non-directory, Errc::refused for root/home, Errc::consent for a missing marker.
SandboxConfig validate_sandbox(const std::filesystem::path& root_path);

/// True iff `path` resolves strictly inside cfg.root without traversing a symlink.
/// Relative paths are taken relative to cfg.root. Nonexistent paths are not confined.
bool check_path_confinement(const std::filesystem::path& path, const SandboxConfig& cfg);

/// Marker, manifest, escrow key, event log and temp files. Never encrypted.
bool is_reserved_name(std::string_view filename);

/// Whitelisted final extension (case-insensitive), not already locked, not reserved.
bool is_target(const std::filesystem::path& path, const SandboxConfig& cfg);

/// Writes the private key to cfg.escrow_path without replacing an existing file.
/// Errc::escrow_exists if present; Errc::io on write failure.
std::filesystem::path escrow_private_key(const KeyPair& kp, const SandboxConfig& cfg);

struct RunningTotals {
  std::uint64_t files = 0;
  std::uint64_t bytes = 0;
};

enum class CapDecision { proceed, halt };

CapDecision enforce_caps(const RunningTotals& totals, const SandboxConfig& cfg);

}  // namespace ransim
