#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ransim/crypto.hpp"

namespace ransim {

inline constexpr std::string_view kManifestFileName = "keys.dat";
inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
  std::string relative_path;  // '/'-separated, ends with the lock suffix
  WrappedKey wrapped_key;
  std::uint64_t original_size = 0;
  std::string plaintext_checksum;  // lowercase SHA-256 hex
  std::int64_t encrypted_at = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// True for a non-empty relative path with no root, no "." or ".." and no empty components.
bool is_clean_relative_path(std::string_view path);

/// Throws Errc::parse if `e` breaks a type invariant.
void validate_entry(const ManifestEntry& e);

/// Ordered, path-unique list of encrypted files and their wrapped keys.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::string sandbox_id);

  int version() const noexcept { return kManifestVersion; }
  const std::string& sandbox_id() const noexcept { return sandbox_id_; }
  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Appends `e`. Throws Errc::duplicate_entry (manifest unchanged) if the path is already recorded.
  void record(ManifestEntry e);
  /// nullptr when absent.
  const ManifestEntry* lookup(std::string_view relative_path) const;
  bool contains(std::string_view relative_path) const { return lookup(relative_path) != nullptr; }
  /// Removes the named entries, preserving the order of the rest.
  void remove(const std::unordered_set<std::string>& relative_paths);

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.sandbox_id_ == b.sandbox_id_ && a.entries_ == b.entries_;
  }

 private:
  std::string sandbox_id_;
  std::vector<ManifestEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string serialize_header(const Manifest& m);
std::string serialize_entry(const ManifestEntry& e);
std::string serialize_manifest(const Manifest& m);

/// An unterminated final line is treated as a torn append and dropped
/// (reported through `warning` when non-null). Any other bad line throws
/// Errc::parse naming the 1-based line number; unknown version throws Errc::version.
Manifest parse_manifest(std::string_view text, std::string* warning = nullptr);

/// Atomic replace. Refuses (Errc::sandbox_mismatch) to overwrite a manifest of another sandbox.
void write_manifest(const Manifest& m, const std::filesystem::path& path);
/// Errc::not_found when missing.
Manifest load_manifest(const std::filesystem::path& path, std::string* warning = nullptr);
/// Durably appends one entry line to an existing manifest file.
void append_manifest_entry(const std::filesystem::path& path, const ManifestEntry& e);

}  // namespace ransim
