#include "ransim/safety.hpp"

#include <limits.h>
#include <pwd.h>
#include <stdlib.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>

#include "ransim/atomic_file.hpp"
#include "ransim/error.hpp"
#include "ransim/manifest.hpp"

namespace fs = std::filesystem;

namespace ransim {

namespace {

constexpr std::array kRefusedRoots = {"/", "/bin", "/boot", "/dev", "/etc", "/home", "/lib",
                                      "/lib64", "/opt", "/proc", "/root", "/sbin", "/sys",
                                      "/usr", "/var"};

std::vector<fs::path> home_directories() {
  std::vector<fs::path> homes;
  std::error_code ec;
  if (const char* h = std::getenv("HOME"); h && *h) {
    auto c = fs::weakly_canonical(h, ec);
    if (!ec) homes.push_back(c);
  }
  if (const passwd* pw = ::getpwuid(::getuid()); pw && pw->pw_dir) {
    auto c = fs::weakly_canonical(pw->pw_dir, ec);
    if (!ec) homes.push_back(c);
  }
  return homes;
}

void refuse_dangerous_root(const fs::path& canonical) {
  for (const char* r : kRefusedRoots) {
    if (canonical == fs::path(r)) {
      throw Error(Errc::refused, "refusing to use " + canonical.string() + " as a sandbox");
    }
  }
  for (const auto& home : home_directories()) {
    if (canonical == home) {
      throw Error(Errc::refused, "refusing to use home directory " + canonical.string() + " as a sandbox");
    }
  }
}

bool is_sandbox_id(std::string_view s) {
  return s.size() == 32 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Strict descendant of `root`, compared component by component.
bool strictly_under(const fs::path& p, const fs::path& root) {
  auto pi = p.begin();
  for (auto ri = root.begin(); ri != root.end(); ++ri, ++pi) {
    if (ri->empty()) continue;  // trailing separator
    if (pi == p.end() || *pi != *ri) return false;
  }
  for (; pi != p.end(); ++pi) {
    if (!pi->empty()) return true;
  }
  return false;
}

}  // namespace

std::set<std::string> default_whitelist() { return {".txt", ".jpg", ".csv", ".doc"}; }

fs::path SandboxConfig::manifest_path() const { return root / kManifestFileName; }

fs::path SandboxConfig::events_path() const { return root / kEventsFileName; }

fs::path SandboxConfig::marker_path() const { return root / kMarkerFileName; }

std::string init_sandbox(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(Errc::io, "cannot create " + root.string() + ": " + ec.message());
  if (!fs::is_directory(root)) throw Error(Errc::usage, root.string() + " is not a directory");
  const auto canonical = fs::canonical(root);
  refuse_dangerous_root(canonical);
  const auto marker = canonical / kMarkerFileName;
  if (fs::exists(fs::symlink_status(marker))) return validate_sandbox(canonical).sandbox_id;
  std::array<std::uint8_t, 16> id{};
  secure_random(id);
  const std::string sandbox_id = to_hex(id);
  const std::string text = sandbox_id + "\nransim consent marker: files under this directory may be encrypted by the simulation.\n";
  AtomicFile f(marker, 0644);
  f.write(as_bytes(text));
  f.publish(/*no_replace=*/true);
  return sandbox_id;
}

SandboxConfig validate_sandbox(const fs::path& root_path) {
  std::error_code ec;
  const auto st = fs::status(root_path, ec);
  if (ec || !fs::exists(st)) throw Error(Errc::usage, "sandbox " + root_path.string() + " does not exist");
  if (!fs::is_directory(st)) throw Error(Errc::usage, "sandbox " + root_path.string() + " is not a directory");
  const auto canonical = fs::canonical(root_path, ec);
  if (ec) throw Error(Errc::usage, "cannot canonicalize " + root_path.string() + ": " + ec.message());
  refuse_dangerous_root(canonical);

  const auto marker = canonical / kMarkerFileName;
  if (!fs::is_regular_file(fs::symlink_status(marker))) {
    throw Error(Errc::consent, "no consent marker " + std::string(kMarkerFileName) + " in " +
                                   canonical.string() + "; run init-sandbox first");
  }
  std::ifstream in(marker);
  std::string first;
  std::getline(in, first);
  if (!is_sandbox_id(first)) {
    throw Error(Errc::consent, "consent marker " + marker.string() + " does not start with a sandbox id");
  }
  SandboxConfig cfg;
  cfg.root = canonical;
  cfg.sandbox_id = first;
  cfg.escrow_path = canonical / kEscrowFileName;
  return cfg;
}

bool check_path_confinement(const fs::path& path, const SandboxConfig& cfg) {
  const fs::path abs = path.is_absolute() ? path : cfg.root / path;
  const fs::path normal = abs.lexically_normal();
  if (!strictly_under(normal, cfg.root)) return false;

  // No symlink anywhere between the root and the leaf.
  fs::path walk = cfg.root;
  const auto rel = normal.lexically_relative(cfg.root);
  for (const auto& part : rel) {
    if (part.empty()) continue;
    walk /= part;
    struct stat st {};
    if (::lstat(walk.c_str(), &st) != 0) return false;
    if (S_ISLNK(st.st_mode)) return false;
  }

  // Kernel resolution of the original spelling must agree with the lexical one.
  char resolved[PATH_MAX];
  if (::realpath(abs.c_str(), resolved) == nullptr) return false;
  return fs::path(resolved) == normal;
}

bool is_reserved_name(std::string_view filename) {
  return filename == kMarkerFileName || filename == kManifestFileName ||
         filename == kEscrowFileName || filename == kEventsFileName || filename.ends_with(kTempSuffix);
}

bool is_target(const fs::path& path, const SandboxConfig& cfg) {
  const std::string name = path.filename().string();
  if (name.empty() || is_reserved_name(name)) return false;
  if (lower(name).ends_with(kLockSuffix)) return false;
  const std::string ext = lower(path.extension().string());
  return !ext.empty() && cfg.whitelist.contains(ext);
}

fs::path escrow_private_key(const KeyPair& kp, const SandboxConfig& cfg) {
  if (!kp.has_private()) throw Error(Errc::usage, "escrow requires the private half");
  const fs::path target = cfg.escrow_path.empty() ? cfg.root / kEscrowFileName : cfg.escrow_path;
  if (!check_path_confinement(target.parent_path(), cfg) && fs::path(target.parent_path()) != cfg.root) {
    throw Error(Errc::refused, "escrow path " + target.string() + " is outside the sandbox");
  }
  struct stat st {};
  if (::lstat(target.c_str(), &st) == 0) {
    throw Error(Errc::escrow_exists, "escrow key already present at " + target.string());
  }
  std::string pem = serialize_private_key(kp);
  AtomicFile f(target, 0600);
  f.write(as_bytes(pem));
  std::fill(pem.begin(), pem.end(), '\0');
  f.publish(/*no_replace=*/true);
  return target;
}

CapDecision enforce_caps(const RunningTotals& totals, const SandboxConfig& cfg) {
  if (totals.files > cfg.max_files || totals.bytes > cfg.max_total_bytes) return CapDecision::halt;
  return CapDecision::proceed;
}

}  // namespace ransim
