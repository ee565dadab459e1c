#include "ransim/engine.hpp"

#include <fcntl.h>
#include <omp.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <memory>
#include <unordered_set>

#include "ransim/atomic_file.hpp"
#include "ransim/error.hpp"
#include "ransim/fault.hpp"

namespace fs = std::filesystem;

namespace ransim {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string describe(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return std::string(to_string(err->code())) + ": " + err->what();
  }
  return e.what();
}

int thread_count(const EngineOptions& opt) {
  if (opt.mode == ExecutionMode::serial) return 1;
  return opt.threads > 0 ? opt.threads : omp_get_max_threads();
}

// Exclusive advisory lock on the consent marker for the length of a run.
class RunLock {
 public:
  explicit RunLock(const SandboxConfig& cfg) {
    fd_ = ::open(cfg.marker_path().c_str(), O_RDONLY | O_NOFOLLOW | O_CLOEXEC);
    if (fd_ < 0) throw Error(Errc::consent, "cannot open consent marker " + cfg.marker_path().string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error(Errc::refused, "another encrypt or decrypt run is active in " + cfg.root.string());
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() { ::close(fd_); }

 private:
  int fd_ = -1;
};

// Items in traversal order: either a file to encrypt or a skip to report.
struct WalkItem {
  fs::path path;
  std::string rel;
  std::uint64_t size = 0;
  bool target = false;
  std::string skip_reason;  // non-empty for skipped files
  std::string failure;      // non-empty for files that cannot be handled
};

struct Walk {
  std::vector<WalkItem> items;
  std::uint64_t scanned = 0;
};

void walk_directory(const fs::path& dir, const SandboxConfig& cfg, const Manifest& manifest,
                    Walk& out) {
  const bool at_root = dir == cfg.root;
  std::vector<std::string> names;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    names.push_back(it->path().filename().string());
  }
  if (ec) {
    WalkItem item;
    item.path = dir;
    item.rel = relative_to_root(dir, cfg);
    item.failure = "cannot list directory: " + ec.message();
    out.items.push_back(std::move(item));
    return;
  }
  std::sort(names.begin(), names.end());

  for (const auto& name : names) {
    if (name.ends_with(kTempSuffix)) continue;
    if (at_root && is_reserved_name(name)) continue;
    const fs::path p = dir / name;
    struct stat st {};
    if (::lstat(p.c_str(), &st) != 0) continue;  // vanished
    if (S_ISDIR(st.st_mode)) {
      walk_directory(p, cfg, manifest, out);
      continue;
    }
    ++out.scanned;
    WalkItem item;
    item.path = p;
    item.rel = relative_to_root(p, cfg);
    item.size = static_cast<std::uint64_t>(st.st_size);
    if (S_ISLNK(st.st_mode)) {
      item.skip_reason = "symlink";
    } else if (!S_ISREG(st.st_mode)) {
      item.skip_reason = "not a regular file";
    } else if (!is_target(p, cfg)) {
      item.skip_reason = "not a target";
    } else if (!check_path_confinement(p, cfg)) {
      item.skip_reason = "not confined";
    } else if (item.size > cfg.max_file_bytes) {
      item.skip_reason = "exceeds per-file size cap";
    } else {
      const std::string locked_rel = item.rel + std::string(kLockSuffix);
      struct stat lst {};
      if (::lstat((p.string() + std::string(kLockSuffix)).c_str(), &lst) == 0) {
        if (manifest.contains(locked_rel)) {
          item.skip_reason = "already locked";
        } else {
          item.failure = "lock target " + locked_rel + " already exists";
        }
      } else {
        item.target = true;
      }
    }
    out.items.push_back(std::move(item));
  }
}

// ---- encryption protocol ---------------------------------------------------

struct PreparedEncrypt {
  ManifestEntry entry;
  std::unique_ptr<AtomicFile> temp;
  std::string error;
};

PreparedEncrypt prepare_encrypt(const fs::path& path, const std::string& rel, const KeyPair& recipient,
                                const SandboxConfig& cfg) {
  PreparedEncrypt out;
  Bytes plain = read_file(path);
  if (plain.size() > cfg.max_file_bytes) {
    throw Error(Errc::cap_exceeded, rel + " exceeds the per-file size cap");
  }
  out.entry.relative_path = rel + std::string(kLockSuffix);
  out.entry.original_size = plain.size();
  out.entry.plaintext_checksum = sha256_hex(plain);
  out.entry.encrypted_at = unix_now();
  {
    FileKey key = generate_file_key();
    const SealedToken token = seal(key, plain, static_cast<std::uint64_t>(out.entry.encrypted_at));
    out.entry.wrapped_key = wrap_key(recipient, key);
    key.wipe();
    out.temp = std::make_unique<AtomicFile>(fs::path(path.string() + std::string(kLockSuffix)), 0644);
    out.temp->write(token.raw);
    out.temp->sync();
  }
  return out;
}

void commit_encrypt(PreparedEncrypt& prepared, const fs::path& source,
                    const std::function<void(const ManifestEntry&)>& before_publish) {
  RANSIM_FAULT_POINT("encrypt.temp_written");
  if (before_publish) before_publish(prepared.entry);
  RANSIM_FAULT_POINT("encrypt.journaled");
  prepared.temp->publish(/*no_replace=*/true);
  RANSIM_FAULT_POINT("encrypt.renamed");
  remove_durable(source);
  prepared.temp.reset();
}

// Journal failures halt the run instead of being recorded per file.
struct JournalFailure : Error {
  using Error::Error;
};

// ---- decryption protocol ---------------------------------------------------

struct PreparedRestore {
  fs::path token_path;
  fs::path original_path;
  std::unique_ptr<AtomicFile> temp;
  bool already_intact = false;
  std::uint64_t bytes = 0;
};

bool inside_sandbox_dir(const fs::path& dir, const SandboxConfig& cfg) {
  return dir == cfg.root || check_path_confinement(dir, cfg);
}

PreparedRestore prepare_restore(const ManifestEntry& entry, const KeyPair& key, const SandboxConfig& cfg) {
  if (!is_clean_relative_path(entry.relative_path) || !entry.relative_path.ends_with(kLockSuffix)) {
    throw Error(Errc::refused, "manifest path is not a sandbox-relative token name");
  }
  PreparedRestore out;
  out.token_path = cfg.root / fs::path(entry.relative_path);
  const std::string token_str = out.token_path.string();
  out.original_path = fs::path(token_str.substr(0, token_str.size() - kLockSuffix.size()));
  if (!inside_sandbox_dir(out.token_path.parent_path(), cfg)) {
    throw Error(Errc::refused, "token directory is outside the sandbox");
  }

  struct stat st {};
  if (::lstat(out.token_path.c_str(), &st) != 0) {
    // Crash after journaling but before publishing the token: the original is still in place.
    struct stat ost {};
    if (::lstat(out.original_path.c_str(), &ost) == 0 && S_ISREG(ost.st_mode) &&
        sha256_hex(read_file(out.original_path)) == entry.plaintext_checksum) {
      out.already_intact = true;
      out.bytes = entry.original_size;
      return out;
    }
    throw Error(Errc::not_found, "token file missing");
  }
  if (!S_ISREG(st.st_mode) || !check_path_confinement(out.token_path, cfg)) {
    throw Error(Errc::refused, "token is not a confined regular file");
  }
  const Bytes token = read_file(out.token_path);
  FileKey file_key = unwrap_key(key, entry.wrapped_key);
  const Bytes plain = open(file_key, token);
  file_key.wipe();
  if (plain.size() != entry.original_size || sha256_hex(plain) != entry.plaintext_checksum) {
    throw Error(Errc::auth, "restored content does not match the recorded checksum");
  }
  out.bytes = plain.size();
  out.temp = std::make_unique<AtomicFile>(out.original_path, 0644);
  out.temp->write(plain);
  out.temp->sync();
  return out;
}

void commit_restore(PreparedRestore& r) {
  if (r.already_intact) {
    remove_durable(fs::path(r.token_path.string() + std::string(kTempSuffix)));
    return;
  }
  r.temp->publish();
  RANSIM_FAULT_POINT("decrypt.restored");
  remove_durable(r.token_path);
  r.temp.reset();
}

void remove_stale_temps(const fs::path& dir, const SandboxConfig& cfg) {
  std::error_code ec;
  std::vector<fs::path> doomed;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    const fs::path p = it->path();
    struct stat st {};
    if (::lstat(p.c_str(), &st) != 0 || S_ISLNK(st.st_mode)) continue;
    if (S_ISDIR(st.st_mode)) {
      remove_stale_temps(p, cfg);
    } else if (S_ISREG(st.st_mode) && p.filename().string().ends_with(kTempSuffix) &&
               check_path_confinement(p, cfg)) {
      doomed.push_back(p);
    }
  }
  for (const auto& p : doomed) {
    try {
      remove_durable(p);
    } catch (const Error&) {
    }
  }
}

void count_disk_state(const fs::path& dir, VerifyReport& report, const SandboxConfig& cfg,
                      const Manifest* manifest) {
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    const fs::path p = it->path();
    struct stat st {};
    if (::lstat(p.c_str(), &st) != 0 || S_ISLNK(st.st_mode)) continue;
    if (S_ISDIR(st.st_mode)) {
      count_disk_state(p, report, cfg, manifest);
      continue;
    }
    const std::string name = p.filename().string();
    if (name.ends_with(kTempSuffix)) {
      ++report.stray_temp_files;
    } else if (name.ends_with(kLockSuffix)) {
      ++report.residual_tokens;
      const auto rel = relative_to_root(p, cfg);
      if (manifest && !manifest->contains(rel)) report.failures.push_back({rel, "token not in manifest"});
    }
  }
}

}  // namespace

bool VerifyReport::ok() const {
  if (manifest_present) return failures.empty() && entries_verified == entries && stray_temp_files == 0;
  return failures.empty() && residual_tokens == 0 && stray_temp_files == 0;
}

std::string relative_to_root(const fs::path& path, const SandboxConfig& cfg) {
  return path.lexically_relative(cfg.root).generic_string();
}

ManifestEntry encrypt_file(const fs::path& path, const KeyPair& recipient, const SandboxConfig& cfg,
                           const std::function<void(const ManifestEntry&)>& before_publish) {
  struct stat st {};
  if (::lstat(path.c_str(), &st) != 0) throw Error(Errc::not_found, path.string() + " does not exist");
  if (!check_path_confinement(path, cfg)) {
    throw Error(Errc::refused, path.string() + " is outside the sandbox or reached through a symlink");
  }
  if (!S_ISREG(st.st_mode)) throw Error(Errc::usage, path.string() + " is not a regular file");
  if (!is_target(path, cfg)) throw Error(Errc::refused, path.string() + " is not a whitelisted target");
  if (static_cast<std::uint64_t>(st.st_size) > cfg.max_file_bytes) {
    throw Error(Errc::cap_exceeded, path.string() + " exceeds the per-file size cap");
  }
  auto prepared = prepare_encrypt(path, relative_to_root(path, cfg), recipient, cfg);
  commit_encrypt(prepared, path, before_publish);
  return std::move(prepared.entry);
}

EncryptReport recursive_encrypt(const SandboxConfig& cfg, const KeyPair& recipient, Manifest& manifest,
                                EventLog& log, const EngineOptions& options) {
  const auto start = Clock::now();
  EncryptReport report;
  const RunLock run_lock(cfg);

  // Hard gate: the matching private key must already be escrowed.
  {
    struct stat st {};
    if (::lstat(cfg.escrow_path.c_str(), &st) != 0) {
      throw Error(Errc::key_missing, "no escrowed key at " + cfg.escrow_path.string() + "; refusing to encrypt");
    }
    if (!load_private_key(cfg.escrow_path).same_public(recipient)) {
      throw Error(Errc::wrong_key, "escrowed key does not match the encryption key; refusing to encrypt");
    }
  }
  if (manifest.sandbox_id().empty()) {
    Manifest fresh(cfg.sandbox_id);
    for (const auto& e : manifest.entries()) fresh.record(e);
    manifest = std::move(fresh);
  } else if (manifest.sandbox_id() != cfg.sandbox_id) {
    throw Error(Errc::sandbox_mismatch, "manifest belongs to sandbox " + manifest.sandbox_id());
  }

  const fs::path manifest_path = cfg.manifest_path();
  log.emit(EventKind::run_started, std::nullopt, std::nullopt,
           options.mode == ExecutionMode::serial ? "encrypt serial" : "encrypt parallel");
  write_manifest(manifest, manifest_path);

  Walk walk;
  walk_directory(cfg.root, cfg, manifest, walk);
  report.files_scanned = walk.scanned;

  // Admit targets in order until a cap would be breached.
  std::size_t admitted = walk.items.size();
  {
    RunningTotals totals;
    for (std::size_t i = 0; i < walk.items.size(); ++i) {
      if (!walk.items[i].target) continue;
      RunningTotals next{totals.files + 1, totals.bytes + walk.items[i].size};
      if (enforce_caps(next, cfg) == CapDecision::halt) {
        admitted = i;
        break;
      }
      totals = next;
    }
  }
  std::uint64_t total_targets = 0;
  for (std::size_t i = 0; i < admitted; ++i) total_targets += walk.items[i].target;

  std::size_t since_flush = 0;
  auto flush = [&] {
    try {
      write_manifest(manifest, manifest_path);
    } catch (const Error& ex) {
      throw JournalFailure(Errc::io, std::string("manifest write failed: ") + ex.what());
    }
    log.emit(EventKind::manifest_flushed, std::nullopt, manifest.size());
    since_flush = 0;
  };
  auto journal = [&](const ManifestEntry& e) {
    try {
      append_manifest_entry(manifest_path, e);
    } catch (const Error& ex) {
      throw JournalFailure(Errc::io, std::string("manifest write failed: ") + ex.what());
    }
  };

  const int threads = thread_count(options);
  std::uint64_t done = 0;
  try {
    std::size_t i = 0;
    while (i < admitted) {
      // Batch boundaries: bounded plaintext bytes, always at least one item.
      std::size_t end = i;
      std::uint64_t batch_bytes = 0;
      while (end < admitted && (end == i || threads > 1)) {
        const auto& it = walk.items[end];
        if (it.target && end > i && batch_bytes + it.size > options.batch_bytes) break;
        if (it.target) batch_bytes += it.size;
        ++end;
      }

      std::vector<PreparedEncrypt> prepared(end - i);
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(end - i); ++k) {
        const auto& item = walk.items[i + static_cast<std::size_t>(k)];
        if (!item.target) continue;
        try {
          prepared[k] = prepare_encrypt(item.path, item.rel, recipient, cfg);
        } catch (const std::exception& e) {
          prepared[k].temp.reset();
          prepared[k].error = describe(e);
        }
      }

      for (std::size_t k = 0; k < prepared.size(); ++k) {
        const auto& item = walk.items[i + k];
        if (!item.failure.empty()) {
          report.failures.push_back({item.rel, item.failure});
          continue;
        }
        if (!item.target) {
          ++report.files_skipped;
          log.emit(EventKind::file_skipped, item.rel, item.size, item.skip_reason);
          continue;
        }
        auto& p = prepared[k];
        if (!p.error.empty()) {
          report.failures.push_back({item.rel, p.error});
          continue;
        }
        try {
          commit_encrypt(p, item.path, journal);
        } catch (const fault::SimulatedCrash&) {
          throw;
        } catch (const JournalFailure&) {
          throw;
        } catch (const std::exception& e) {
          report.failures.push_back({item.rel, describe(e)});
          continue;
        }
        manifest.record(p.entry);
        ++report.files_encrypted;
        report.bytes_processed += p.entry.original_size;
        log.emit(EventKind::file_encrypted, p.entry.relative_path, p.entry.original_size);
        ++done;
        if (options.on_progress) options.on_progress(done, total_targets);
        if (++since_flush >= options.flush_every) flush();
      }
      i = end;
    }

    if (admitted < walk.items.size()) {
      report.cap_halted = true;
      log.emit(EventKind::cap_halt, walk.items[admitted].rel, walk.items[admitted].size,
               "cap reached: max_files=" + std::to_string(cfg.max_files) +
                   " max_total_bytes=" + std::to_string(cfg.max_total_bytes));
    }
    flush();
  } catch (const JournalFailure& e) {
    report.duration = seconds_since(start);
    log.emit(EventKind::run_finished, std::nullopt, report.bytes_processed,
             std::string("halted: ") + e.what());
    throw Error(Errc::io, e.what());
  }

  report.duration = seconds_since(start);
  log.emit(EventKind::run_finished, std::nullopt, report.bytes_processed,
           "encrypted=" + std::to_string(report.files_encrypted) +
               " skipped=" + std::to_string(report.files_skipped) +
               " failed=" + std::to_string(report.failures.size()) +
               (report.cap_halted ? " cap_halt" : ""));
  return report;
}

void check_key_matches(const KeyPair& private_key, const Manifest& manifest) {
  if (manifest.empty()) return;
  try {
    FileKey k = unwrap_key(private_key, manifest.entries().front().wrapped_key);
    k.wipe();
  } catch (const Error& e) {
    if (e.code() == Errc::usage) throw;
    throw Error(Errc::wrong_key, "wrong key: the private key does not unwrap this sandbox's keys");
  }
}

DecryptReport decrypt_all(const SandboxConfig& cfg, const fs::path& private_key_path, Manifest& manifest,
                          EventLog& log, const EngineOptions& options) {
  struct stat st {};
  if (::stat(private_key_path.c_str(), &st) != 0) {
    throw Error(Errc::key_missing, "key not found: " + private_key_path.string());
  }
  const KeyPair key = load_private_key(private_key_path);
  return decrypt_all(cfg, key, manifest, log, options);
}

DecryptReport decrypt_all(const SandboxConfig& cfg, const KeyPair& private_key, Manifest& manifest,
                          EventLog& log, const EngineOptions& options) {
  const auto start = Clock::now();
  if (!private_key.has_private()) throw Error(Errc::key_missing, "private key required to decrypt");
  if (manifest.sandbox_id() != cfg.sandbox_id) {
    throw Error(Errc::sandbox_mismatch, "manifest belongs to sandbox " + manifest.sandbox_id());
  }
  check_key_matches(private_key, manifest);
  const RunLock run_lock(cfg);

  DecryptReport report;
  log.emit(EventKind::decrypt_started, std::nullopt, manifest.size(),
           options.mode == ExecutionMode::serial ? "decrypt serial" : "decrypt parallel");

  const auto& entries = manifest.entries();
  const int threads = thread_count(options);
  std::unordered_set<std::string> restored;
  std::uint64_t done = 0;
  std::size_t i = 0;
  while (i < entries.size()) {
    std::size_t end = i;
    std::uint64_t batch_bytes = 0;
    while (end < entries.size() && (end == i || threads > 1)) {
      if (end > i && batch_bytes + entries[end].original_size > options.batch_bytes) break;
      batch_bytes += entries[end].original_size;
      ++end;
    }

    std::vector<PreparedRestore> prepared(end - i);
    std::vector<std::string> errors(end - i);
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(end - i); ++k) {
      try {
        prepared[k] = prepare_restore(entries[i + static_cast<std::size_t>(k)], private_key, cfg);
      } catch (const std::exception& e) {
        prepared[k].temp.reset();
        errors[k] = describe(e);
      }
    }

    for (std::size_t k = 0; k < prepared.size(); ++k) {
      const auto& entry = entries[i + k];
      if (errors[k].empty()) {
        try {
          commit_restore(prepared[k]);
        } catch (const fault::SimulatedCrash&) {
          throw;
        } catch (const std::exception& e) {
          errors[k] = describe(e);
        }
      }
      if (!errors[k].empty()) {
        report.failures.push_back({entry.relative_path, errors[k]});
        log.emit(EventKind::restore_failed, entry.relative_path, std::nullopt, errors[k]);
        continue;
      }
      ++report.files_restored;
      ++report.checksum_matches;
      report.bytes_restored += prepared[k].bytes;
      restored.insert(entry.relative_path);
      log.emit(EventKind::file_restored, entry.relative_path, prepared[k].bytes,
               prepared[k].already_intact ? "checksum ok (already intact)" : "checksum ok");
      ++done;
      if (options.on_progress) options.on_progress(done, entries.size());
    }
    i = end;
  }

  manifest.remove(restored);
  if (manifest.empty()) {
    remove_durable(cfg.manifest_path());
  } else {
    write_manifest(manifest, cfg.manifest_path());
  }
  remove_stale_temps(cfg.root, cfg);

  report.duration = seconds_since(start);
  log.emit(EventKind::decrypt_finished, std::nullopt, report.bytes_restored,
           "restored=" + std::to_string(report.files_restored) +
               " failed=" + std::to_string(report.failures.size()));
  return report;
}

bool run_in_progress(const SandboxConfig& cfg) {
  const int fd = ::open(cfg.marker_path().c_str(), O_RDONLY | O_NOFOLLOW | O_CLOEXEC);
  if (fd < 0) return false;
  const bool busy = ::flock(fd, LOCK_SH | LOCK_NB) != 0 && errno == EWOULDBLOCK;
  ::close(fd);
  return busy;
}

VerifyReport verify_corpus(const SandboxConfig& cfg, const Manifest* manifest) {
  VerifyReport report;
  report.manifest_present = manifest != nullptr;
  if (manifest) {
    report.entries = manifest->size();
    for (const auto& e : manifest->entries()) {
      const fs::path token = cfg.root / fs::path(e.relative_path);
      try {
        if (!check_path_confinement(token, cfg)) throw Error(Errc::not_found, "token missing or not confined");
        const Bytes raw = read_file(token);
        check_token_layout(raw);
        if (raw.size() != sealed_size(e.original_size)) {
          throw Error(Errc::format, "token is " + std::to_string(raw.size()) + " bytes, expected " +
                                        std::to_string(sealed_size(e.original_size)));
        }
        ++report.entries_verified;
      } catch (const Error& ex) {
        report.failures.push_back({e.relative_path, ex.what()});
      }
    }
  } else {
    struct stat st {};
    if (::lstat(cfg.manifest_path().c_str(), &st) == 0) {
      report.failures.push_back({std::string(kManifestFileName), "manifest present in an unlocked corpus"});
    }
  }
  count_disk_state(cfg.root, report, cfg, manifest);
  return report;
}

}  // namespace ransim
