#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "ransim/engine.hpp"
#include "ransim/safety.hpp"
#include "ransim/telemetry.hpp"

namespace httplib {
class Server;
}

namespace ransim {

inline constexpr int kDefaultServicePort = 8733;

enum class Phase { idle, encrypting, locked, decrypting, restored };
std::string_view to_string(Phase phase);

struct LockState {
  Phase phase = Phase::idle;
  std::uint64_t files_locked = 0;
  std::uint64_t bytes_locked = 0;
  std::optional<std::int64_t> deadline;  // epoch seconds, cosmetic
  std::string note_text;
  std::optional<std::string> last_error;
};

/// Placeholders: {{files_locked}}, {{bytes_locked}}, {{deadline}} (UTC), {{seconds_remaining}}.
std::string default_note_template();
std::string render_note(std::string_view tmpl, std::uint64_t files_locked, std::uint64_t bytes_locked,
                        std::optional<std::int64_t> deadline, std::int64_t now);

bool is_loopback_address(std::string_view address);

struct ServiceOptions {
  std::string bind_address = "127.0.0.1";
  int port = kDefaultServicePort;  // 0 picks a free port
  bool allow_non_loopback = false;
  std::string note_template = default_note_template();
  std::optional<std::int64_t> deadline;
  std::filesystem::path ui_dir;  // empty: built-in page
  EngineOptions engine;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Local control plane: lock status, ransom note, event feed and the unlock action.
class ControlService {
 public:
  /// Errc::refused for a non-loopback bind without the override.
  ControlService(SandboxConfig cfg, ServiceOptions options);
  ControlService(const ControlService&) = delete;
  ControlService& operator=(const ControlService&) = delete;
  ~ControlService();

  /// Binds and starts serving in the background. Returns the bound port.
  /// Errc::io if the port cannot be bound.
  int start();
  /// Blocks until stop() is called.
  void wait();
  void stop();

  LockState state();

  HttpResponse get_status();
  HttpResponse get_note();
  HttpResponse get_events(std::uint64_t since) const;
  /// 202 and asynchronous decryption on success; 400 malformed key; 403 wrong key; 409 wrong phase.
  HttpResponse post_unlock(std::string pem);

  /// Joins a running decryption, if any.
  void wait_for_unlock();

 private:
  /// Refreshes phase and counts from keys.dat and the event log, unless a decrypt is running here.
  void reload_from_disk();
  std::vector<SimEvent> disk_events() const;
  void run_decrypt(KeyPair key);

  SandboxConfig cfg_;
  ServiceOptions options_;
  mutable std::mutex mutex_;
  LockState state_;
  bool decrypting_here_ = false;
  std::optional<DecryptReport> last_report_;
  std::thread worker_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
};

std::string to_json(const LockState& s, std::int64_t now);
std::string to_json(const EncryptReport& r);
std::string to_json(const DecryptReport& r);
std::string to_json(const VerifyReport& r);

}  // namespace ransim
