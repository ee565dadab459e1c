#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ransim {

enum class EventKind {
  run_started,
  key_escrowed,
  file_encrypted,
  file_skipped,
  manifest_flushed,
  cap_halt,
  run_finished,
  decrypt_started,
  file_restored,
  restore_failed,
  decrypt_finished,
};

std::string_view to_string(EventKind kind);
/// Throws Errc::parse for names outside the closed set.
EventKind event_kind_from_string(std::string_view name);

struct SimEvent {
  std::uint64_t seq = 0;
  double timestamp = 0;  // seconds since epoch, millisecond resolution
  EventKind kind = EventKind::run_started;
  std::optional<std::string> relative_path;
  std::optional<std::uint64_t> bytes;
  std::optional<std::string> detail;

  friend bool operator==(const SimEvent&, const SimEvent&) = default;
};

std::string event_to_json(const SimEvent& e);
SimEvent event_from_json(std::string_view line);

/// Append-only, single-writer event log. Every event is also kept in memory,
/// so readers can query it while a run is in progress. If the file cannot be
/// written the log keeps going in memory and reports one warning.
class EventLog {
 public:
  using WarningHandler = std::function<void(const std::string&)>;

  /// Memory-only log.
  EventLog();
  /// Appends to `path`; seq continues after any events already there.
  explicit EventLog(std::filesystem::path path, WarningHandler on_warning = {});
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;
  ~EventLog();

  SimEvent emit(EventKind kind, std::optional<std::string> relative_path = std::nullopt,
                std::optional<std::uint64_t> bytes = std::nullopt,
                std::optional<std::string> detail = std::nullopt);

  /// Events with seq > `seq`, in order.
  std::vector<SimEvent> since(std::uint64_t seq) const;
  std::uint64_t last_seq() const;
  bool degraded() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void write_line(const std::string& line, bool durable);

  std::filesystem::path path_;
  WarningHandler on_warning_;
  mutable std::mutex mutex_;
  std::vector<SimEvent> events_;
  int fd_ = -1;
  bool degraded_ = false;
  double last_timestamp_ = 0;
};

/// A torn (unterminated, unparsable) final line is dropped and reported via
/// `warning`; any other bad line throws Errc::parse with its line number.
std::vector<SimEvent> read_events(const std::filesystem::path& path, std::string* warning = nullptr);

}  // namespace ransim
