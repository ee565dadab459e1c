#include "ransim/telemetry.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <json.hpp>

#include "ransim/bytes.hpp"
#include "ransim/error.hpp"

namespace ransim {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 11> kKindNames = {
    "run_started",  "key_escrowed", "file_encrypted", "file_skipped",   "manifest_flushed",
    "cap_halt",     "run_finished", "decrypt_started", "file_restored", "restore_failed",
    "decrypt_finished"};

double now_seconds() {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  return static_cast<double>(ms) / 1000.0;
}

}  // namespace

std::string_view to_string(EventKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

EventKind event_kind_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<EventKind>(i);
  }
  throw Error(Errc::parse, "unknown event kind '" + std::string(name) + "'");
}

std::string event_to_json(const SimEvent& e) {
  json j;
  j["seq"] = e.seq;
  j["timestamp"] = e.timestamp;
  j["kind"] = std::string(to_string(e.kind));
  if (e.relative_path) j["relative_path"] = *e.relative_path;
  if (e.bytes) j["bytes"] = *e.bytes;
  if (e.detail) j["detail"] = *e.detail;
  return j.dump();
}

SimEvent event_from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    SimEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.timestamp = j.at("timestamp").get<double>();
    e.kind = event_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("relative_path")) e.relative_path = j["relative_path"].get<std::string>();
    if (j.contains("bytes")) e.bytes = j["bytes"].get<std::uint64_t>();
    if (j.contains("detail")) e.detail = j["detail"].get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw Error(Errc::parse, ex.what());
  }
}

EventLog::EventLog() = default;

EventLog::EventLog(std::filesystem::path path, WarningHandler on_warning)
    : path_(std::move(path)), on_warning_(std::move(on_warning)) {
  if (!on_warning_) on_warning_ = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
  std::error_code ec;
  if (std::filesystem::exists(path_, ec)) {
    std::string warning;
    try {
      events_ = read_events(path_, &warning);
    } catch (const Error& e) {
      on_warning_(std::string("existing event log unreadable, continuing: ") + e.what());
    }
    if (!warning.empty()) on_warning_(warning);
    if (!events_.empty()) last_timestamp_ = events_.back().timestamp;
  }
  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_NOFOLLOW | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    degraded_ = true;
    on_warning_("cannot open event log " + path_.string() + ": " + std::strerror(errno) +
                "; keeping events in memory");
  } else {
    // Cut a torn final line so the next event starts on its own line.
    const Bytes raw = read_file(path_);
    std::size_t keep = raw.size();
    while (keep > 0 && raw[keep - 1] != '\n') --keep;
    if (keep != raw.size() && ::ftruncate(fd_, static_cast<off_t>(keep)) != 0) {
      degraded_ = true;
      on_warning_("cannot trim torn event log tail; keeping events in memory");
    }
  }
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

SimEvent EventLog::emit(EventKind kind, std::optional<std::string> relative_path,
                        std::optional<std::uint64_t> bytes, std::optional<std::string> detail) {
  std::lock_guard lock(mutex_);
  SimEvent e;
  e.seq = events_.empty() ? 1 : events_.back().seq + 1;
  e.timestamp = std::max(now_seconds(), last_timestamp_);
  last_timestamp_ = e.timestamp;
  e.kind = kind;
  e.relative_path = std::move(relative_path);
  e.bytes = bytes;
  e.detail = std::move(detail);
  events_.push_back(e);
  write_line(event_to_json(e) + "\n", kind == EventKind::key_escrowed || kind == EventKind::run_finished);
  return e;
}

void EventLog::write_line(const std::string& line, bool durable) {
  if (fd_ < 0 || degraded_) return;
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      degraded_ = true;
      on_warning_("event log write failed (" + std::string(std::strerror(errno)) +
                  "); keeping events in memory");
      return;
    }
    off += static_cast<std::size_t>(n);
  }
  if (durable && ::fdatasync(fd_) != 0) {
    degraded_ = true;
    on_warning_("event log sync failed; keeping events in memory");
  }
}

std::vector<SimEvent> EventLog::since(std::uint64_t seq) const {
  std::lock_guard lock(mutex_);
  std::vector<SimEvent> out;
  for (const auto& e : events_) {
    if (e.seq > seq) out.push_back(e);
  }
  return out;
}

std::uint64_t EventLog::last_seq() const {
  std::lock_guard lock(mutex_);
  return events_.empty() ? 0 : events_.back().seq;
}

bool EventLog::degraded() const {
  std::lock_guard lock(mutex_);
  return degraded_;
}

std::vector<SimEvent> read_events(const std::filesystem::path& path, std::string* warning) {
  const Bytes raw = read_file(path);
  const std::string_view text(reinterpret_cast<const char*>(raw.data()), raw.size());
  std::vector<SimEvent> events;
  std::size_t pos = 0;
  std::size_t line = 0;
  while (pos < text.size()) {
    ++line;
    std::size_t nl = text.find('\n', pos);
    const bool terminated = nl != std::string_view::npos;
    if (!terminated) nl = text.size();
    const auto line_text = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line_text.empty()) continue;
    try {
      events.push_back(event_from_json(line_text));
    } catch (const Error& e) {
      // Only an unterminated final line can be the product of a torn write.
      if (!terminated) {
        if (warning) *warning = "dropped torn final line " + std::to_string(line) + " of " + path.string();
        break;
      }
      throw Error(Errc::parse, path.filename().string() + " line " + std::to_string(line) + ": " + e.what());
    }
  }
  return events;
}

}  // namespace ransim
