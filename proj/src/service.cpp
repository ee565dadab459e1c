#include "ransim/service.hpp"

#include <arpa/inet.h>
#include <openssl/crypto.h>

#include <chrono>
#include <ctime>
#include <httplib.h>
#include <json.hpp>

#include "ransim/error.hpp"
#include "ransim/manifest.hpp"

namespace fs = std::filesystem;

namespace ransim {

using nlohmann::json;

namespace {

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string format_utc(std::int64_t t) {
  const std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%d %H:%M:%S UTC", &tm);
  return buf;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

HttpResponse error_response(int status, std::string_view error, std::string_view detail) {
  return json_response(status, {{"error", error}, {"detail", detail}});
}

json failures_json(const std::vector<FileFailure>& failures) {
  json arr = json::array();
  for (const auto& f : failures) arr.push_back({{"relative_path", f.relative_path}, {"error", f.error}});
  return arr;
}

constexpr std::string_view kFallbackPage = R"html(<!doctype html>
<html><head><meta charset="utf-8"><title>ransim</title>
<style>body{font-family:sans-serif;margin:0}#banner{background:#b00;color:#fff;padding:8px;text-align:center;font-weight:bold}
main{padding:1em}pre{white-space:pre-wrap}</style></head>
<body><div id="banner">SIMULATION - educational exercise, no data is destroyed</div>
<main><pre id="note">loading...</pre><p id="status"></p>
<textarea id="key" rows="8" cols="70" placeholder="paste key.pem"></textarea><br>
<button id="unlock">Submit key</button> <span id="msg"></span></main>
<script>
async function poll(){try{const s=await (await fetch('/api/status')).json();
document.getElementById('note').textContent=s.note_text;
document.getElementById('status').textContent='phase: '+s.phase+', files locked: '+s.files_locked+
(s.seconds_remaining!==null?', seconds remaining: '+s.seconds_remaining:'');}catch(e){
document.getElementById('status').textContent='service offline';}}
document.getElementById('unlock').onclick=async()=>{const b=document.getElementById('unlock');b.disabled=true;
const k=document.getElementById('key');const r=await fetch('/api/unlock',{method:'POST',headers:{'Content-Type':'text/plain'},body:k.value});
const j=await r.json();document.getElementById('msg').textContent=r.status===202?'restoring...':(j.error+': '+j.detail);
if(r.status===403)k.value='';b.disabled=false;};
setInterval(poll,1000);poll();
</script></body></html>
)html";

}  // namespace

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::idle: return "idle";
    case Phase::encrypting: return "encrypting";
    case Phase::locked: return "locked";
    case Phase::decrypting: return "decrypting";
    case Phase::restored: return "restored";
  }
  return "idle";
}

std::string default_note_template() {
  return "*** SIMULATION - EDUCATIONAL RANSOMWARE EXERCISE ***\n"
         "\n"
         "{{files_locked}} files in this sandbox have been encrypted by a training tool.\n"
         "Each file was sealed with its own AES key, and those keys were wrapped with an RSA public key.\n"
         "\n"
         "Deadline: {{deadline}} ({{seconds_remaining}} seconds remaining).\n"
         "The deadline is cosmetic: nothing is deleted when it passes.\n"
         "\n"
         "To restore your files, submit the escrowed private key (key.pem) below.\n"
         "This is a SIMULATION. No payment is requested and no data is destroyed.\n";
}

std::string render_note(std::string_view tmpl, std::uint64_t files_locked, std::uint64_t bytes_locked,
                        std::optional<std::int64_t> deadline, std::int64_t now) {
  std::string out(tmpl);
  replace_all(out, "{{files_locked}}", std::to_string(files_locked));
  replace_all(out, "{{bytes_locked}}", std::to_string(bytes_locked));
  replace_all(out, "{{deadline}}", deadline ? format_utc(*deadline) : std::string("none"));
  replace_all(out, "{{seconds_remaining}}",
              deadline ? std::to_string(std::max<std::int64_t>(0, *deadline - now)) : std::string("n/a"));
  return out;
}

bool is_loopback_address(std::string_view address) {
  if (address == "localhost") return true;
  const std::string a(address);
  in_addr v4{};
  if (::inet_pton(AF_INET, a.c_str(), &v4) == 1) return (ntohl(v4.s_addr) >> 24) == 127;
  in6_addr v6{};
  if (::inet_pton(AF_INET6, a.c_str(), &v6) == 1) return IN6_IS_ADDR_LOOPBACK(&v6);
  return false;
}

std::string to_json(const LockState& s, std::int64_t now) {
  json j;
  j["phase"] = std::string(to_string(s.phase));
  j["files_locked"] = s.files_locked;
  j["bytes_locked"] = s.bytes_locked;
  j["deadline"] = s.deadline ? json(*s.deadline) : json(nullptr);
  j["seconds_remaining"] = s.deadline ? json(std::max<std::int64_t>(0, *s.deadline - now)) : json(nullptr);
  j["note_text"] = s.note_text;
  j["last_error"] = s.last_error ? json(*s.last_error) : json(nullptr);
  return j.dump();
}

std::string to_json(const EncryptReport& r) {
  json j;
  j["files_scanned"] = r.files_scanned;
  j["files_encrypted"] = r.files_encrypted;
  j["files_skipped"] = r.files_skipped;
  j["bytes_processed"] = r.bytes_processed;
  j["duration"] = r.duration;
  j["failures"] = failures_json(r.failures);
  j["cap_halted"] = r.cap_halted;
  return j.dump();
}

std::string to_json(const DecryptReport& r) {
  json j;
  j["files_restored"] = r.files_restored;
  j["checksum_matches"] = r.checksum_matches;
  j["bytes_restored"] = r.bytes_restored;
  j["failures"] = failures_json(r.failures);
  j["duration"] = r.duration;
  return j.dump();
}

std::string to_json(const VerifyReport& r) {
  json j;
  j["ok"] = r.ok();
  j["manifest_present"] = r.manifest_present;
  j["entries"] = r.entries;
  j["entries_verified"] = r.entries_verified;
  j["residual_tokens"] = r.residual_tokens;
  j["stray_temp_files"] = r.stray_temp_files;
  j["failures"] = failures_json(r.failures);
  return j.dump();
}

ControlService::ControlService(SandboxConfig cfg, ServiceOptions options)
    : cfg_(std::move(cfg)), options_(std::move(options)) {
  if (!options_.allow_non_loopback && !is_loopback_address(options_.bind_address)) {
    throw Error(Errc::refused, "refusing to bind " + options_.bind_address +
                                   " without the explicit non-loopback override");
  }
  if (!options_.ui_dir.empty()) {
    std::error_code ec;
    const auto ui = fs::weakly_canonical(options_.ui_dir, ec);
    const auto rel = ui.lexically_relative(cfg_.root);
    if (!ec && (ui == cfg_.root || (!rel.empty() && *rel.begin() != ".."))) {
      throw Error(Errc::refused, "UI directory must not be inside the sandbox");
    }
  }
  state_.deadline = options_.deadline;
  reload_from_disk();
}

ControlService::~ControlService() {
  stop();
  wait_for_unlock();
}

std::vector<SimEvent> ControlService::disk_events() const {
  std::error_code ec;
  if (!fs::exists(cfg_.events_path(), ec)) return {};
  try {
    return read_events(cfg_.events_path());
  } catch (const Error&) {
    return {};
  }
}

void ControlService::reload_from_disk() {
  std::lock_guard lock(mutex_);
  if (decrypting_here_) return;
  state_.files_locked = 0;
  state_.bytes_locked = 0;

  // A run in another process holds the marker lock; its kind is the latest start event.
  const auto events = disk_events();
  std::optional<Phase> active;
  if (run_in_progress(cfg_)) {
    for (const auto& e : events) {
      if (e.kind == EventKind::run_started) active = Phase::encrypting;
      if (e.kind == EventKind::decrypt_started) active = Phase::decrypting;
    }
  }
  std::error_code ec;
  if (fs::exists(cfg_.manifest_path(), ec)) {
    try {
      const Manifest m = load_manifest(cfg_.manifest_path());
      state_.files_locked = m.size();
      for (const auto& e : m.entries()) state_.bytes_locked += e.original_size;
      state_.phase = m.empty() ? Phase::idle : Phase::locked;
    } catch (const Error& e) {
      state_.phase = Phase::idle;
      state_.last_error = e.what();
    }
  } else {
    state_.phase = (!events.empty() && events.back().kind == EventKind::decrypt_finished) ? Phase::restored
                                                                                        : Phase::idle;
  }
  if (active) state_.phase = *active;
}

LockState ControlService::state() {
  reload_from_disk();
  std::lock_guard lock(mutex_);
  LockState s = state_;
  s.note_text = render_note(options_.note_template, s.files_locked, s.bytes_locked, s.deadline, unix_now());
  return s;
}

HttpResponse ControlService::get_status() {
  const auto now = unix_now();
  json j = json::parse(to_json(state(), now));
  std::lock_guard lock(mutex_);
  j["last_report"] = last_report_ ? json::parse(to_json(*last_report_)) : json(nullptr);
  return json_response(200, j);
}

HttpResponse ControlService::get_note() {
  const auto s = state();
  const auto now = unix_now();
  return json_response(200, {{"note_text", s.note_text},
                             {"deadline", s.deadline ? json(*s.deadline) : json(nullptr)},
                             {"seconds_remaining",
                              s.deadline ? json(std::max<std::int64_t>(0, *s.deadline - now)) : json(nullptr)},
                             {"files_locked", s.files_locked}});
}

HttpResponse ControlService::get_events(std::uint64_t since) const {
  json arr = json::array();
  for (const auto& e : disk_events()) {
    if (e.seq > since) arr.push_back(json::parse(event_to_json(e)));
  }
  return json_response(200, arr);
}

HttpResponse ControlService::post_unlock(std::string pem) {
  reload_from_disk();
  std::unique_lock lock(mutex_);
  if (state_.phase != Phase::locked) {
    OPENSSL_cleanse(pem.data(), pem.size());
    return error_response(409, "conflict", "unlock requires phase locked, current phase is " +
                                               std::string(to_string(state_.phase)));
  }
  KeyPair key;
  try {
    key = parse_private_key(pem);
  } catch (const Error& e) {
    OPENSSL_cleanse(pem.data(), pem.size());
    return error_response(400, "malformed_key", e.what());
  }
  OPENSSL_cleanse(pem.data(), pem.size());

  Manifest manifest;
  try {
    manifest = load_manifest(cfg_.manifest_path());
    check_key_matches(key, manifest);
  } catch (const Error& e) {
    if (e.code() == Errc::wrong_key) return error_response(403, "wrong_key", e.what());
    return error_response(500, "manifest", e.what());
  }

  state_.phase = Phase::decrypting;
  decrypting_here_ = true;
  state_.last_error.reset();
  const auto files = manifest.size();
  if (worker_.joinable()) worker_.join();
  worker_ = std::thread([this, key] { run_decrypt(key); });
  return json_response(202, {{"accepted", true}, {"files_locked", files}});
}

void ControlService::run_decrypt(KeyPair key) {
  EngineOptions opts = options_.engine;
  Manifest manifest;
  try {
    manifest = load_manifest(cfg_.manifest_path());
  } catch (const Error& e) {
    std::lock_guard lock(mutex_);
    state_.phase = Phase::locked;
    state_.last_error = e.what();
    decrypting_here_ = false;
    return;
  }
  const std::uint64_t total = manifest.size();
  opts.on_progress = [this, total](std::uint64_t done, std::uint64_t) {
    std::lock_guard lock(mutex_);
    const std::uint64_t remaining = total - std::min(done, total);
    state_.files_locked = std::min(state_.files_locked, remaining);
  };
  try {
    EventLog log(cfg_.events_path());
    const DecryptReport report = decrypt_all(cfg_, key, manifest, log, opts);
    std::lock_guard lock(mutex_);
    decrypting_here_ = false;
    last_report_ = report;
    state_.files_locked = manifest.size();
    state_.bytes_locked = 0;
    for (const auto& e : manifest.entries()) state_.bytes_locked += e.original_size;
    if (manifest.empty()) {
      state_.phase = Phase::restored;
    } else {
      state_.phase = Phase::locked;
      state_.last_error = std::to_string(report.failures.size()) + " files could not be restored";
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(mutex_);
    decrypting_here_ = false;
    state_.phase = Phase::locked;
    state_.last_error = e.what();
  }
}

void ControlService::wait_for_unlock() {
  if (worker_.joinable()) worker_.join();
}

int ControlService::start() {
  server_ = std::make_unique<httplib::Server>();
  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server_->Get("/api/status", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, get_status());
  });
  server_->Get("/api/note", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, get_note());
  });
  server_->Get("/api/events", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t since = 0;
    if (req.has_param("since")) {
      try {
        since = std::stoull(req.get_param_value("since"));
      } catch (const std::exception&) {
        send(res, error_response(400, "bad_request", "since must be a non-negative integer"));
        return;
      }
    }
    send(res, get_events(since));
  });
  server_->Post("/api/unlock", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::string body = req.body;
    send(res, post_unlock(std::move(body)));
  });
  if (!options_.ui_dir.empty()) {
    if (!server_->set_mount_point("/", options_.ui_dir.string())) {
      throw Error(Errc::usage, "UI directory " + options_.ui_dir.string() + " does not exist");
    }
  } else {
    server_->Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(std::string(kFallbackPage), "text/html; charset=utf-8");
    });
  }

  int port = options_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(options_.bind_address);
    if (port < 0) throw Error(Errc::io, "cannot bind " + options_.bind_address);
  } else if (!server_->bind_to_port(options_.bind_address, port)) {
    throw Error(Errc::io, "cannot bind " + options_.bind_address + ":" + std::to_string(port) +
                              " (port in use?)");
  }
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  return port;
}

void ControlService::wait() {
  if (listener_.joinable()) listener_.join();
}

void ControlService::stop() {
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
}

}  // namespace ransim
