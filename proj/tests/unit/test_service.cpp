#include <doctest.h>

#include <fcntl.h>
#include <sys/file.h>

#include <atomic>
#include <httplib.h>
#include <json.hpp>
#include <thread>

#include "ransim/atomic_file.hpp"
#include "ransim/service.hpp"
#include "support/errors.hpp"
#include "support/sandbox.hpp"

using namespace ransim;
using nlohmann::json;
using ransim::test::code_of;
namespace fs = std::filesystem;

namespace {

ServiceOptions local_options() {
  ServiceOptions o;
  o.port = 0;
  return o;
}

struct LockedSandbox : test::SandboxFixture {
  LockedSandbox() {
    seed(8, 400'000);
    keygen();
    Manifest m(cfg.sandbox_id);
    EventLog log(cfg.events_path());
    recursive_encrypt(cfg, key, m, log);
  }
};

json body(const HttpResponse& r) { return json::parse(r.body); }

}  // namespace

TEST_SUITE("service") {

TEST_CASE("loopback detection") {
  CHECK(is_loopback_address("127.0.0.1"));
  CHECK(is_loopback_address("127.8.9.10"));
  CHECK(is_loopback_address("::1"));
  CHECK(is_loopback_address("localhost"));
  CHECK_FALSE(is_loopback_address("0.0.0.0"));
  CHECK_FALSE(is_loopback_address("192.168.1.4"));
  CHECK_FALSE(is_loopback_address("::"));
  CHECK_FALSE(is_loopback_address("example.com"));
}

TEST_CASE("non-loopback bind needs the override") {
  test::SandboxFixture sb;
  ServiceOptions o = local_options();
  o.bind_address = "0.0.0.0";
  CHECK(code_of([&] { ControlService s(sb.cfg, o); }) == Errc::refused);
  o.allow_non_loopback = true;
  CHECK_FALSE(code_of([&] { ControlService s(sb.cfg, o); }).has_value());
}

TEST_CASE("ui directory inside the sandbox is refused") {
  test::SandboxFixture sb;
  fs::create_directories(sb.cfg.root / "ui");
  ServiceOptions o = local_options();
  o.ui_dir = sb.cfg.root / "ui";
  CHECK(code_of([&] { ControlService s(sb.cfg, o); }) == Errc::refused);
}

TEST_CASE("note rendering") {
  const std::string note = render_note(default_note_template(), 12, 345, 1'000'000'060, 1'000'000'000);
  CHECK(note.find("SIMULATION") != std::string::npos);
  CHECK(note.find("12 files") != std::string::npos);
  CHECK(note.find("60 seconds remaining") != std::string::npos);
  CHECK(note.find("2001-09-09") != std::string::npos);
  CHECK(note.find("{{") == std::string::npos);
  CHECK(render_note("{{bytes_locked}} {{deadline}} {{seconds_remaining}}", 0, 7, std::nullopt, 0) ==
        "7 none n/a");
  CHECK(render_note("{{seconds_remaining}}", 0, 0, 10, 20) == "0");
}

TEST_CASE("phase follows the sandbox") {
  test::SandboxFixture sb;
  sb.seed(4, 40'000);
  sb.keygen();
  ControlService svc(sb.cfg, local_options());
  CHECK(svc.state().phase == Phase::idle);
  CHECK(svc.post_unlock(serialize_private_key(sb.key)).status == 409);

  Manifest m(sb.cfg.sandbox_id);
  EventLog log(sb.cfg.events_path());
  recursive_encrypt(sb.cfg, sb.key, m, log);
  auto s = svc.state();
  CHECK(s.phase == Phase::locked);
  CHECK(s.files_locked == 4);
  CHECK(s.note_text.find("4 files") != std::string::npos);
}

TEST_CASE("active run in another process is reported") {
  LockedSandbox sb;
  ControlService svc(sb.cfg, local_options());
  CHECK(svc.state().phase == Phase::locked);
  const int fd = ::open(sb.cfg.marker_path().c_str(), O_RDONLY);
  REQUIRE(fd >= 0);
  REQUIRE(::flock(fd, LOCK_EX) == 0);
  CHECK(run_in_progress(sb.cfg));
  CHECK(svc.state().phase == Phase::encrypting);
  CHECK(svc.post_unlock(serialize_private_key(sb.key)).status == 409);
  {
    Manifest m = load_manifest(sb.cfg.manifest_path());
    EventLog log;
    CHECK(code_of([&] { decrypt_all(sb.cfg, sb.key, m, log); }) == Errc::refused);
  }
  ::close(fd);
  CHECK_FALSE(run_in_progress(sb.cfg));
  CHECK(svc.state().phase == Phase::locked);
}

TEST_CASE("unlock rejects malformed and wrong keys without touching files") {
  LockedSandbox sb;
  ControlService svc(sb.cfg, local_options());
  const auto snap = test::snapshot(sb.cfg.root);

  auto r = svc.post_unlock("not a key");
  CHECK(r.status == 400);
  CHECK(body(r)["error"] == "malformed_key");

  r = svc.post_unlock(serialize_private_key(generate_keypair()));
  CHECK(r.status == 403);
  CHECK(body(r)["error"] == "wrong_key");

  CHECK(svc.state().phase == Phase::locked);
  CHECK(test::diff(snap, test::snapshot(sb.cfg.root)).empty());
}

TEST_CASE("unlock restores the corpus asynchronously") {
  LockedSandbox sb;
  ControlService svc(sb.cfg, local_options());
  const auto r = svc.post_unlock(serialize_private_key(sb.key));
  CHECK(r.status == 202);
  CHECK(body(r)["accepted"] == true);
  CHECK(body(r)["files_locked"] == 8);
  svc.wait_for_unlock();
  CHECK(svc.state().phase == Phase::restored);
  CHECK(svc.state().files_locked == 0);
  const json status = body(svc.get_status());
  CHECK(status["last_report"]["files_restored"] == 8);
  CHECK(status["last_report"]["checksum_matches"] == 8);
  CHECK(sb.corpus_intact());
  CHECK(svc.post_unlock(serialize_private_key(sb.key)).status == 409);

  // A fresh service reads the restored phase back from the event log.
  ControlService again(sb.cfg, local_options());
  CHECK(again.state().phase == Phase::restored);
}

TEST_CASE("http api end to end") {
  LockedSandbox sb;
  ServiceOptions o = local_options();
  o.deadline = 4'000'000'000;
  ControlService svc(sb.cfg, o);
  const int port = svc.start();
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  auto page = client.Get("/");
  REQUIRE(page);
  CHECK(page->status == 200);
  CHECK(page->body.find("SIMULATION") != std::string::npos);

  auto status = client.Get("/api/status");
  REQUIRE(status);
  const json s = json::parse(status->body);
  CHECK(s["phase"] == "locked");
  CHECK(s["files_locked"] == 8);
  CHECK(s["deadline"] == 4'000'000'000);
  CHECK(s["seconds_remaining"].get<std::int64_t>() > 0);

  auto note = client.Get("/api/note");
  REQUIRE(note);
  CHECK(json::parse(note->body)["note_text"].get<std::string>().find("8 files") != std::string::npos);

  auto events = client.Get("/api/events?since=0");
  REQUIRE(events);
  const json ev = json::parse(events->body);
  REQUIRE(ev.is_array());
  const auto last_seq = ev.back()["seq"].get<std::uint64_t>();
  CHECK(json::parse(client.Get("/api/events?since=" + std::to_string(last_seq))->body).empty());
  CHECK(client.Get("/api/events?since=abc")->status == 400);

  CHECK(client.Post("/api/unlock", "garbage", "text/plain")->status == 400);
  CHECK(client.Post("/api/unlock", serialize_private_key(generate_keypair()), "text/plain")->status == 403);

  // Pollers run throughout the unlock.
  std::atomic<bool> done{false};
  std::atomic<int> bad{0};
  std::vector<std::thread> pollers;
  for (int t = 0; t < 3; ++t) {
    pollers.emplace_back([&] {
      httplib::Client c("127.0.0.1", port);
      while (!done) {
        auto r = c.Get("/api/status");
        if (!r || r->status != 200) ++bad;
        auto e = c.Get("/api/events?since=0");
        if (!e || e->status != 200) ++bad;
      }
    });
  }
  auto unlock = client.Post("/api/unlock", serialize_private_key(sb.key), "text/plain");
  REQUIRE(unlock);
  CHECK(unlock->status == 202);
  svc.wait_for_unlock();
  done = true;
  for (auto& t : pollers) t.join();
  CHECK(bad == 0);

  const json after = json::parse(client.Get("/api/status")->body);
  CHECK(after["phase"] == "restored");
  CHECK(after["files_locked"] == 0);
  CHECK(sb.corpus_intact());
  svc.stop();
}

TEST_CASE("ui directory is served") {
  test::SandboxFixture sb;
  test::TempDir ui;
  write_file_atomic(ui.path() / "index.html", as_bytes("<html>custom ui</html>"));
  ServiceOptions o = local_options();
  o.ui_dir = ui.path();
  ControlService svc(sb.cfg, o);
  const int port = svc.start();
  httplib::Client client("127.0.0.1", port);
  auto r = client.Get("/");
  REQUIRE(r);
  CHECK(r->body == "<html>custom ui</html>");
  CHECK(client.Get("/api/status")->status == 200);
}

}  // TEST_SUITE
