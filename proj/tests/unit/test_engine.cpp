#include <doctest.h>

#include <algorithm>

#include "ransim/atomic_file.hpp"
#include "ransim/fault.hpp"
#include "support/errors.hpp"
#include "support/sandbox.hpp"

using namespace ransim;
using ransim::test::code_of;
namespace fs = std::filesystem;

namespace {

EngineOptions serial() {
  EngineOptions o;
  o.mode = ExecutionMode::serial;
  return o;
}

EngineOptions parallel(int threads = 4) {
  EngineOptions o;
  o.mode = ExecutionMode::parallel;
  o.threads = threads;
  o.batch_bytes = 64 << 10;  // force several batches
  return o;
}

std::vector<std::string> paths_of(const Manifest& m) {
  std::vector<std::string> out;
  for (const auto& e : m.entries()) out.push_back(e.relative_path);
  return out;
}

std::vector<std::string> trace(const std::vector<SimEvent>& events) {
  std::vector<std::string> out;
  for (const auto& e : events) {
    out.push_back(std::string(to_string(e.kind)) + " " + e.relative_path.value_or("-") + " " +
                  (e.bytes ? std::to_string(*e.bytes) : "-"));
  }
  return out;
}

std::size_t count_kind(const std::vector<SimEvent>& events, EventKind kind) {
  return static_cast<std::size_t>(
      std::count_if(events.begin(), events.end(), [&](const SimEvent& e) { return e.kind == kind; }));
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("round trip restores every file and leaves decoys alone") {
  test::SandboxFixture sb;
  sb.seed(24, 2'000'000);
  sb.keygen();
  const auto before = test::snapshot(sb.cfg.root);

  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  const auto enc = recursive_encrypt(sb.cfg, sb.key.public_only(), m, log, parallel());
  CHECK(enc.files_encrypted == 24);
  CHECK(enc.failures.empty());
  CHECK_FALSE(enc.cap_halted);
  CHECK(load_manifest(sb.cfg.manifest_path()) == m);

  for (const auto& f : sb.index.files) {
    const auto p = sb.cfg.root / f.relative_path;
    if (f.whitelisted) {
      CHECK_FALSE(fs::exists(p));
      REQUIRE(fs::exists(p.string() + ".locked"));
      CHECK(fs::file_size(p.string() + ".locked") == sealed_size(f.size));
      const auto* e = m.lookup(f.relative_path + ".locked");
      REQUIRE(e != nullptr);
      CHECK(e->plaintext_checksum == f.sha256);
      CHECK(e->original_size == f.size);
    } else {
      CHECK(sha256_hex(read_file(p)) == f.sha256);
    }
  }
  CHECK(verify_corpus(sb.cfg, &m).ok());

  const auto dec = decrypt_all(sb.cfg, sb.key, m, log, parallel());
  CHECK(dec.files_restored == 24);
  CHECK(dec.checksum_matches == 24);
  CHECK(dec.failures.empty());
  CHECK(m.empty());
  CHECK_FALSE(fs::exists(sb.cfg.manifest_path()));
  CHECK(sb.corpus_intact());
  CHECK(verify_corpus(sb.cfg, nullptr).ok());

  auto after = test::snapshot(sb.cfg.root);
  after.erase("key.pem");
  auto expected = before;
  expected.erase("key.pem");
  CHECK(test::diff(expected, after).empty());
}

TEST_CASE("serial and parallel produce the same manifest order and event stream") {
  std::vector<std::string> order[2];
  std::vector<std::string> events[2];
  int i = 0;
  for (const auto& opts : {serial(), parallel()}) {
    test::SandboxFixture sb;
    sb.seed(30, 1'500'000, 7);
    write_file_atomic(sb.cfg.root / "corpus" / "notes.pdf", as_bytes("skip me"));
    sb.keygen();
    Manifest m(sb.cfg.sandbox_id);
    EventLog log;
    recursive_encrypt(sb.cfg, sb.key, m, log, opts);
    order[i] = paths_of(m);
    events[i] = trace(log.since(0));
    ++i;
  }
  CHECK(order[0] == order[1]);
  CHECK(std::is_sorted(order[0].begin(), order[0].end()));
  CHECK(events[0] == events[1]);
}

TEST_CASE("second encrypt run encrypts nothing") {
  test::SandboxFixture sb;
  sb.seed(10, 200'000);
  sb.keygen();
  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  CHECK(recursive_encrypt(sb.cfg, sb.key, m, log, serial()).files_encrypted == 10);
  const auto snap = test::snapshot(sb.cfg.root);
  Manifest again = load_manifest(sb.cfg.manifest_path());
  const auto r = recursive_encrypt(sb.cfg, sb.key, again, log, parallel());
  CHECK(r.files_encrypted == 0);
  CHECK(r.failures.empty());
  CHECK(again == m);
  CHECK(test::diff(snap, test::snapshot(sb.cfg.root)).empty());
}

TEST_CASE("encrypt requires a matching escrowed key") {
  test::SandboxFixture sb;
  sb.seed(4, 10'000);
  const auto snap = test::snapshot(sb.cfg.root);
  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  const KeyPair kp = generate_keypair();
  CHECK(code_of([&] { recursive_encrypt(sb.cfg, kp, m, log); }) == Errc::key_missing);
  CHECK(test::diff(snap, test::snapshot(sb.cfg.root)).empty());

  sb.keygen();
  CHECK(code_of([&] { recursive_encrypt(sb.cfg, kp, m, log); }) == Errc::wrong_key);
  CHECK_FALSE(fs::exists(sb.cfg.manifest_path()));
  CHECK(sb.corpus_intact());
}

TEST_CASE("decrypt refuses a missing or wrong key without touching anything") {
  test::SandboxFixture sb;
  sb.seed(6, 60'000);
  sb.keygen();
  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  recursive_encrypt(sb.cfg, sb.key, m, log);
  const auto snap = test::snapshot(sb.cfg.root);

  CHECK(code_of([&] { decrypt_all(sb.cfg, sb.dir.path() / "absent.pem", m, log); }) == Errc::key_missing);
  CHECK(code_of([&] { decrypt_all(sb.cfg, generate_keypair(), m, log); }) == Errc::wrong_key);
  CHECK(code_of([&] { decrypt_all(sb.cfg, sb.key.public_only(), m, log); }) == Errc::key_missing);
  CHECK(test::diff(snap, test::snapshot(sb.cfg.root)).empty());
  CHECK(m.size() == 6);

  CHECK(decrypt_all(sb.cfg, sb.cfg.escrow_path, m, log).files_restored == 6);
  CHECK(sb.corpus_intact());
}

TEST_CASE("cap halts cleanly before the breaching file") {
  test::SandboxFixture sb;
  sb.seed(10, 100'000);
  sb.keygen();
  SandboxConfig cfg = sb.cfg;
  cfg.max_files = 4;
  Manifest m(cfg.sandbox_id);
  EventLog log;
  const auto r = recursive_encrypt(cfg, sb.key, m, log, parallel());
  CHECK(r.cap_halted);
  CHECK(r.files_encrypted == 4);
  CHECK(m.size() == 4);
  CHECK(count_kind(log.since(0), EventKind::cap_halt) == 1);
  CHECK(load_manifest(cfg.manifest_path()) == m);

  cfg.max_files = 10;
  cfg.max_total_bytes = 30'000;
  Manifest m2 = load_manifest(cfg.manifest_path());
  const auto r2 = recursive_encrypt(cfg, sb.key, m2, log, serial());
  CHECK(r2.cap_halted);
  CHECK(r2.bytes_processed <= 30'000);

  decrypt_all(sb.cfg, sb.key, m2, log);
  CHECK(sb.corpus_intact());
}

TEST_CASE("manifest is rewritten every flush_every entries and at the end") {
  test::SandboxFixture sb;
  sb.seed(12, 50'000);
  sb.keygen();
  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  EngineOptions opts = serial();
  opts.flush_every = 5;
  recursive_encrypt(sb.cfg, sb.key, m, log, opts);
  std::vector<std::uint64_t> flushed;
  for (const auto& e : log.since(0)) {
    if (e.kind == EventKind::manifest_flushed) flushed.push_back(*e.bytes);
  }
  CHECK(flushed == std::vector<std::uint64_t>{5, 10, 12});
}

TEST_CASE("symlinks are skipped and their targets untouched") {
  test::SandboxFixture sb;
  test::TempDir outside;
  write_file_atomic(outside.path() / "victim.txt", as_bytes("do not encrypt"));
  fs::create_directories(outside.path() / "dir");
  write_file_atomic(outside.path() / "dir" / "inner.txt", as_bytes("nor this"));
  write_file_atomic(sb.cfg.root / "real.txt", as_bytes("encrypt me"));
  fs::create_symlink(outside.path() / "victim.txt", sb.cfg.root / "link.txt");
  fs::create_symlink(outside.path() / "dir", sb.cfg.root / "linkdir");
  sb.keygen();
  const auto outside_before = test::snapshot(outside.path());

  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  const auto r = recursive_encrypt(sb.cfg, sb.key, m, log);
  CHECK(r.files_encrypted == 1);
  CHECK(m.contains("real.txt.locked"));
  CHECK(test::diff(outside_before, test::snapshot(outside.path())).empty());
  CHECK(fs::is_symlink(sb.cfg.root / "link.txt"));
}

TEST_CASE("unrecorded lock file blocks its original") {
  test::SandboxFixture sb;
  write_file_atomic(sb.cfg.root / "a.txt", as_bytes("aaa"));
  write_file_atomic(sb.cfg.root / "a.txt.locked", as_bytes("stray"));
  write_file_atomic(sb.cfg.root / "b.txt", as_bytes("bbb"));
  sb.keygen();
  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  const auto r = recursive_encrypt(sb.cfg, sb.key, m, log);
  CHECK(r.files_encrypted == 1);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].relative_path == "a.txt");
  CHECK(read_file(sb.cfg.root / "a.txt.locked") == Bytes{'s', 't', 'r', 'a', 'y'});
}

TEST_CASE("a tampered token fails alone and stays recorded") {
  test::SandboxFixture sb;
  sb.seed(5, 50'000);
  sb.keygen();
  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  recursive_encrypt(sb.cfg, sb.key, m, log);
  const std::string victim = m.entries()[2].relative_path;
  {
    Bytes raw = read_file(sb.cfg.root / victim);
    raw[40] ^= 1;
    write_file_atomic(sb.cfg.root / victim, raw);
  }
  const auto r = decrypt_all(sb.cfg, sb.key, m, log, parallel());
  CHECK(r.files_restored == 4);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].relative_path == victim);
  CHECK(count_kind(log.since(0), EventKind::restore_failed) == 1);
  CHECK(m.size() == 1);
  CHECK(load_manifest(sb.cfg.manifest_path()) == m);
  CHECK(fs::exists(sb.cfg.root / victim));
}

TEST_CASE("crash at each encrypt stage still decrypts fully") {
  for (const char* point : {"encrypt.temp_written", "encrypt.journaled", "encrypt.renamed"}) {
    for (int skip : {0, 3}) {
      CAPTURE(point);
      CAPTURE(skip);
      test::SandboxFixture sb;
      sb.seed(8, 80'000);
      sb.keygen();
      const int status = test::run_in_child([&] {
        fault::arm(point, fault::Action::exit_process, skip);
        Manifest m(sb.cfg.sandbox_id);
        EventLog log(sb.cfg.events_path());
        recursive_encrypt(sb.cfg, sb.key, m, log, serial());
      });
      REQUIRE(status == fault::kCrashExitCode);

      Manifest m = sb.load_or_new();
      EventLog log(sb.cfg.events_path());
      const auto r = decrypt_all(sb.cfg, sb.key, m, log, parallel());
      CHECK(r.failures.empty());
      CHECK(sb.corpus_intact());
      CHECK(verify_corpus(sb.cfg, nullptr).ok());
    }
  }
}

TEST_CASE("crash mid-run then resume encrypt, then decrypt") {
  test::SandboxFixture sb;
  sb.seed(8, 80'000);
  sb.keygen();
  fault::arm("encrypt.journaled", fault::Action::throw_crash, 4);
  {
    Manifest m(sb.cfg.sandbox_id);
    EventLog log;
    CHECK_THROWS_AS(recursive_encrypt(sb.cfg, sb.key, m, log, serial()), fault::SimulatedCrash);
  }
  fault::disarm();
  // The journaled-but-unpublished file has a manifest entry and an intact original.
  Manifest m = load_manifest(sb.cfg.manifest_path());
  CHECK(m.size() == 5);
  EventLog log;
  const auto r = decrypt_all(sb.cfg, sb.key, m, log);
  CHECK(r.failures.empty());
  CHECK(r.files_restored == 5);
  CHECK(sb.corpus_intact());
}

TEST_CASE("crash during restore is recoverable") {
  test::SandboxFixture sb;
  sb.seed(6, 60'000);
  sb.keygen();
  Manifest m(sb.cfg.sandbox_id);
  EventLog log;
  recursive_encrypt(sb.cfg, sb.key, m, log);
  const int status = test::run_in_child([&] {
    fault::arm("decrypt.restored", fault::Action::exit_process, 2);
    Manifest copy = load_manifest(sb.cfg.manifest_path());
    EventLog child_log;
    decrypt_all(sb.cfg, sb.key, copy, child_log, serial());
  });
  REQUIRE(status == fault::kCrashExitCode);
  Manifest again = load_manifest(sb.cfg.manifest_path());
  const auto r = decrypt_all(sb.cfg, sb.key, again, log);
  CHECK(r.failures.empty());
  CHECK(sb.corpus_intact());
}

TEST_CASE("encrypt_file refuses paths that escape the sandbox") {
  test::SandboxFixture sb;
  test::TempDir outside;
  write_file_atomic(outside.path() / "v.txt", as_bytes("outside"));
  write_file_atomic(sb.cfg.root / "ok.txt", as_bytes("inside"));
  fs::create_symlink(outside.path() / "v.txt", sb.cfg.root / "link.txt");
  sb.keygen();
  CHECK(code_of([&] { encrypt_file(sb.cfg.root / "link.txt", sb.key, sb.cfg); }) == Errc::refused);
  CHECK(code_of([&] { encrypt_file(outside.path() / "v.txt", sb.key, sb.cfg); }) == Errc::refused);
  CHECK(code_of([&] { encrypt_file(sb.cfg.root / ".." / "x.txt", sb.key, sb.cfg); }) == Errc::not_found);
  CHECK(code_of([&] { encrypt_file(sb.cfg.root / "missing.txt", sb.key, sb.cfg); }) == Errc::not_found);
  CHECK(code_of([&] { encrypt_file(sb.cfg.root / "key.pem", sb.key, sb.cfg); }) == Errc::refused);
  CHECK(test::snapshot(outside.path()).size() == 1);

  bool journaled = false;
  const auto e = encrypt_file(sb.cfg.root / "ok.txt", sb.key, sb.cfg, [&](const ManifestEntry&) {
    journaled = true;
    CHECK(fs::exists(sb.cfg.root / "ok.txt"));
    CHECK_FALSE(fs::exists(sb.cfg.root / "ok.txt.locked"));
  });
  CHECK(journaled);
  CHECK(e.relative_path == "ok.txt.locked");
  CHECK_FALSE(fs::exists(sb.cfg.root / "ok.txt"));
  FileKey k = unwrap_key(sb.key, e.wrapped_key);
  CHECK(open(k, read_file(sb.cfg.root / "ok.txt.locked")) == Bytes{'i', 'n', 's', 'i', 'd', 'e'});
}

TEST_CASE("verify flags stray tokens and temp files") {
  test::SandboxFixture sb;
  sb.seed(3, 3000);
  CHECK(verify_corpus(sb.cfg, nullptr).ok());
  write_file_atomic(sb.cfg.root / "x.txt.locked", as_bytes("zzz"));
  auto r = verify_corpus(sb.cfg, nullptr);
  CHECK_FALSE(r.ok());
  CHECK(r.residual_tokens == 1);
  fs::remove(sb.cfg.root / "x.txt.locked");
  write_file_atomic(sb.cfg.root / "y", as_bytes("q"));
  fs::rename(sb.cfg.root / "y", sb.cfg.root / "y.txt.ransim-tmp");
  r = verify_corpus(sb.cfg, nullptr);
  CHECK(r.stray_temp_files == 1);
  CHECK_FALSE(r.ok());
}

}  // TEST_SUITE
