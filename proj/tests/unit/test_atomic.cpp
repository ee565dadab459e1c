#include <doctest.h>

#include <sys/stat.h>

#include "ransim/atomic_file.hpp"
#include "ransim/error.hpp"
#include "ransim/fault.hpp"
#include "support/fs_watch.hpp"

using namespace ransim;
namespace fs = std::filesystem;

namespace {
std::string text_of(const fs::path& p) {
  const Bytes raw = read_file(p);
  return std::string(raw.begin(), raw.end());
}
}  // namespace

TEST_SUITE("atomic_file") {

TEST_CASE("write replaces content in one step") {
  test::TempDir dir;
  const fs::path p = dir.path() / "f.txt";
  write_file_atomic(p, as_bytes("first"));
  write_file_atomic(p, as_bytes("second"));
  CHECK(text_of(p) == "second");
  CHECK(test::snapshot(dir.path()).size() == 1);
}

TEST_CASE("crash after temp write keeps the old file") {
  test::TempDir dir;
  const fs::path p = dir.path() / "f.txt";
  write_file_atomic(p, as_bytes("old"));
  fault::arm("atomic.temp_written");
  CHECK_THROWS_AS(write_file_atomic(p, as_bytes("new")), fault::SimulatedCrash);
  fault::disarm();
  CHECK(text_of(p) == "old");
  CHECK_FALSE(fs::exists(p.string() + std::string(kTempSuffix)));
}

TEST_CASE("no-replace publish refuses an existing target") {
  test::TempDir dir;
  const fs::path p = dir.path() / "f.txt";
  write_file_atomic(p, as_bytes("keep"));
  {
    AtomicFile f(p);
    f.write(as_bytes("clobber"));
    f.sync();
    try {
      f.publish(/*no_replace=*/true);
      FAIL("replaced an existing file");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::io);
    }
  }
  CHECK(text_of(p) == "keep");
  CHECK_FALSE(fs::exists(p.string() + std::string(kTempSuffix)));
}

TEST_CASE("temp file does not follow a planted symlink") {
  test::TempDir dir;
  test::TempDir outside;
  const fs::path victim = outside.path() / "victim";
  write_file_atomic(victim, as_bytes("untouched"));
  const fs::path p = dir.path() / "f.txt";
  fs::create_symlink(victim, p.string() + std::string(kTempSuffix));
  CHECK_THROWS_AS(AtomicFile{p}, Error);
  CHECK(text_of(victim) == "untouched");
}

TEST_CASE("mode is applied") {
  test::TempDir dir;
  const fs::path p = dir.path() / "secret";
  write_file_atomic(p, as_bytes("x"), 0600);
  struct stat st {};
  REQUIRE(::stat(p.c_str(), &st) == 0);
  CHECK((st.st_mode & 0777) == 0600);
}

TEST_CASE("append_durable and remove_durable") {
  test::TempDir dir;
  const fs::path p = dir.path() / "log";
  write_file_atomic(p, as_bytes("a\n"));
  append_durable(p, as_bytes("b\n"));
  CHECK(text_of(p) == "a\nb\n");
  remove_durable(p);
  CHECK_FALSE(fs::exists(p));
  CHECK_NOTHROW(remove_durable(p));
}

}  // TEST_SUITE
