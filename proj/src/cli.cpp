#include "ransim/cli.hpp"

#include <signal.h>
#include <sys/stat.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "ransim/corpus.hpp"
#include "ransim/engine.hpp"
#include "ransim/service.hpp"

namespace fs = std::filesystem;

namespace ransim::cli {

using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string sandbox;
  bool json = false;
};

struct EngineFlags {
  bool serial = false;
  int threads = 0;

  EngineOptions options() const {
    EngineOptions o;
    o.mode = serial ? ExecutionMode::serial : ExecutionMode::parallel;
    o.threads = threads;
    return o;
  }
};

void add_engine_flags(CLI::App* cmd, EngineFlags& flags) {
  cmd->add_flag("--serial", flags.serial, "Process files one at a time (reference path)");
  cmd->add_option("--threads", flags.threads, "Worker threads for the parallel path (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
}

SandboxConfig require_sandbox(const GlobalOptions& g) {
  if (g.sandbox.empty()) throw Error(Errc::usage, "--sandbox (or RANSIM_SANDBOX) is required");
  return validate_sandbox(g.sandbox);
}

// Progress printer: one line per ~10% on stderr.
std::function<void(std::uint64_t, std::uint64_t)> progress_printer(std::ostream& err, const char* verb) {
  auto last = std::make_shared<std::uint64_t>(0);
  return [&err, verb, last](std::uint64_t done, std::uint64_t total) {
    if (total == 0) return;
    const std::uint64_t decile = done * 10 / total;
    if (decile != *last || done == total) {
      *last = decile;
      err << verb << " " << done << "/" << total << "\n";
    }
  };
}

void emit_report(std::ostream& out, const GlobalOptions& g, const std::string& json_text,
                 const std::string& human) {
  if (g.json) {
    out << json_text << "\n";
  } else {
    out << human;
  }
}

std::string human_failures(const std::vector<FileFailure>& failures) {
  std::string s;
  for (const auto& f : failures) s += "  failed: " + f.relative_path + " (" + f.error + ")\n";
  return s;
}

int cmd_init(const GlobalOptions& g, std::ostream& out) {
  if (g.sandbox.empty()) throw Error(Errc::usage, "--sandbox (or RANSIM_SANDBOX) is required");
  const auto id = init_sandbox(g.sandbox);
  const auto cfg = validate_sandbox(g.sandbox);
  emit_report(out, g, json({{"sandbox", cfg.root.string()}, {"sandbox_id", id}}).dump(),
              "sandbox " + cfg.root.string() + " ready (id " + id + ")\n");
  return kOk;
}

int cmd_seed(const GlobalOptions& g, std::uint64_t files, const std::string& total_bytes,
             const std::string& mix, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const auto cfg = require_sandbox(g);
  CorpusSpec spec;
  spec.files = files;
  spec.total_bytes = parse_size(total_bytes);
  spec.mix = parse_mix(mix);
  spec.seed = seed;
  err << "seeding " << files << " files (+" << decoy_count(files, spec.decoy_fraction) << " decoys), "
      << spec.total_bytes << " bytes\n";
  const auto index = seed_corpus(cfg, spec);
  std::uint64_t total = 0;
  std::uint64_t whitelisted = 0;
  for (const auto& f : index.files) {
    total += f.size;
    whitelisted += f.whitelisted;
  }
  emit_report(out, g,
              json({{"files", index.files.size()},
                    {"whitelisted", whitelisted},
                    {"decoys", index.files.size() - whitelisted},
                    {"total_bytes", total},
                    {"seed", seed},
                    {"index", (cfg.root / kCorpusIndexName).string()}})
                  .dump(),
              "seeded " + std::to_string(index.files.size()) + " files (" + std::to_string(whitelisted) +
                  " targets), " + std::to_string(total) + " bytes\n");
  return kOk;
}

int cmd_keygen(const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const auto cfg = require_sandbox(g);
  struct stat st {};
  if (::lstat(cfg.escrow_path.c_str(), &st) == 0) {
    throw Error(Errc::escrow_exists, "escrow key already present at " + cfg.escrow_path.string());
  }
  err << "generating RSA-2048 key pair\n";
  const KeyPair kp = generate_keypair();
  const auto path = escrow_private_key(kp, cfg);
  EventLog log(cfg.events_path(), [&err](const std::string& m) { err << "warning: " << m << "\n"; });
  log.emit(EventKind::key_escrowed, std::string(kEscrowFileName), std::nullopt, "private key escrowed");
  const std::string fingerprint = sha256_hex(kp.modulus()).substr(0, 16);
  emit_report(out, g, json({{"escrow_path", path.string()}, {"modulus_bits", kp.modulus_bits()},
                            {"fingerprint", fingerprint}})
                          .dump(),
              "private key escrowed at " + path.string() + " (fingerprint " + fingerprint + ")\n");
  return kOk;
}

int cmd_encrypt(const GlobalOptions& g, const EngineFlags& flags, std::optional<std::uint64_t> max_files,
                std::optional<std::string> max_bytes, std::ostream& out, std::ostream& err) {
  auto cfg = require_sandbox(g);
  if (max_files) cfg.max_files = std::min(cfg.max_files, *max_files);
  if (max_bytes) cfg.max_total_bytes = std::min(cfg.max_total_bytes, parse_size(*max_bytes));
  struct stat st {};
  if (::lstat(cfg.escrow_path.c_str(), &st) != 0) {
    throw Error(Errc::key_missing, "no escrowed key at " + cfg.escrow_path.string() + "; run keygen first");
  }
  const KeyPair recipient = load_private_key(cfg.escrow_path).public_only();

  Manifest manifest(cfg.sandbox_id);
  if (::lstat(cfg.manifest_path().c_str(), &st) == 0) {
    std::string warning;
    manifest = load_manifest(cfg.manifest_path(), &warning);
    if (!warning.empty()) err << "warning: " << warning << "\n";
  }
  EventLog log(cfg.events_path(), [&err](const std::string& m) { err << "warning: " << m << "\n"; });
  auto opts = flags.options();
  opts.on_progress = progress_printer(err, "encrypted");
  const auto report = recursive_encrypt(cfg, recipient, manifest, log, opts);

  char rate[64];
  std::snprintf(rate, sizeof rate, "%.1f MB/s",
                report.duration > 0 ? static_cast<double>(report.bytes_processed) / 1e6 / report.duration : 0.0);
  emit_report(out, g, to_json(report),
              "encrypted " + std::to_string(report.files_encrypted) + " of " + std::to_string(report.files_scanned) +
                  " files (" + std::to_string(report.files_skipped) + " skipped), " +
                  std::to_string(report.bytes_processed) + " bytes in " + std::to_string(report.duration) +
                  " s (" + rate + ")" + (report.cap_halted ? ", halted at cap" : "") + "\n" +
                  human_failures(report.failures));
  if (report.cap_halted) return kCapHalt;
  return report.failures.empty() ? kOk : kPartial;
}

int cmd_decrypt(const GlobalOptions& g, const EngineFlags& flags, const std::string& key_path,
                std::ostream& out, std::ostream& err) {
  const auto cfg = require_sandbox(g);
  const fs::path key = key_path.empty() ? cfg.escrow_path : fs::path(key_path);
  struct stat st {};
  if (::stat(key.c_str(), &st) != 0) throw Error(Errc::key_missing, "key not found: " + key.string());
  if (::lstat(cfg.manifest_path().c_str(), &st) != 0) {
    throw Error(Errc::not_found, "no " + std::string(kManifestFileName) + " in " + cfg.root.string() +
                                     "; nothing to decrypt");
  }
  std::string warning;
  Manifest manifest = load_manifest(cfg.manifest_path(), &warning);
  if (!warning.empty()) err << "warning: " << warning << "\n";
  const KeyPair kp = load_private_key(key);
  check_key_matches(kp, manifest);

  EventLog log(cfg.events_path(), [&err](const std::string& m) { err << "warning: " << m << "\n"; });
  auto opts = flags.options();
  opts.on_progress = progress_printer(err, "restored");
  const auto report = decrypt_all(cfg, kp, manifest, log, opts);
  char rate[64];
  std::snprintf(rate, sizeof rate, "%.1f MB/s",
                report.duration > 0 ? static_cast<double>(report.bytes_restored) / 1e6 / report.duration : 0.0);
  emit_report(out, g, to_json(report),
              "restored " + std::to_string(report.files_restored) + " files (" +
                  std::to_string(report.checksum_matches) + " checksums verified) in " +
                  std::to_string(report.duration) + " s (" + rate + ")\n" + human_failures(report.failures));
  return report.failures.empty() ? kOk : kPartial;
}

int cmd_verify(const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const auto cfg = require_sandbox(g);
  std::optional<Manifest> manifest;
  struct stat st {};
  if (::lstat(cfg.manifest_path().c_str(), &st) == 0) {
    std::string warning;
    manifest = load_manifest(cfg.manifest_path(), &warning);
    if (!warning.empty()) err << "warning: " << warning << "\n";
  }
  const auto report = verify_corpus(cfg, manifest ? &*manifest : nullptr);
  std::string human;
  if (report.manifest_present) {
    human = "locked corpus: " + std::to_string(report.entries_verified) + "/" + std::to_string(report.entries) +
            " tokens verified\n";
  } else {
    human = "unlocked corpus: " + std::to_string(report.residual_tokens) + " residual tokens, " +
            std::to_string(report.stray_temp_files) + " stray temp files\n";
  }
  human += human_failures(report.failures);
  human += report.ok() ? "OK\n" : "NOT OK\n";
  emit_report(out, g, to_json(report), human);
  return report.ok() ? kOk : kPartial;
}

int cmd_events(const GlobalOptions& g, std::uint64_t since, std::ostream& out, std::ostream& err) {
  const auto cfg = require_sandbox(g);
  std::vector<SimEvent> events;
  struct stat st {};
  if (::lstat(cfg.events_path().c_str(), &st) == 0) {
    std::string warning;
    events = read_events(cfg.events_path(), &warning);
    if (!warning.empty()) err << "warning: " << warning << "\n";
  }
  if (g.json) {
    json arr = json::array();
    for (const auto& e : events) {
      if (e.seq > since) arr.push_back(json::parse(event_to_json(e)));
    }
    out << json({{"events", arr}}).dump() << "\n";
  } else {
    for (const auto& e : events) {
      if (e.seq > since) out << event_to_json(e) << "\n";
    }
  }
  return kOk;
}

int cmd_serve(const GlobalOptions& g, const EngineFlags& flags, const std::string& bind, int port,
              bool allow_non_loopback, const std::string& note_file, double deadline_hours,
              const std::string& ui_dir, std::ostream& out, std::ostream& err) {
  const auto cfg = require_sandbox(g);
  ServiceOptions opts;
  opts.bind_address = bind;
  opts.port = port;
  opts.allow_non_loopback = allow_non_loopback;
  opts.engine = flags.options();
  opts.ui_dir = ui_dir;
  if (!note_file.empty()) {
    const Bytes raw = read_file(note_file);
    opts.note_template.assign(raw.begin(), raw.end());
  }
  if (deadline_hours > 0) {
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    opts.deadline = now + static_cast<std::int64_t>(deadline_hours * 3600);
  }

  // Block the termination signals before any service thread exists, then wait for one here.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ControlService service(cfg, opts);
  const int bound = service.start();
  err << "serving " << cfg.root.string() << " on http://" << bind << ":" << bound << "/ (Ctrl-C to stop)\n";
  if (g.json) out << json({{"bind", bind}, {"port", bound}}).dump() << "\n" << std::flush;
  int sig = 0;
  sigwait(&signals, &sig);
  err << "stopping\n";
  service.stop();
  service.wait_for_unlock();
  return kOk;
}

}  // namespace

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::consent:
    case Errc::refused:
    case Errc::sandbox_mismatch:
      return kRefused;
    case Errc::key_missing:
    case Errc::wrong_key:
    case Errc::key_format:
    case Errc::unwrap:
    case Errc::escrow_exists:
      return kKeyError;
    case Errc::usage:
    case Errc::parse:
    case Errc::version:
    case Errc::not_found:
    case Errc::cap_exceeded:
      return kUsage;
    case Errc::format:
    case Errc::auth:
    case Errc::io:
    case Errc::duplicate_entry:
    case Errc::entropy:
      return kPartial;
  }
  return kPartial;
}

std::uint64_t parse_size(const std::string& text) {
  std::size_t pos = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw Error(Errc::usage, "bad size '" + text + "'");
  }
  std::string suffix = text.substr(pos);
  for (auto& c : suffix) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  static const std::vector<std::pair<std::string, std::uint64_t>> units = {
      {"", 1},           {"B", 1},          {"KB", 1000},         {"MB", 1000'000},
      {"GB", 1000'000'000}, {"KIB", 1ull << 10}, {"MIB", 1ull << 20}, {"GIB", 1ull << 30}};
  for (const auto& [name, mult] : units) {
    if (suffix == name) return value * mult;
  }
  throw Error(Errc::usage, "bad size suffix in '" + text + "'");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ransim: reversible ransomware-behavior simulator for sandboxed training corpora"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--sandbox", g.sandbox, "Sandbox root directory")->envname("RANSIM_SANDBOX");
  app.add_flag("--json", g.json, "Print a machine-readable JSON report on stdout");

  auto* init = app.add_subcommand("init-sandbox", "Create a sandbox directory and its consent marker");

  auto* seed = app.add_subcommand("seed-corpus", "Generate a deterministic training corpus");
  std::uint64_t seed_files = 100;
  std::string seed_bytes = "500MB";
  std::string seed_mix = "txt:1,jpg:1,csv:1,doc:1";
  std::uint64_t seed_value = 1;
  seed->add_option("--files", seed_files, "Number of whitelisted files")->capture_default_str();
  seed->add_option("--total-bytes", seed_bytes, "Approximate corpus size (e.g. 500MB)")->capture_default_str();
  seed->add_option("--mix", seed_mix, "Extension weights, e.g. txt:1,jpg:1,csv:1,doc:1")->capture_default_str();
  seed->add_option("--seed", seed_value, "Generator seed")->capture_default_str();

  auto* keygen = app.add_subcommand("keygen", "Generate an RSA-2048 key pair and escrow key.pem");

  EngineFlags enc_flags;
  std::optional<std::uint64_t> max_files;
  std::optional<std::string> max_bytes;
  auto* encrypt = app.add_subcommand("encrypt", "Encrypt every whitelisted file in the sandbox");
  add_engine_flags(encrypt, enc_flags);
  encrypt->add_option("--max-files", max_files, "Lower the file-count cap");
  encrypt->add_option("--max-total-bytes", max_bytes, "Lower the byte cap");

  EngineFlags dec_flags;
  std::string key_path;
  auto* decrypt = app.add_subcommand("decrypt", "Restore all files using the private key");
  add_engine_flags(decrypt, dec_flags);
  decrypt->add_option("--key", key_path, "Private key file (default: escrowed key.pem)");

  auto* verify = app.add_subcommand("verify", "Check a locked or unlocked corpus for consistency");

  std::uint64_t since = 0;
  auto* events = app.add_subcommand("events", "Print the telemetry log");
  events->add_option("--since", since, "Only events with a greater sequence number");

  EngineFlags serve_flags;
  std::string bind = "127.0.0.1";
  int port = kDefaultServicePort;
  bool allow_non_loopback = false;
  std::string note_file;
  double deadline_hours = 72;
  std::string ui_dir;
  auto* serve = app.add_subcommand("serve", "Run the local control service and ransom-note UI");
  add_engine_flags(serve, serve_flags);
  serve->add_option("--bind", bind, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "TCP port")->capture_default_str();
  serve->add_flag("--allow-non-loopback", allow_non_loopback, "Permit binding a non-loopback address");
  serve->add_option("--note-file", note_file, "Ransom note template file");
  serve->add_option("--deadline-hours", deadline_hours, "Cosmetic countdown length (0 disables)")
      ->capture_default_str();
  serve->add_option("--ui-dir", ui_dir, "Directory holding the static UI bundle");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (init->parsed()) return cmd_init(g, out);
    if (seed->parsed()) return cmd_seed(g, seed_files, seed_bytes, seed_mix, seed_value, out, err);
    if (keygen->parsed()) return cmd_keygen(g, out, err);
    if (encrypt->parsed()) return cmd_encrypt(g, enc_flags, max_files, max_bytes, out, err);
    if (decrypt->parsed()) return cmd_decrypt(g, dec_flags, key_path, out, err);
    if (verify->parsed()) return cmd_verify(g, out, err);
    if (events->parsed()) return cmd_events(g, since, out, err);
    if (serve->parsed()) {
      return cmd_serve(g, serve_flags, bind, port, allow_non_loopback, note_file, deadline_hours, ui_dir, out,
                       err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (g.json) out << json({{"error", to_string(e.code())}, {"detail", e.what()}}).dump() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    if (g.json) out << json({{"error", "internal"}, {"detail", e.what()}}).dump() << "\n";
    return kPartial;
  }
  return kUsage;
}

}  // namespace ransim::cli
