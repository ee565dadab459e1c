#include "ransim/manifest.hpp"

#include <json.hpp>

#include <optional>

#include "ransim/atomic_file.hpp"
#include "ransim/error.hpp"
#include "ransim/fault.hpp"

namespace ransim {

using nlohmann::json;

namespace {

bool is_lower_hex(std::string_view s, std::size_t len) {
  if (s.size() != len) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

[[noreturn]] void line_error(std::size_t line, const std::string& why) {
  throw Error(Errc::parse, "keys.dat line " + std::to_string(line) + ": " + why);
}

std::string parse_header(std::string_view line_text, std::size_t line) {
  json j;
  try {
    j = json::parse(line_text);
  } catch (const json::exception& e) {
    line_error(line, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer()) {
    line_error(line, "header lacks integer 'version'");
  }
  if (j["version"].get<int>() != kManifestVersion) {
    throw Error(Errc::version, "unsupported keys.dat version " + j["version"].dump());
  }
  if (!j.contains("sandbox_id") || !j["sandbox_id"].is_string() ||
      !is_lower_hex(j["sandbox_id"].get<std::string>(), 32)) {
    line_error(line, "header lacks 32-hex-digit 'sandbox_id'");
  }
  return j["sandbox_id"].get<std::string>();
}

ManifestEntry parse_entry(std::string_view line_text, std::size_t line) {
  ManifestEntry e;
  try {
    const json j = json::parse(line_text);
    e.relative_path = j.at("relative_path").get<std::string>();
    const auto wrapped = base64url_decode(j.at("wrapped_key").get<std::string>());
    if (wrapped.size() != kWrappedKeySize) {
      line_error(line, "wrapped_key decodes to " + std::to_string(wrapped.size()) + " bytes, expected 256");
    }
    e.wrapped_key = WrappedKey::from_bytes(wrapped);
    e.original_size = j.at("original_size").get<std::uint64_t>();
    e.plaintext_checksum = j.at("plaintext_checksum").get<std::string>();
    e.encrypted_at = j.at("encrypted_at").get<std::int64_t>();
  } catch (const json::exception& ex) {
    line_error(line, ex.what());
  } catch (const Error& ex) {
    if (ex.code() == Errc::parse && std::string_view(ex.what()).starts_with("keys.dat line")) throw;
    line_error(line, ex.what());
  }
  try {
    validate_entry(e);
  } catch (const Error& ex) {
    line_error(line, ex.what());
  }
  return e;
}

}  // namespace

bool is_clean_relative_path(std::string_view path) {
  if (path.empty() || path.front() == '/' || path.back() == '/') return false;
  if (path.find('\0') != std::string_view::npos) return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t end = std::min(path.find('/', start), path.size());
    const auto part = path.substr(start, end - start);
    if (part.empty() || part == "." || part == "..") return false;
    start = end + 1;
  }
  return true;
}

void validate_entry(const ManifestEntry& e) {
  if (!is_clean_relative_path(e.relative_path)) {
    throw Error(Errc::parse, "relative_path '" + e.relative_path + "' is not a clean relative path");
  }
  if (!is_lower_hex(e.plaintext_checksum, 64)) {
    throw Error(Errc::parse, "plaintext_checksum must be 64 lowercase hex characters");
  }
}

Manifest::Manifest(std::string sandbox_id) : sandbox_id_(std::move(sandbox_id)) {}

void Manifest::record(ManifestEntry e) {
  validate_entry(e);
  if (index_.contains(e.relative_path)) {
    throw Error(Errc::duplicate_entry, "already recorded: " + e.relative_path);
  }
  index_.emplace(e.relative_path, entries_.size());
  entries_.push_back(std::move(e));
}

const ManifestEntry* Manifest::lookup(std::string_view relative_path) const {
  const auto it = index_.find(std::string(relative_path));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

void Manifest::remove(const std::unordered_set<std::string>& relative_paths) {
  std::erase_if(entries_, [&](const ManifestEntry& e) { return relative_paths.contains(e.relative_path); });
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].relative_path, i);
}

std::string serialize_header(const Manifest& m) {
  json j;
  j["version"] = m.version();
  j["sandbox_id"] = m.sandbox_id();
  return j.dump() + "\n";
}

std::string serialize_entry(const ManifestEntry& e) {
  json j;
  j["relative_path"] = e.relative_path;
  j["wrapped_key"] = base64url_encode(e.wrapped_key.ciphertext);
  j["original_size"] = e.original_size;
  j["plaintext_checksum"] = e.plaintext_checksum;
  j["encrypted_at"] = e.encrypted_at;
  return j.dump() + "\n";
}

std::string serialize_manifest(const Manifest& m) {
  std::string out = serialize_header(m);
  for (const auto& e : m.entries()) out += serialize_entry(e);
  return out;
}

Manifest parse_manifest(std::string_view text, std::string* warning) {
  std::size_t pos = 0;
  std::size_t line = 0;
  std::optional<Manifest> m;
  while (pos < text.size()) {
    ++line;
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      // Torn append: the writer always emits whole LF-terminated lines.
      if (!m) line_error(line, "truncated header");
      if (warning) *warning = "dropped unterminated final line " + std::to_string(line);
      break;
    }
    const auto line_text = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!m) {
      m.emplace(parse_header(line_text, line));
      continue;
    }
    auto e = parse_entry(line_text, line);
    if (m->contains(e.relative_path)) line_error(line, "duplicate relative_path " + e.relative_path);
    m->record(std::move(e));
  }
  if (!m) throw Error(Errc::parse, "keys.dat line 1: missing header");
  return std::move(*m);
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    const auto raw = read_file(path);
    const std::string_view text(reinterpret_cast<const char*>(raw.data()), raw.size());
    const auto nl = text.find('\n');
    const auto existing = parse_header(text.substr(0, nl), 1);
    if (existing != m.sandbox_id()) {
      throw Error(Errc::sandbox_mismatch, "refusing to overwrite " + path.string() +
                                              ": it belongs to sandbox " + existing);
    }
  }
  const std::string text = serialize_manifest(m);
  AtomicFile f(path, 0600);
  f.write(as_bytes(text));
  f.sync();
  RANSIM_FAULT_POINT("manifest.temp_written");
  f.publish();
}

Manifest load_manifest(const std::filesystem::path& path, std::string* warning) {
  Bytes raw;
  try {
    raw = read_file(path);
  } catch (const Error& e) {
    if (e.code() == Errc::not_found) throw Error(Errc::not_found, "manifest not found: " + path.string());
    throw;
  }
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()), warning);
}

void append_manifest_entry(const std::filesystem::path& path, const ManifestEntry& e) {
  validate_entry(e);
  if (!std::filesystem::exists(path)) throw Error(Errc::not_found, "manifest not found: " + path.string());
  append_durable(path, as_bytes(serialize_entry(e)));
}

}  // namespace ransim
