#include "ransim/bytes.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "ransim/error.hpp"

namespace ransim {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::usage: return "usage";
    case Errc::consent: return "consent";
    case Errc::refused: return "refused";
    case Errc::key_missing: return "key_missing";
    case Errc::wrong_key: return "wrong_key";
    case Errc::key_format: return "key_format";
    case Errc::parse: return "parse";
    case Errc::version: return "version";
    case Errc::format: return "format";
    case Errc::auth: return "auth";
    case Errc::unwrap: return "unwrap";
    case Errc::io: return "io";
    case Errc::not_found: return "not_found";
    case Errc::duplicate_entry: return "duplicate_entry";
    case Errc::sandbox_mismatch: return "sandbox_mismatch";
    case Errc::escrow_exists: return "escrow_exists";
    case Errc::cap_exceeded: return "cap_exceeded";
    case Errc::entropy: return "entropy";
  }
  return "unknown";
}

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string encode_block(ByteView data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  if (!data.empty()) {
    EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                    static_cast<int>(data.size()));
  }
  return out;
}

// 0..63 for alphabet members, -1 otherwise.
int b64_value(char c, bool url_safe) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == (url_safe ? '-' : '+')) return 62;
  if (c == (url_safe ? '_' : '/')) return 63;
  return -1;
}

Bytes decode_b64(std::string_view text, bool url_safe) {
  if (text.size() % 4 != 0) {
    throw Error(Errc::parse, "base64 length " + std::to_string(text.size()) +
                                 " is not a multiple of 4 (truncated at byte offset " +
                                 std::to_string(text.size()) + ")");
  }
  Bytes out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    int v[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=' && last && j >= 2) {
        v[j] = 0;
        ++pad;
        continue;
      }
      v[j] = pad ? -1 : b64_value(c, url_safe);
      if (v[j] < 0) {
        throw Error(Errc::parse, "invalid base64 character at byte offset " + std::to_string(i + j));
      }
    }
    if (pad == 1 && text[i + 3] != '=') {
      throw Error(Errc::parse, "invalid base64 padding at byte offset " + std::to_string(i + 2));
    }
    const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
    if ((pad == 1 && (n & 0xff)) || (pad == 2 && (n & 0xffff))) {
      throw Error(Errc::parse, "non-canonical base64 tail at byte offset " + std::to_string(i));
    }
  }
  return out;
}

}  // namespace

std::string to_hex(ByteView data) {
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0xf]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(Errc::parse, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::parse, "invalid hex digit at offset " + std::to_string(2 * i));
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

std::string base64url_encode(ByteView data) {
  std::string s = encode_block(data);
  for (auto& c : s) {
    if (c == '+') c = '-';
    else if (c == '/') c = '_';
  }
  return s;
}

Bytes base64url_decode(std::string_view text) { return decode_b64(text, true); }

std::string base64_encode(ByteView data) { return encode_block(data); }

Bytes base64_decode(std::string_view text) { return decode_b64(text, false); }

std::array<std::uint8_t, 32> sha256(ByteView data) {
  std::array<std::uint8_t, 32> digest{};
  SHA256(data.data(), data.size(), digest.data());
  return digest;
}

std::string sha256_hex(ByteView data) { return to_hex(sha256(data)); }

void secure_random(std::span<std::uint8_t> out) {
  if (out.empty()) return;
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
    throw Error(Errc::entropy, "secure random source failed");
  }
}

Bytes read_file(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    if (errno == ENOENT) throw Error(Errc::not_found, "no such file: " + path.string());
    throw Error(Errc::io, "cannot open " + path.string() + ": " + std::strerror(errno));
  }
  Bytes data;
  struct stat st {};
  if (::fstat(fd, &st) == 0 && st.st_size > 0) data.reserve(static_cast<std::size_t>(st.st_size));
  std::uint8_t buf[1 << 16];
  for (;;) {
    const ssize_t n = ::read(fd, buf, sizeof buf);
    if (n == 0) break;
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw Error(Errc::io, "read failed on " + path.string() + ": " + std::strerror(err));
    }
    data.insert(data.end(), buf, buf + n);
  }
  ::close(fd);
  return data;
}

}  // namespace ransim
