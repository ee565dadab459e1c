#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ransim {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::string to_hex(ByteView data);
/// Throws Errc::parse on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

/// URL-safe alphabet with standard '=' padding.
std::string base64url_encode(ByteView data);
/// Strict decoder: rejects missing padding, bad characters and non-canonical trailing bits.
Bytes base64url_decode(std::string_view text);

/// Standard alphabet, used for PEM bodies.
std::string base64_encode(ByteView data);
/// Reports the byte offset (into `text`) of the first invalid character.
Bytes base64_decode(std::string_view text);

std::array<std::uint8_t, 32> sha256(ByteView data);
std::string sha256_hex(ByteView data);

/// Fills `out` from the OS CSPRNG. Throws Errc::entropy on failure.
void secure_random(std::span<std::uint8_t> out);

Bytes read_file(const std::filesystem::path& path);

}  // namespace ransim
