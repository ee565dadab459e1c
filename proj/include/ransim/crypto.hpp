#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "ransim/bytes.hpp"

typedef struct evp_pkey_st EVP_PKEY;

namespace ransim {

inline constexpr std::size_t kModulusBits = 2048;
inline constexpr std::size_t kFileKeySize = 32;
inline constexpr std::size_t kWrappedKeySize = kModulusBits / 8;

inline constexpr std::uint8_t kTokenVersion = 0x80;
inline constexpr std::size_t kTokenHeaderSize = 1 + 8 + 16;  // version, timestamp, IV
inline constexpr std::size_t kTokenMacSize = 32;
inline constexpr std::size_t kTokenOverhead = kTokenHeaderSize + kTokenMacSize;  // 57

/// Sealed size for a plaintext of `n` bytes: PKCS#7 always adds 1..16 bytes.
constexpr std::size_t sealed_size(std::size_t n) { return kTokenOverhead + 16 * (n / 16 + 1); }

/// RSA-2048 key pair. The private half is optional; a public-only pair can
/// wrap but not unwrap. Copies share the underlying immutable key object.
class KeyPair {
 public:
  KeyPair() = default;

  bool has_private() const noexcept { return has_private_; }
  bool empty() const noexcept { return !pkey_; }
  std::size_t modulus_bits() const;
  Bytes modulus() const;
  Bytes public_exponent() const;

  /// Drops the private half.
  KeyPair public_only() const;
  std::string public_pem() const;

  /// Same public modulus and exponent.
  bool same_public(const KeyPair& other) const;

  EVP_PKEY* native() const noexcept { return pkey_.get(); }

  static KeyPair adopt(EVP_PKEY* pkey, bool has_private);

 private:
  std::shared_ptr<EVP_PKEY> pkey_;
  bool has_private_ = false;
};

/// 16 signing-key bytes followed by 16 encryption-key bytes. Wiped on destruction.
class FileKey {
 public:
  FileKey() = default;
  explicit FileKey(ByteView raw);
  FileKey(const FileKey&) = default;
  FileKey& operator=(const FileKey&) = default;
  ~FileKey();

  ByteView bytes() const noexcept { return bytes_; }
  ByteView signing_key() const noexcept { return ByteView(bytes_).first<16>(); }
  ByteView encryption_key() const noexcept { return ByteView(bytes_).last<16>(); }

  void wipe() noexcept;

  friend bool operator==(const FileKey& a, const FileKey& b) { return a.bytes_ == b.bytes_; }

 private:
  std::array<std::uint8_t, kFileKeySize> bytes_{};
};

struct WrappedKey {
  std::array<std::uint8_t, kWrappedKeySize> ciphertext{};

  /// Throws Errc::format unless `raw` is exactly 256 bytes.
  static WrappedKey from_bytes(ByteView raw);
  friend bool operator==(const WrappedKey&, const WrappedKey&) = default;
};

/// Raw Fernet token bytes: 0x80 | ts(8, BE) | IV(16) | AES-128-CBC ciphertext | HMAC-SHA256(32).
struct SealedToken {
  Bytes raw;

  std::uint64_t timestamp() const;
  ByteView iv() const;
  ByteView ciphertext() const;
  ByteView mac() const;
};

KeyPair generate_keypair();

/// Unencrypted PKCS#8, PEM framed, 64-column body, LF endings.
std::string serialize_private_key(const KeyPair& kp);
/// Throws Errc::key_format with the byte offset of the first problem.
KeyPair parse_private_key(std::string_view pem);
KeyPair load_private_key(const std::filesystem::path& path);

FileKey generate_file_key();

SealedToken seal(const FileKey& key, ByteView plaintext, std::uint64_t timestamp);
SealedToken seal(const FileKey& key, ByteView plaintext);

/// Structural checks only (length, version). Throws Errc::format.
void check_token_layout(ByteView raw);

/// Verifies the MAC before decrypting. MAC and padding failures both raise Errc::auth.
Bytes open(const FileKey& key, ByteView token);

WrappedKey wrap_key(const KeyPair& recipient, const FileKey& key);
FileKey unwrap_key(const KeyPair& recipient, const WrappedKey& wrapped);

#ifdef RANSIM_TEST_HOOKS
namespace testing {
/// Deterministic seal with caller-supplied IV.
SealedToken seal_with_iv(const FileKey& key, ByteView plaintext, std::uint64_t timestamp,
                         ByteView iv);
}  // namespace testing
#endif

}  // namespace ransim
