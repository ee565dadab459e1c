#pragma once

#include <stdexcept>
#include <string>

namespace ransim {

enum class Errc {
  usage,
  consent,           // sandbox marker missing or unreadable
  refused,           // root, home directory, or other refused target
  key_missing,       // private key file absent
  wrong_key,         // private key does not match the wrapped keys
  key_format,        // malformed key material
  parse,             // malformed input file (manifest, events, PEM)
  version,           // unsupported format version
  format,            // structurally invalid token or key blob
  auth,              // token MAC or padding failure
  unwrap,            // RSA-OAEP decryption failure
  io,
  not_found,
  duplicate_entry,
  sandbox_mismatch,  // manifest belongs to a different sandbox
  escrow_exists,
  cap_exceeded,
  entropy,
};

const char* to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ransim
