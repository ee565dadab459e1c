#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ransim/safety.hpp"

namespace ransim {

inline constexpr std::string_view kCorpusIndexName = "corpus-index.json";
inline constexpr std::string_view kCorpusDir = "corpus";

/// Extension (without dot) and relative weight.
using ExtensionMix = std::vector<std::pair<std::string, double>>;

/// "txt:1,jpg:1,csv:1,doc:1". Every extension must be on the default whitelist. Throws Errc::usage.
ExtensionMix parse_mix(std::string_view spec);

struct CorpusSpec {
  std::uint64_t files = 100;
  std::uint64_t total_bytes = 500'000'000;
  ExtensionMix mix = {{"txt", 1}, {"jpg", 1}, {"csv", 1}, {"doc", 1}};
  std::uint64_t seed = 1;
  double decoy_fraction = 0.10;
};

struct CorpusFile {
  std::string relative_path;
  std::uint64_t size = 0;
  std::string sha256;
  bool whitelisted = false;

  friend bool operator==(const CorpusFile&, const CorpusFile&) = default;
};

struct CorpusIndex {
  std::uint64_t seed = 0;
  std::vector<CorpusFile> files;
};

std::uint64_t decoy_count(std::uint64_t files, double fraction);

/// Writes the corpus under `<root>/corpus/` plus `<root>/corpus-index.json`.
/// Output is a pure function of the spec. Requests beyond the sandbox caps
/// throw Errc::cap_exceeded before anything is written.
CorpusIndex seed_corpus(const SandboxConfig& cfg, const CorpusSpec& spec);

CorpusIndex load_corpus_index(const std::filesystem::path& path);

}  // namespace ransim
