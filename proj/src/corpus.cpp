#include "ransim/corpus.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <json.hpp>
#include <random>

#include "ransim/atomic_file.hpp"
#include "ransim/error.hpp"

namespace fs = std::filesystem;

namespace ransim {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 5> kDecoyExtensions = {"zip", "bin", "pdf", "png", "mp3"};

constexpr std::array<std::string_view, 48> kWords = {
    "ransom",   "sandbox",  "escrow",  "cipher",   "lecture", "student", "network", "analysis",
    "entropy",  "detector", "archive", "quarter",  "budget",  "review",  "meeting", "project",
    "the",      "and",      "of",      "to",       "in",      "for",     "with",    "on",
    "report",   "summary",  "policy",  "incident", "backup",  "restore", "offline", "recovery",
    "invoice",  "customer", "account", "balance",  "update",  "version", "release", "schedule",
    "research", "dataset",  "sample",  "control",  "signal",  "vector",  "metric",  "window"};

// Deterministic per-file generator: mt19937_64 output is fixed by the standard.
class Generator {
 public:
  Generator(std::uint64_t seed, std::uint64_t index) : rng_(seed ^ (0x9E3779B97F4A7C15ull * (index + 1))) {}

  std::uint64_t next() { return rng_(); }
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  void fill_random(Bytes& out, std::size_t n) {
    while (n > 0) {
      std::uint64_t v = next();
      for (int b = 0; b < 8 && n > 0; ++b, --n) {
        out.push_back(static_cast<std::uint8_t>(v));
        v >>= 8;
      }
    }
  }

  void append(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

  void fill_words(Bytes& out, std::size_t n) {
    std::size_t col = 0;
    while (out.size() < n) {
      const auto w = kWords[below(kWords.size())];
      append(out, w);
      col += w.size() + 1;
      if (col > 72) {
        out.push_back('\n');
        col = 0;
      } else {
        out.push_back(' ');
      }
    }
  }

 private:
  std::mt19937_64 rng_;
};

Bytes generate_content(const std::string& ext, std::uint64_t size, Generator& gen) {
  Bytes out;
  out.reserve(size + 96);
  if (ext == "txt") {
    gen.fill_words(out, size);
  } else if (ext == "doc") {
    gen.append(out, "SIMULATION DOCUMENT\n\n");
    gen.fill_words(out, size);
  } else if (ext == "csv") {
    gen.append(out, "id,account,amount,region,note\n");
    std::uint64_t row = 0;
    while (out.size() < size) {
      const std::string line = std::to_string(++row) + ",ACC" + std::to_string(gen.below(100000)) + "," +
                               std::to_string(gen.below(1000000) / 100.0).substr(0, 8) + ",R" +
                               std::to_string(gen.below(12)) + "," +
                               std::string(kWords[gen.below(kWords.size())]) + "\n";
      gen.append(out, line);
    }
  } else if (ext == "jpg") {
    // JPEG SOI/APP0 prefix, incompressible body, EOI suffix.
    const std::array<std::uint8_t, 4> soi = {0xFF, 0xD8, 0xFF, 0xE0};
    out.insert(out.end(), soi.begin(), soi.end());
    if (size > 6) gen.fill_random(out, size - 6);
    out.push_back(0xFF);
    out.push_back(0xD9);
  } else {
    gen.fill_random(out, size);
  }
  out.resize(size);
  return out;
}

}  // namespace

ExtensionMix parse_mix(std::string_view spec) {
  ExtensionMix mix;
  const auto whitelist = default_whitelist();
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t end = std::min(spec.find(',', pos), spec.size());
    const auto part = spec.substr(pos, end - pos);
    pos = end + 1;
    if (part.empty()) continue;
    const auto colon = part.find(':');
    std::string ext(part.substr(0, colon));
    if (!ext.empty() && ext.front() == '.') ext.erase(0, 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    double weight = 1;
    if (colon != std::string_view::npos) {
      try {
        weight = std::stod(std::string(part.substr(colon + 1)));
      } catch (const std::exception&) {
        throw Error(Errc::usage, "bad weight in mix '" + std::string(part) + "'");
      }
    }
    if (!whitelist.contains("." + ext)) {
      throw Error(Errc::usage, "mix extension '" + ext + "' is not whitelisted");
    }
    if (!(weight > 0) || !std::isfinite(weight)) throw Error(Errc::usage, "mix weights must be positive");
    mix.emplace_back(ext, weight);
  }
  if (mix.empty()) throw Error(Errc::usage, "empty mix");
  return mix;
}

std::uint64_t decoy_count(std::uint64_t files, double fraction) {
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(files) * fraction));
}

CorpusIndex seed_corpus(const SandboxConfig& cfg, const CorpusSpec& spec) {
  const std::uint64_t decoys = decoy_count(spec.files, spec.decoy_fraction);
  const std::uint64_t total_files = spec.files + decoys;
  if (total_files > cfg.max_files) {
    throw Error(Errc::cap_exceeded, std::to_string(total_files) + " files exceeds the cap of " +
                                        std::to_string(cfg.max_files));
  }
  if (spec.total_bytes > cfg.max_total_bytes) {
    throw Error(Errc::cap_exceeded, std::to_string(spec.total_bytes) + " bytes exceeds the cap of " +
                                        std::to_string(cfg.max_total_bytes));
  }
  if (spec.mix.empty()) throw Error(Errc::usage, "empty mix");

  // Sizes: weights in [0.5, 1.5), scaled to sum to exactly total_bytes.
  std::vector<std::uint64_t> sizes(total_files, 0);
  if (total_files > 0) {
    Generator sizer(spec.seed, ~0ull);
    std::vector<double> w(total_files);
    double sum = 0;
    for (auto& x : w) {
      x = 0.5 + static_cast<double>(sizer.next() >> 11) / 9007199254740992.0;
      sum += x;
    }
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < total_files; ++i) {
      sizes[i] = static_cast<std::uint64_t>(std::floor(static_cast<double>(spec.total_bytes) * w[i] / sum));
      assigned += sizes[i];
    }
    sizes.back() += spec.total_bytes - assigned;
    for (auto s : sizes) {
      if (s > cfg.max_file_bytes) {
        throw Error(Errc::cap_exceeded, "a generated file would exceed the per-file size cap");
      }
    }
  }

  // Extension per whitelisted file by cumulative weight, so proportions are exact.
  double weight_sum = 0;
  for (const auto& [_, w] : spec.mix) weight_sum += w;
  auto ext_for = [&](std::uint64_t i) {
    const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(spec.files) * weight_sum;
    double acc = 0;
    for (const auto& [ext, w] : spec.mix) {
      acc += w;
      if (x < acc) return ext;
    }
    return spec.mix.back().first;
  };

  CorpusIndex index;
  index.seed = spec.seed;
  for (std::uint64_t i = 0; i < total_files; ++i) {
    const bool decoy = i >= spec.files;
    char name[64];
    std::string ext;
    fs::path rel;
    if (!decoy) {
      ext = ext_for(i);
      std::snprintf(name, sizeof name, "file_%04llu.%s", static_cast<unsigned long long>(i), ext.c_str());
      char dir[32];
      std::snprintf(dir, sizeof dir, "d%02llu", static_cast<unsigned long long>(i / 10));
      rel = fs::path(kCorpusDir) / dir / name;
    } else {
      const std::uint64_t d = i - spec.files;
      ext = kDecoyExtensions[d % kDecoyExtensions.size()];
      std::snprintf(name, sizeof name, "decoy_%03llu.%s", static_cast<unsigned long long>(d), ext.c_str());
      rel = fs::path(kCorpusDir) / "decoys" / name;
    }
    const fs::path full = cfg.root / rel;
    fs::create_directories(full.parent_path());
    Generator gen(spec.seed, i);
    const Bytes content = generate_content(ext, sizes[i], gen);
    write_file_atomic(full, content);
    index.files.push_back({rel.generic_string(), content.size(), sha256_hex(content), !decoy});
  }

  json j;
  j["seed"] = index.seed;
  j["files"] = json::array();
  for (const auto& f : index.files) {
    j["files"].push_back(
        {{"relative_path", f.relative_path}, {"size", f.size}, {"sha256", f.sha256}, {"whitelisted", f.whitelisted}});
  }
  write_file_atomic(cfg.root / kCorpusIndexName, as_bytes(j.dump(1) + "\n"));
  return index;
}

CorpusIndex load_corpus_index(const fs::path& path) {
  const Bytes raw = read_file(path);
  try {
    const json j = json::parse(raw.begin(), raw.end());
    CorpusIndex index;
    index.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& f : j.at("files")) {
      index.files.push_back({f.at("relative_path").get<std::string>(), f.at("size").get<std::uint64_t>(),
                             f.at("sha256").get<std::string>(), f.at("whitelisted").get<bool>()});
    }
    return index;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
}

}  // namespace ransim
