#pragma once

// Shared container convention for binary artifacts: one line of JSON header
// terminated by '\n', followed by little-endian float32 blocks. The header
// names the format, its version, the payload size, and the FNV-1a hash of the
// payload bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csgba/error.hpp"

namespace csgba {

static_assert(std::endian::native == std::endian::little,
              "artifact files are written as little-endian float32");

using json = nlohmann::json;

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// Incremental 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= kFnvPrime;
    }
  }
  void update(std::span<const float> v) { update(v.data(), v.size() * sizeof(float)); }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = kFnvOffset;
};

inline std::uint64_t fnv1a(const std::string& s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16) throw FormatError("malformed hash '" + s + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw FormatError("malformed hash '" + s + "'");
  }
  return v;
}

/// Stable fingerprint of a JSON value (keys are sorted by nlohmann::json).
inline std::string fingerprint(const json& j) { return hex64(fnv1a(j.dump())); }

struct ArtifactFile {
  json header;
  std::vector<float> payload;
};

inline void write_artifact(const std::string& path, json header, std::span<const float> payload) {
  Fnv1a h;
  h.update(payload);
  header["payload_floats"] = payload.size();
  header["hash"] = hex64(h.digest());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw Error("write to '" + path + "' failed");
}

/// Reads and integrity-checks an artifact. `format`/`version` must match the header.
inline ArtifactFile read_artifact(const std::string& path, const std::string& format, int version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw TruncatedFile(path + ": missing header");
  ArtifactFile f;
  try {
    f.header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path + ": unreadable header: " + e.what());
  }
  if (!f.header.is_object() || f.header.value("format", std::string()) != format) {
    throw FormatError(path + ": not a " + format + " file");
  }
  const int got = f.header.value("version", -1);
  if (got != version) {
    throw VersionMismatch(path + ": " + format + " version " + std::to_string(got) +
                          ", this build reads version " + std::to_string(version));
  }
  const auto n = f.header.at("payload_floats").get<std::size_t>();
  f.payload.resize(n);
  in.read(reinterpret_cast<char*>(f.payload.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float)) {
    throw TruncatedFile(path + ": payload truncated (expected " + std::to_string(n * sizeof(float)) +
                        " bytes, got " + std::to_string(in.gcount()) + ")");
  }
  Fnv1a h;
  h.update(f.payload);
  const std::uint64_t stated = parse_hex64(f.header.at("hash").get<std::string>());
  if (h.digest() != stated) {
    throw HashMismatch(path + ": content hash " + hex64(h.digest()) + " does not match header " +
                       hex64(stated));
  }
  return f;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace csgba
