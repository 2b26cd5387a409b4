#pragma once

// PTEN v1: bit-exact binary container for named fp32 tensors.
//
// Layout:
//   bytes 0..3    magic "PTEN"
//   bytes 4..7    u32 version (little endian) == 1
//   bytes 8..15   u64 manifest byte length (little endian)
//   ...           UTF-8 JSON manifest
//   (zero pad to the next 8-byte file offset)
//   blob          little-endian fp32 data; every tensor offset is a multiple
//                 of 8 relative to the blob start, gaps zero-filled
//   last 8 bytes  u64 FNV-1a digest of the whole blob region (little endian)
//
// The manifest carries {"format","version","tensors":[{name,shape,offset}]}
// plus caller-supplied entries (network spec, modality tag, ...); offsets are
// byte offsets into the blob. Full format notes live in docs/formats.md.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "distill/rng.hpp"
#include "distill/tensor.hpp"

namespace distill {

struct PtenError : std::runtime_error {
  enum class Kind {
    io,
    bad_magic,
    version_mismatch,
    truncated,
    digest_mismatch,
    bad_manifest,
  };
  PtenError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct PtenFile {
  nlohmann::json manifest;
  NamedTensors tensors;  // in manifest directory order

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw std::out_of_range("pten: no tensor named '" + name + "'");
  }
};

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t align8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }

}  // namespace detail

/// Serializes named tensors (fp64 in memory, fp32 on disk) plus extra
/// manifest entries. Serialization is canonical: the same inputs always
/// produce byte-identical files.
inline void save_pten(const std::string& path, const NamedTensors& tensors,
                      const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = extra;
  manifest["format"] = "PTEN";
  manifest["version"] = 1;

  // Blob layout: tensors in the given order, each offset 8-byte aligned.
  std::vector<std::uint8_t> blob;
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    blob.resize(detail::align8(blob.size()), 0);
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = blob.size();
    dir.push_back(std::move(entry));
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      detail::put_u32le(blob, bits);
    }
  }
  manifest["tensors"] = std::move(dir);

  const std::string mtext = manifest.dump();
  std::vector<std::uint8_t> file;
  file.reserve(16 + mtext.size() + blob.size() + 16);
  file.insert(file.end(), {'P', 'T', 'E', 'N'});
  detail::put_u32le(file, 1);
  detail::put_u64le(file, mtext.size());
  file.insert(file.end(), mtext.begin(), mtext.end());
  file.resize(detail::align8(file.size()), 0);
  file.insert(file.end(), blob.begin(), blob.end());
  detail::put_u64le(file, fnv1a64(blob.data(), blob.size()));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw PtenError(PtenError::Kind::io, "pten: cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(file.data()),
           static_cast<std::streamsize>(file.size()));
  if (!os) throw PtenError(PtenError::Kind::io, "pten: write failed for '" + path + "'");
}

inline PtenFile load_pten(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PtenError(PtenError::Kind::io, "pten: cannot open '" + path + "'");
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());

  if (file.size() < 16 || std::memcmp(file.data(), "PTEN", 4) != 0) {
    throw PtenError(PtenError::Kind::bad_magic,
                    "pten: '" + path + "' is not a PTEN file");
  }
  const std::uint32_t version = detail::get_u32le(file.data() + 4);
  if (version != 1) {
    throw PtenError(PtenError::Kind::version_mismatch,
                    "pten: unsupported version " + std::to_string(version) +
                        " in '" + path + "' (expected 1)");
  }
  const std::uint64_t mlen = detail::get_u64le(file.data() + 8);
  if (16 + mlen > file.size()) {
    throw PtenError(PtenError::Kind::truncated,
                    "pten: manifest extends past end of '" + path + "'");
  }

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(file.begin() + 16, file.begin() + 16 + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw PtenError(PtenError::Kind::bad_manifest,
                    "pten: manifest of '" + path + "' is not valid JSON: " + e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw PtenError(PtenError::Kind::bad_manifest,
                    "pten: manifest of '" + path + "' lacks a tensor directory");
  }

  const std::uint64_t blob_start = detail::align8(16 + mlen);
  if (file.size() < blob_start + 8) {
    throw PtenError(PtenError::Kind::truncated,
                    "pten: '" + path + "' has no room for blob and digest");
  }
  const std::uint64_t blob_len = file.size() - blob_start - 8;
  const std::uint8_t* blob = file.data() + blob_start;

  const std::uint64_t stored = detail::get_u64le(file.data() + file.size() - 8);
  const std::uint64_t actual = fnv1a64(blob, blob_len);
  if (stored != actual) {
    throw PtenError(PtenError::Kind::digest_mismatch,
                    "pten: blob digest mismatch in '" + path + "'");
  }

  PtenFile out;
  for (const auto& entry : manifest["tensors"]) {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw PtenError(PtenError::Kind::bad_manifest,
                      "pten: malformed tensor entry in '" + path + "': " + e.what());
    }
    const std::uint64_t count = static_cast<std::uint64_t>(shape_numel(shape));
    if (offset + count * 4 > blob_len) {
      throw PtenError(PtenError::Kind::truncated,
                      "pten: tensor '" + name + "' extends past blob end in '" +
                          path + "'");
    }
    std::vector<double> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint32_t bits = detail::get_u32le(blob + offset + i * 4);
      data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    out.tensors.emplace_back(name, Tensor::from_data(shape, std::move(data)));
  }
  out.manifest = std::move(manifest);
  return out;
}

}  // namespace distill
