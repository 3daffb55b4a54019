#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "CGWT"                 4 bytes
//   version                u32 (currently 1)
//   manifest_length        u64
//   payload_length         u64
//   manifest               manifest_length bytes of text, one entry per line:
//                            tensor <name> <n> <c> <h> <w> <byte offset> f32
//                            meta <key> <value to end of line>
//   payload                payload_length bytes; each tensor is n*c*h*w IEEE-754
//                          binary32 values in NCHW order at its offset
//
// Names and keys contain no whitespace. Parameters are stored under their
// hierarchical names; AdamW moments under "<name>@m" and "<name>@v" with the
// step count in "meta step@<name>".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "toongan/errors.hpp"
#include "toongan/layers.hpp"
#include "toongan/tensor.hpp"

namespace toongan {

inline constexpr char kCheckpointMagic[4] = {'C', 'G', 'W', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  const Tensor& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw CheckpointError(CheckpointError::Kind::missing_tensor, "checkpoint has no tensor '" + name + "'");
    }
    return it->second;
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) {
      throw CheckpointError(CheckpointError::Kind::missing_tensor, "checkpoint has no metadata '" + key + "'");
    }
    return it->second;
  }

  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

inline bool is_token(const std::string& s) {
  if (s.empty()) return false;
  for (unsigned char ch : s)
    if (ch <= ' ' || ch == 0x7f) return false;
  return true;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::string manifest;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    if (!detail::is_token(name)) throw ConfigError("checkpoint tensor name '" + name + "' must be a non-empty token");
    const Shape& s = t.shape();
    manifest += "tensor " + name + " " + std::to_string(s.n) + " " + std::to_string(s.c) + " " +
                std::to_string(s.h) + " " + std::to_string(s.w) + " " + std::to_string(offset) + " f32\n";
    offset += 4 * t.size();
  }
  for (const auto& [key, value] : ck.meta) {
    if (!detail::is_token(key)) throw ConfigError("checkpoint metadata key '" + key + "' must be a non-empty token");
    if (value.find('\n') != std::string::npos) throw ConfigError("checkpoint metadata '" + key + "' contains a newline");
    manifest += "meta " + key + " " + value + "\n";
  }

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le(out, kCheckpointVersion, 4);
  detail::put_le(out, manifest.size(), 8);
  detail::put_le(out, offset, 8);
  out.insert(out.end(), manifest.begin(), manifest.end());
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : ck.tensors)
    for (float v : t.span()) detail::put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  return out;
}

inline Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  using Kind = CheckpointError::Kind;
  constexpr std::size_t header = 4 + 4 + 8 + 8;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, "not a checkpoint: bad magic (expected \"CGWT\")");
  }
  if (bytes.size() < header) throw CheckpointError(Kind::truncated_payload, "checkpoint header is truncated");
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes.data() + 4, 4));
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::unsupported_version, "unsupported checkpoint version " + std::to_string(version) +
                                                         " (this build reads version " +
                                                         std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t manifest_len = detail::get_le(bytes.data() + 8, 8);
  const std::uint64_t payload_len = detail::get_le(bytes.data() + 16, 8);
  const std::uint64_t available = bytes.size() - header;
  if (manifest_len > available || payload_len != available - manifest_len) {
    throw CheckpointError(Kind::truncated_payload, "checkpoint length mismatch: header declares " +
                                                       std::to_string(manifest_len) + " + " +
                                                       std::to_string(payload_len) + " bytes, file holds " +
                                                       std::to_string(available));
  }
  const std::uint8_t* payload = bytes.data() + header + manifest_len;

  Checkpoint ck;
  std::istringstream manifest(std::string(bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + manifest_len)));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    const auto bad = [&](const std::string& why) {
      return CheckpointError(Kind::malformed_manifest, "checkpoint manifest line " + std::to_string(line_no) + ": " + why);
    };
    std::istringstream in(line);
    std::string tag, name;
    in >> tag >> name;
    if (tag == "meta") {
      if (name.empty()) throw bad("metadata without key");
      std::string value;
      in.get();  // the single separating space
      std::getline(in, value);
      ck.meta[name] = value;
    } else if (tag == "tensor") {
      Shape s;
      std::uint64_t offset = 0;
      std::string type, extra;
      if (!(in >> s.n >> s.c >> s.h >> s.w >> offset >> type) || (in >> extra)) throw bad("expected 'tensor name n c h w offset f32'");
      if (type != "f32") throw bad("unsupported element type '" + type + "'");
      if (s.size() == 0) throw bad("tensor '" + name + "' has a zero extent");
      if (ck.has(name)) throw bad("duplicate tensor '" + name + "'");
      const std::uint64_t len = 4 * static_cast<std::uint64_t>(s.size());
      if (offset > payload_len || len > payload_len - offset) {
        throw CheckpointError(Kind::truncated_payload, "tensor '" + name + "' extends past the end of the payload");
      }
      Tensor t(s);
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(payload + offset + 4 * i, 4)));
      ck.tensors.emplace(name, std::move(t));
    } else if (!line.empty()) {
      throw bad("unknown entry '" + tag + "'");
    }
  }
  return ck;
}

/// Writes through a temporary file and a rename, so readers never see a partial checkpoint.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointError::Kind::io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

/// Copies a network's parameters and buffers into `ck` under `prefix`. With
/// `optimizer`, AdamW moments and step counts go along.
inline void store_state(Layer<float>& net, const std::string& prefix, Checkpoint& ck, bool optimizer = true) {
  net.visit(prefix, {[&](const std::string& name, Parameter<float>& p) {
                       ck.tensors[name] = p.value;
                       if (optimizer) {
                         ck.tensors[name + "@m"] = p.m;
                         ck.tensors[name + "@v"] = p.v;
                         ck.meta["step@" + name] = std::to_string(p.step_count);
                       }
                     },
                     [&](const std::string& name, Tensor& b) { ck.tensors[name] = b; }});
}

/// Inverse of store_state. Every expected tensor must exist with the same shape.
inline void restore_state(Layer<float>& net, const std::string& prefix, const Checkpoint& ck, bool optimizer = true) {
  const auto fetch = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = ck.tensor(name);
    if (src.shape() != dst.shape()) {
      throw CheckpointError(CheckpointError::Kind::missing_tensor, "tensor '" + name + "' has shape " +
                                                                       src.shape().str() + ", network expects " +
                                                                       dst.shape().str());
    }
    dst = src;
  };
  net.visit(prefix, {[&](const std::string& name, Parameter<float>& p) {
                       fetch(name, p.value);
                       if (optimizer) {
                         fetch(name + "@m", p.m);
                         fetch(name + "@v", p.v);
                         const std::string& text = ck.meta_at("step@" + name);
                         std::size_t used = 0;
                         try {
                           p.step_count = std::stoull(text, &used);
                         } catch (const std::exception&) {
                           used = 0;
                         }
                         if (used == 0 || used != text.size()) {
                           throw CheckpointError(CheckpointError::Kind::malformed_manifest,
                                                 "step count for '" + name + "' is not an integer: " + text);
                         }
                       }
                     },
                     fetch});
}

}  // namespace toongan
