#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcssl/params.hpp"
#include "mcssl/tensor.hpp"

namespace mcssl {

// On-disk container: 8-byte magic "MCSSL000", little-endian u64 manifest
// length, UTF-8 JSON manifest, then little-endian f32 tensor payloads in
// manifest order. save(load(f)) reproduces f byte for byte.
constexpr char kCheckpointMagic[9] = "MCSSL000";

struct Checkpoint {
  uint64_t fingerprint = 0;
  std::map<std::string, int64_t> scalars;
  std::vector<std::pair<std::string, ParamSet<float>>> sections;

  ParamSet<float>& section(const std::string& name) {
    for (auto& [n, p] : sections)
      if (n == name) return p;
    sections.emplace_back(name, ParamSet<float>{});
    return sections.back().second;
  }
  const ParamSet<float>* find_section(const std::string& name) const {
    for (const auto& [n, p] : sections)
      if (n == name) return &p;
    return nullptr;
  }
  int64_t scalar(const std::string& key, int64_t fallback = 0) const {
    auto it = scalars.find(key);
    return it == scalars.end() ? fallback : it->second;
  }
};

namespace detail {

inline void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::string fingerprint_hex(uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::ordered_json manifest;
  manifest["format"] = kCheckpointMagic;
  manifest["dtype"] = "f32";
  manifest["fingerprint"] = detail::fingerprint_hex(ck.fingerprint);
  nlohmann::ordered_json scalars = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ck.scalars) scalars[k] = v;
  manifest["scalars"] = scalars;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  uint64_t offset = 0;
  for (const auto& [sec, params] : ck.sections) {
    for (size_t i = 0; i < params.size(); ++i) {
      const TensorF& t = params.tensor(i);
      nlohmann::ordered_json row;
      row["section"] = sec;
      row["name"] = params.names()[i];
      row["shape"] = t.shape();
      row["offset"] = offset;
      row["bytes"] = static_cast<uint64_t>(t.numel()) * 4;
      tensors.push_back(row);
      offset += static_cast<uint64_t>(t.numel()) * 4;
    }
  }
  manifest["tensors"] = tensors;
  std::string mtext = manifest.dump();

  std::string out;
  out.reserve(16 + mtext.size() + offset);
  out.append(kCheckpointMagic, 8);
  detail::put_u64_le(out, mtext.size());
  out += mtext;
  for (const auto& [sec, params] : ck.sections) {
    for (size_t i = 0; i < params.size(); ++i) {
      const TensorF& t = params.tensor(i);
      for (int64_t j = 0; j < t.numel(); ++j) {
        float f = t[j];
        uint32_t bits;
        static_assert(sizeof bits == sizeof f);
        __builtin_memcpy(&bits, &f, 4);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
      }
    }
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("bad magic: not a checkpoint file");
  const unsigned char* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  uint64_t mlen = detail::get_u64_le(raw + 8);
  if (16 + mlen > bytes.size()) throw std::runtime_error("truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  std::string fp = manifest.value("fingerprint", std::string("0"));
  ck.fingerprint = std::stoull(fp, nullptr, 16);
  if (manifest.contains("scalars"))
    for (auto it = manifest["scalars"].begin(); it != manifest["scalars"].end(); ++it)
      ck.scalars[it.key()] = it.value().get<int64_t>();
  size_t payload = 16 + mlen;
  if (manifest.contains("tensors"))
    for (const auto& row : manifest["tensors"]) {
      std::string sec = row.at("section").get<std::string>();
      std::string name = row.at("name").get<std::string>();
      std::vector<int64_t> shape = row.at("shape").get<std::vector<int64_t>>();
      uint64_t offset = row.at("offset").get<uint64_t>();
      uint64_t nbytes = row.at("bytes").get<uint64_t>();
      TensorF t(shape);
      if (static_cast<uint64_t>(t.numel()) * 4 != nbytes)
        throw std::runtime_error("checkpoint tensor size mismatch for " + name);
      if (payload + offset + nbytes > bytes.size())
        throw std::runtime_error("truncated checkpoint payload at " + name);
      const unsigned char* src = raw + payload + offset;
      for (int64_t j = 0; j < t.numel(); ++j) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<uint32_t>(src[j * 4 + b]) << (8 * b);
        float f;
        __builtin_memcpy(&f, &bits, 4);
        t[j] = f;
      }
      ck.section(sec).add(name, std::move(t));
    }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string bytes = serialize_checkpoint(ck);
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw std::runtime_error("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string bytes;
  char buf[1 << 16];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, n);
  std::fclose(f);
  return deserialize_checkpoint(bytes);
}

}  // namespace mcssl
