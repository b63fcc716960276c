// ".acnx" named-tensor archive.
//
// Layout (all integers little-endian):
//   "ACNX" | u32 version | u32 entry count
//   entries: u32 name length | name bytes | u8 dtype | u8 rank | u32 dims[rank] | u64 offset
//   u64 payload length | payload (f32 LE) | u32 CRC-32 of every preceding byte
// Entries are sorted by name; offsets are relative to the payload start.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dscnet/model/zoo.hpp"

namespace dscnet::checkpoint {

inline constexpr char kMagic[4] = {'A', 'C', 'N', 'X'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Entry {
  std::string name;
  std::uint8_t dtype = kDtypeF32;
  Shape shape;
  std::uint64_t offset = 0;  // bytes from payload start
};

struct Checkpoint {
  std::uint32_t version = kVersion;
  std::vector<Entry> entries;
  std::map<std::string, Tensor> tensors;

  const Tensor* find(const std::string& name) const {
    auto it = tensors.find(name);
    return it == tensors.end() ? nullptr : &it->second;
  }
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }
};

namespace detail {

static_assert(sizeof(float) == 4);

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n, std::string what) : p_(p), n_(n), what_(std::move(what)) {}

  const unsigned char* take(std::size_t k, const char* field) {
    if (k > n_ - pos_) throw CheckpointError(what_ + ": truncated while reading " + field);
    const auto* r = p_ + pos_;
    pos_ += k;
    return r;
  }
  template <typename U>
  U le(const char* field) {
    const auto* b = take(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }
  std::size_t position() const { return pos_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

// Serializes named float tensors (order-independent).
inline std::vector<unsigned char> encode(const std::map<std::string, Tensor>& tensors) {
  detail::Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {  // std::map iterates in lexicographic byte order
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(kDtypeF32);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.le<std::uint64_t>(offset);
    offset += 4ull * t.size();
  }
  w.le<std::uint64_t>(offset);
  for (const auto& [_, t] : tensors)
    for (float v : t.data()) w.f32(v);
  auto& buf = w.buffer();
  w.le<std::uint32_t>(detail::crc32_of(buf.data(), buf.size()));
  return std::move(buf);
}

inline Checkpoint decode(const std::vector<unsigned char>& bytes, const std::string& what = "checkpoint") {
  if (bytes.size() < 4 + 4 + 4 + 8 + 4) throw CheckpointError(what + ": file too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(what + ": bad magic (not an .acnx file)");

  const std::size_t body = bytes.size() - 4;
  detail::Reader crc_reader(bytes.data() + body, 4, what);
  const auto stored = crc_reader.le<std::uint32_t>("crc");
  if (stored != detail::crc32_of(bytes.data(), body))
    throw CheckpointError(what + ": CRC mismatch (file corrupted or truncated)");

  detail::Reader r(bytes.data(), body, what);
  r.take(4, "magic");
  Checkpoint ck;
  ck.version = r.le<std::uint32_t>("version");
  if (ck.version != kVersion)
    throw CheckpointError(what + ": unsupported version " + std::to_string(ck.version) + " (expected " +
                          std::to_string(kVersion) + ")");
  const auto count = r.le<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto len = r.le<std::uint32_t>("name length");
    const auto* nb = r.take(len, "name");
    e.name.assign(reinterpret_cast<const char*>(nb), len);
    e.dtype = r.le<std::uint8_t>("dtype");
    if (e.dtype != kDtypeF32) throw CheckpointError(what + ": entry '" + e.name + "' has unsupported dtype");
    const auto rank = r.le<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.le<std::uint32_t>("dims"));
    e.offset = r.le<std::uint64_t>("offset");
    if (!ck.entries.empty() && !(ck.entries.back().name < e.name))
      throw CheckpointError(what + ": entries not strictly sorted at '" + e.name + "'");
    ck.entries.push_back(std::move(e));
  }
  const auto payload_len = r.le<std::uint64_t>("payload length");
  if (payload_len != body - r.position()) throw CheckpointError(what + ": payload length does not match file size");
  const unsigned char* payload = r.take(payload_len, "payload");

  std::uint64_t expected = 0;
  for (const auto& e : ck.entries) {
    std::uint64_t n = 1;
    for (auto d : e.shape) n *= d;
    if (e.offset != expected) throw CheckpointError(what + ": entry '" + e.name + "' has a gapped or overlapping offset");
    if (e.offset + 4 * n > payload_len) throw CheckpointError(what + ": entry '" + e.name + "' exceeds the payload");
    std::vector<float> values(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      const unsigned char* b = payload + e.offset + 4 * k;
      const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      values[k] = std::bit_cast<float>(u);
    }
    Shape shape = e.shape.empty() ? Shape{1} : e.shape;
    ck.tensors.emplace(e.name, Tensor(shape, std::move(values)));
    expected += 4 * n;
  }
  if (expected != payload_len) throw CheckpointError(what + ": payload has trailing bytes");
  return ck;
}

// Every parameter and buffer of the model, keyed by canonical name.
template <typename T>
std::map<std::string, Tensor> state_dict(const model::Model<T>& m) {
  std::map<std::string, Tensor> out;
  m.parameters().for_each([&](const model::Parameter<T>& p) { out.emplace(p.name, p.value.template cast<float>()); });
  return out;
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("write to '" + path + "' failed");
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

template <typename T>
void save(const model::Model<T>& m, const std::string& path) {
  write_file(path, encode(state_dict(m)));
}

inline Checkpoint load(const std::string& path) { return decode(read_file(path), path); }

struct ApplyReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // in the model, absent from the file
  std::vector<std::string> unexpected;  // in the file, absent from the model
  std::vector<std::string> mismatched;  // same name, different shape

  bool clean() const { return missing.empty() && unexpected.empty() && mismatched.empty(); }
  std::string summary() const {
    std::string s = std::to_string(loaded.size()) + " loaded";
    auto list = [&](const char* label, const std::vector<std::string>& v) {
      if (v.empty()) return;
      s += std::string("; ") + label + " (" + std::to_string(v.size()) + "):";
      for (const auto& n : v) s += " " + n;
    };
    list("missing", missing);
    list("unexpected", unexpected);
    list("shape mismatch", mismatched);
    return s;
  }
};

// Copies matching tensors into the model. Strict mode validates everything
// first and leaves the model untouched on any mismatch.
template <typename T>
ApplyReport apply(const Checkpoint& ck, model::Model<T>& m, bool strict = true) {
  ApplyReport rep;
  auto& table = m.parameters();
  table.for_each([&](model::Parameter<T>& p) {
    const Tensor* src = ck.find(p.name);
    if (!src)
      rep.missing.push_back(p.name);
    else if (src->shape() != p.value.shape())
      rep.mismatched.push_back(p.name + " " + to_string(src->shape()) + " vs " + to_string(p.value.shape()));
    else
      rep.loaded.push_back(p.name);
  });
  for (const auto& [name, _] : ck.tensors)
    if (!table.find(name)) rep.unexpected.push_back(name);
  if (strict && !rep.clean()) throw CheckpointError("strict checkpoint apply failed: " + rep.summary());
  for (const auto& name : rep.loaded) table.find(name)->value = ck.find(name)->template cast<T>();
  return rep;
}

}  // namespace dscnet::checkpoint
