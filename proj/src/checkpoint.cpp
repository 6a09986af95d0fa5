#include "sslct/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "sslct/downstream.hpp"  // bytes_crc32

namespace sslct {

namespace {

// Layout (all integers little-endian):
//   8-byte magic | u32 version | payload | u32 crc32(payload)
// payload:
//   str method | i64 epoch | i64 step | str config | u32 count | tensors
// tensor: str name | u32 ndim | i32 dims[ndim] | u64 n | f32 data[n]
constexpr char kMagic[8] = {'s', 's', 'l', 'c', 'k', 'p', 't', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append((const char*)p, n);
}
template <typename T>
void put(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof v);
}
void put_str(std::string& buf, const std::string& s) {
  put<std::uint32_t>(buf, (std::uint32_t)s.size());
  put_bytes(buf, s.data(), s.size());
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("truncated checkpoint: " + path);
  }
  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
  }
  std::string take_str() {
    const std::uint32_t n = take<std::uint32_t>();
    need(n);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void PretrainCheckpoint::add(const std::string& name, const std::vector<int>& shape,
                             const std::vector<float>& data) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  check_cfg(n == (std::int64_t)data.size(),
            "checkpoint: tensor " + name + " shape does not match data size");
  if (find(name)) throw ConfigError("checkpoint: duplicate tensor name " + name);
  tensors.push_back({name, shape, data});
}

void save_checkpoint(const std::string& path, const PretrainCheckpoint& ckpt) {
  std::string payload;
  put_str(payload, ckpt.method);
  put<std::int64_t>(payload, ckpt.epoch);
  put<std::int64_t>(payload, ckpt.step);
  put_str(payload, ckpt.config_text);
  put<std::uint32_t>(payload, (std::uint32_t)ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    put_str(payload, t.name);
    put<std::uint32_t>(payload, (std::uint32_t)t.shape.size());
    for (int d : t.shape) put<std::int32_t>(payload, d);
    put<std::uint64_t>(payload, t.data.size());
    put_bytes(payload, t.data.data(), t.data.size() * sizeof(float));
  }
  const std::uint32_t crc = bytes_crc32(payload.data(), payload.size());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint: " + tmp);
    f.write(kMagic, sizeof kMagic);
    std::uint32_t version = kVersion;
    f.write((const char*)&version, sizeof version);
    f.write(payload.data(), (std::streamsize)payload.size());
    f.write((const char*)&crc, sizeof crc);
    if (!f) throw IoError("short write: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + path + " (" + ec.message() + ")");
}

PretrainCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw IoError("not a checkpoint file: " + path);

  Reader r{buf, sizeof kMagic, path};
  const std::uint32_t version = r.take<std::uint32_t>();
  if (version != kVersion)
    throw ValidationError("checkpoint version mismatch in " + path + ": found version " +
                          std::to_string(version) + ", this build reads version " +
                          std::to_string(kVersion) + " and has no migration path");

  const size_t payload_begin = r.pos;
  const size_t payload_end = buf.size() - sizeof(std::uint32_t);
  if (payload_end < payload_begin) throw IoError("truncated checkpoint: " + path);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + payload_end, sizeof stored_crc);
  const std::uint32_t crc = bytes_crc32(buf.data() + payload_begin, payload_end - payload_begin);
  if (crc != stored_crc)
    throw ValidationError("checkpoint checksum mismatch: " + path + " is corrupt");

  PretrainCheckpoint ckpt;
  ckpt.method = r.take_str();
  ckpt.epoch = r.take<std::int64_t>();
  ckpt.step = r.take<std::int64_t>();
  ckpt.config_text = r.take_str();
  const std::uint32_t count = r.take<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.take_str();
    const std::uint32_t ndim = r.take<std::uint32_t>();
    for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(r.take<std::int32_t>());
    const std::uint64_t n = r.take<std::uint64_t>();
    r.need(n * sizeof(float));
    t.data.resize(n);
    std::memcpy(t.data.data(), buf.data() + r.pos, n * sizeof(float));
    r.pos += n * sizeof(float);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace sslct
