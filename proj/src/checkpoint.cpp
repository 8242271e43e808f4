#include "nvist/checkpoint.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace nvist {

namespace {

constexpr char kMagic[4] = {'N', 'V', 'S', 'T'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw CheckpointCorruptError(source_ + ": truncated checkpoint");
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32:
      return 4;
    case DType::F64:
    case DType::U64:
      return 8;
    case DType::U8:
      return 1;
  }
  return 0;
}

const char* dtype_name(DType d) {
  switch (d) {
    case DType::F32:
      return "f32";
    case DType::F64:
      return "f64";
    case DType::U64:
      return "u64";
    case DType::U8:
      return "u8";
  }
  return "?";
}

template <typename T, typename U>
std::vector<std::uint8_t> encode(std::span<const T> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(T));
  for (T v : values) put_le(out, std::bit_cast<U>(v), sizeof(T));
  return out;
}

template <typename T, typename U>
void decode(const CheckpointEntry& e, std::span<T> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(e.bytes[i * sizeof(T) + b]) << (8 * b);
    out[i] = std::bit_cast<T>(bits);
  }
}

}  // namespace

void Checkpoint::add(CheckpointEntry e) {
  if (contains(e.name)) throw CheckpointError("duplicate checkpoint entry " + e.name);
  entries_.push_back(std::move(e));
}

void Checkpoint::put(const std::string& name, const Shape& shape, std::span<const float> values) {
  if (values.size() != shape_numel(shape)) throw ShapeError("checkpoint entry " + name + " does not match its shape");
  add({name, DType::F32, shape, encode<float, std::uint32_t>(values)});
}

void Checkpoint::put(const std::string& name, const Shape& shape, std::span<const double> values) {
  if (values.size() != shape_numel(shape)) throw ShapeError("checkpoint entry " + name + " does not match its shape");
  add({name, DType::F64, shape, encode<double, std::uint64_t>(values)});
}

void Checkpoint::put_u64(const std::string& name, std::uint64_t value) {
  std::vector<std::uint8_t> bytes;
  put_le(bytes, value, 8);
  add({name, DType::U64, {1}, std::move(bytes)});
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
  add({name, DType::U8, {text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())});
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw CheckpointShapeError("checkpoint has no entry " + name);
}

void Checkpoint::get(const std::string& name, const Shape& shape, std::span<float> out) const {
  const auto& e = entry(name);
  if (e.dtype != DType::F32 || e.shape != shape || out.size() != shape_numel(shape)) {
    throw CheckpointShapeError("checkpoint entry " + name + " is " + dtype_name(e.dtype) + shape_str(e.shape) +
                               ", expected f32" + shape_str(shape));
  }
  decode<float, std::uint32_t>(e, out);
}

void Checkpoint::get(const std::string& name, const Shape& shape, std::span<double> out) const {
  const auto& e = entry(name);
  if (e.dtype != DType::F64 || e.shape != shape || out.size() != shape_numel(shape)) {
    throw CheckpointShapeError("checkpoint entry " + name + " is " + dtype_name(e.dtype) + shape_str(e.shape) +
                               ", expected f64" + shape_str(shape));
  }
  decode<double, std::uint64_t>(e, out);
}

std::uint64_t Checkpoint::get_u64(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::U64 || e.shape != Shape{1}) throw CheckpointShapeError("checkpoint entry " + name + " is not a u64");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(e.bytes[b]) << (8 * b);
  return v;
}

std::string Checkpoint::get_text(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::U8 || e.shape.size() != 1) throw CheckpointShapeError("checkpoint entry " + name + " is not text");
  return std::string(e.bytes.begin(), e.bytes.end());
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kVersion, 4);
  put_le(out, entries_.size(), 4);
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    put_le(out, e.name.size(), 4);
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    put_le(out, e.shape.size(), 4);
    for (std::size_t d : e.shape) put_le(out, d, 8);
    put_le(out, offset, 8);
    offset += e.bytes.size();
  }
  const std::size_t payload_start = out.size();
  for (const auto& e : entries_) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + payload_start, static_cast<uInt>(out.size() - payload_start));
  put_le(out, crc, 4);
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.str(4) != std::string(kMagic, 4)) throw CheckpointCorruptError(source + ": not an NVST checkpoint");
  const auto version = static_cast<std::uint32_t>(r.le(4));
  if (version != kVersion) {
    throw CheckpointVersionError(source + ": checkpoint version " + std::to_string(version) + ", this build reads version " +
                                 std::to_string(kVersion));
  }
  const auto count = r.le(4);
  struct Header {
    CheckpointEntry entry;
    std::uint64_t offset;
    std::uint64_t size;
  };
  std::vector<Header> headers;
  for (std::uint64_t i = 0; i < count; ++i) {
    Header h;
    h.entry.name = r.str(r.le(4));
    const auto code = r.le(1);
    if (code < 1 || code > 4) throw CheckpointCorruptError(source + ": unknown dtype code in entry " + h.entry.name);
    h.entry.dtype = static_cast<DType>(code);
    const auto rank = r.le(4);
    if (rank > 16) throw CheckpointCorruptError(source + ": implausible rank in entry " + h.entry.name);
    for (std::uint64_t d = 0; d < rank; ++d) h.entry.shape.push_back(r.le(8));
    h.offset = r.le(8);
    h.size = shape_numel(h.entry.shape) * dtype_size(h.entry.dtype);
    headers.push_back(std::move(h));
  }
  const std::size_t payload_start = r.pos();
  if (bytes.size() < payload_start + 4) throw CheckpointCorruptError(source + ": truncated checkpoint");
  const std::size_t payload_size = bytes.size() - payload_start - 4;
  std::uint64_t expected_offset = 0;
  for (const auto& h : headers) {
    if (h.offset != expected_offset || h.offset + h.size > payload_size) {
      throw CheckpointCorruptError(source + ": entry " + h.entry.name + " lies outside the payload");
    }
    expected_offset += h.size;
  }
  if (expected_offset != payload_size) throw CheckpointCorruptError(source + ": payload size mismatch");
  std::uint32_t stored = 0;
  for (int b = 0; b < 4; ++b) stored |= static_cast<std::uint32_t>(bytes[payload_start + payload_size + b]) << (8 * b);
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), bytes.data() + payload_start, static_cast<uInt>(payload_size));
  if (static_cast<std::uint32_t>(crc) != stored) throw CheckpointCorruptError(source + ": checksum mismatch");

  Checkpoint ck;
  for (auto& h : headers) {
    const auto* p = bytes.data() + payload_start + h.offset;
    h.entry.bytes.assign(p, p + h.size);
    ck.add(std::move(h.entry));
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointMissingError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace nvist
