#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvist/tensor.h"

namespace nvist {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// File absent or unreadable.
class CheckpointMissingError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Truncated, malformed or checksum failure.
class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// An entry is absent or its dtype/shape differs from the receiving tensor.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

enum class DType : std::uint8_t { F32 = 1, F64 = 2, U64 = 3, U8 = 4 };

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian payload
};

/// Named arrays in the "NVST" container: magic, u32 version, u32 entry count,
/// per entry {u32 name length, name, u8 dtype, u32 rank, u64 dims, u64 payload
/// offset}, then the payload and a CRC32 of the payload.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, const Shape& shape, std::span<const float> values);
  void put(const std::string& name, const Shape& shape, std::span<const double> values);
  void put_u64(const std::string& name, std::uint64_t value);
  void put_text(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  /// Copies an entry into `out`; throws CheckpointShapeError on dtype or shape mismatch.
  void get(const std::string& name, const Shape& shape, std::span<float> out) const;
  void get(const std::string& name, const Shape& shape, std::span<double> out) const;
  std::uint64_t get_u64(const std::string& name) const;
  std::string get_text(const std::string& name) const;

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

  /// Written to a temporary sibling then renamed into place.
  void save(const std::filesystem::path& path) const;
  /// Fully parsed and checksum-verified before anything is returned.
  static Checkpoint load(const std::filesystem::path& path);

 private:
  void add(CheckpointEntry e);
  std::vector<CheckpointEntry> entries_;
};

}  // namespace nvist
