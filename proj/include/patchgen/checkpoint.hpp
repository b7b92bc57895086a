#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchgen/tensor.hpp"

namespace patchgen {

/// Named-tensor container used for checkpoints.
///
/// Layout (little endian):
///   "PGCKPT01"                     8-byte magic
///   u64 config_hash
///   u32 entry_count
///   entry_count times:
///     u32 key_length, key bytes
///     u8  dtype                    0 = f32, 1 = f64, 2 = u64, 3 = raw bytes
///     u8  rank, u64 dims[rank]
///     u64 payload_length
///     u32 crc32(payload)
///     payload
///   u32 crc32 of all preceding bytes
class TensorArchive {
 public:
  enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU64 = 2, kBytes = 3 };

  struct Entry {
    std::string key;
    DType dtype;
    std::vector<std::uint64_t> dims;
    std::string payload;
  };

  std::uint64_t config_hash = 0;

  template <typename T>
  void put(const std::string& key, const Tensor<T>& tensor);
  void put_u64(const std::string& key, std::uint64_t value);
  void put_bytes(const std::string& key, std::string bytes);

  /// Copies into `out`; the stored dtype and shape must match exactly.
  template <typename T>
  void get(const std::string& key, Tensor<T>& out) const;
  std::uint64_t get_u64(const std::string& key) const;
  const std::string& get_bytes(const std::string& key) const;
  bool contains(const std::string& key) const;

  const std::vector<Entry>& entries() const { return entries_; }

  std::string serialize() const;
  /// Throws kIntegrity (naming the offending key) on checksum or layout errors.
  static TensorArchive parse(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  const Entry& find(const std::string& key) const;
  void add(Entry entry);

  std::vector<Entry> entries_;
};

std::uint32_t crc32_of(const std::string& bytes);

}  // namespace patchgen
