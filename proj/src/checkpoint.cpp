#include "patchgen/checkpoint.hpp"

#include <cstring>

#include <zlib.h>

#include "patchgen/fsutil.hpp"

namespace patchgen {

namespace {

constexpr char kMagic[] = "PGCKPT01";
constexpr std::size_t kMagicSize = 8;

template <typename V>
void append(std::string& out, V value) {
  char raw[sizeof(V)];
  std::memcpy(raw, &value, sizeof(V));
  out.append(raw, sizeof(V));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename V>
  V read(const std::string& context) {
    V value;
    std::memcpy(&value, take(sizeof(V), context), sizeof(V));
    return value;
  }

  std::string read_string(std::size_t length, const std::string& context) {
    const char* p = take(length, context);
    return {p, length};
  }

  std::size_t offset() const { return offset_; }

 private:
  const char* take(std::size_t length, const std::string& context) {
    if (length > bytes_.size() - offset_)
      fail(ErrorCategory::kIntegrity, "checkpoint truncated while reading " + context);
    const char* p = bytes_.data() + offset_;
    offset_ += length;
    return p;
  }

  const std::string& bytes_;
  std::size_t offset_ = 0;
};

template <typename T>
constexpr TensorArchive::DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return TensorArchive::DType::kF32;
  } else {
    return TensorArchive::DType::kF64;
  }
}

}  // namespace

std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void TensorArchive::add(Entry entry) {
  for (const Entry& e : entries_)
    if (e.key == entry.key) fail(ErrorCategory::kInternal, "duplicate checkpoint key " + entry.key);
  entries_.push_back(std::move(entry));
}

template <typename T>
void TensorArchive::put(const std::string& key, const Tensor<T>& tensor) {
  const Shape& s = tensor.shape();
  Entry entry{key, dtype_of<T>(),
              {static_cast<std::uint64_t>(s.n), static_cast<std::uint64_t>(s.c),
               static_cast<std::uint64_t>(s.h), static_cast<std::uint64_t>(s.w)},
              std::string(reinterpret_cast<const char*>(tensor.data()), tensor.size() * sizeof(T))};
  add(std::move(entry));
}

void TensorArchive::put_u64(const std::string& key, std::uint64_t value) {
  std::string payload;
  append(payload, value);
  add({key, DType::kU64, {1}, std::move(payload)});
}

void TensorArchive::put_bytes(const std::string& key, std::string bytes) {
  const std::uint64_t size = bytes.size();
  add({key, DType::kBytes, {size}, std::move(bytes)});
}

const TensorArchive::Entry& TensorArchive::find(const std::string& key) const {
  for (const Entry& e : entries_)
    if (e.key == key) return e;
  fail(ErrorCategory::kIntegrity, "checkpoint is missing key " + key);
}

bool TensorArchive::contains(const std::string& key) const {
  for (const Entry& e : entries_)
    if (e.key == key) return true;
  return false;
}

template <typename T>
void TensorArchive::get(const std::string& key, Tensor<T>& out) const {
  const Entry& e = find(key);
  const Shape& s = out.shape();
  const std::vector<std::uint64_t> expected{static_cast<std::uint64_t>(s.n), static_cast<std::uint64_t>(s.c),
                                            static_cast<std::uint64_t>(s.h), static_cast<std::uint64_t>(s.w)};
  if (e.dtype != dtype_of<T>() || e.dims != expected || e.payload.size() != out.size() * sizeof(T))
    fail(ErrorCategory::kIntegrity, "checkpoint entry " + key + " has unexpected dtype or shape");
  std::memcpy(out.data(), e.payload.data(), e.payload.size());
}

std::uint64_t TensorArchive::get_u64(const std::string& key) const {
  const Entry& e = find(key);
  if (e.dtype != DType::kU64 || e.payload.size() != sizeof(std::uint64_t))
    fail(ErrorCategory::kIntegrity, "checkpoint entry " + key + " is not a u64");
  std::uint64_t value;
  std::memcpy(&value, e.payload.data(), sizeof value);
  return value;
}

const std::string& TensorArchive::get_bytes(const std::string& key) const {
  const Entry& e = find(key);
  if (e.dtype != DType::kBytes) fail(ErrorCategory::kIntegrity, "checkpoint entry " + key + " is not raw bytes");
  return e.payload;
}

std::string TensorArchive::serialize() const {
  std::string out(kMagic, kMagicSize);
  append(out, config_hash);
  append(out, static_cast<std::uint32_t>(entries_.size()));
  for (const Entry& e : entries_) {
    append(out, static_cast<std::uint32_t>(e.key.size()));
    out += e.key;
    append(out, static_cast<std::uint8_t>(e.dtype));
    append(out, static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint64_t d : e.dims) append(out, d);
    append(out, static_cast<std::uint64_t>(e.payload.size()));
    append(out, crc32_of(e.payload));
    out += e.payload;
  }
  append(out, crc32_of(out));
  return out;
}

TensorArchive TensorArchive::parse(const std::string& bytes) {
  Reader reader(bytes);
  if (reader.read_string(kMagicSize, "magic") != std::string(kMagic, kMagicSize))
    fail(ErrorCategory::kIntegrity, "not a checkpoint file (bad magic)");
  TensorArchive archive;
  archive.config_hash = reader.read<std::uint64_t>("config hash");
  const auto count = reader.read<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto key_length = reader.read<std::uint32_t>("key length");
    e.key = reader.read_string(key_length, "key");
    const auto dtype = reader.read<std::uint8_t>(e.key);
    if (dtype > static_cast<std::uint8_t>(DType::kBytes))
      fail(ErrorCategory::kIntegrity, "checkpoint entry " + e.key + " has unknown dtype");
    e.dtype = static_cast<DType>(dtype);
    const auto rank = reader.read<std::uint8_t>(e.key);
    for (int d = 0; d < rank; ++d) e.dims.push_back(reader.read<std::uint64_t>(e.key));
    const auto length = reader.read<std::uint64_t>(e.key);
    const auto checksum = reader.read<std::uint32_t>(e.key);
    e.payload = reader.read_string(length, e.key);
    if (crc32_of(e.payload) != checksum)
      fail(ErrorCategory::kIntegrity, "checksum mismatch in checkpoint entry " + e.key);
    archive.entries_.push_back(std::move(e));
  }
  const std::size_t body = reader.offset();
  const auto trailer = reader.read<std::uint32_t>("trailer");
  if (crc32_of(bytes.substr(0, body)) != trailer)
    fail(ErrorCategory::kIntegrity, "checkpoint header checksum mismatch");
  if (reader.offset() != bytes.size()) fail(ErrorCategory::kIntegrity, "trailing bytes after checkpoint");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

TensorArchive TensorArchive::load(const std::filesystem::path& path) { return parse(read_file(path)); }

template void TensorArchive::put<float>(const std::string&, const Tensor<float>&);
template void TensorArchive::put<double>(const std::string&, const Tensor<double>&);
template void TensorArchive::get<float>(const std::string&, Tensor<float>&) const;
template void TensorArchive::get<double>(const std::string&, Tensor<double>&) const;

}  // namespace patchgen
