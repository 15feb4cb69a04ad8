#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bkf/tensor.hpp"

namespace bkf::tensorpack {

inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct Entry {
  std::string name;
  DType dtype = DType::F64;
  Tensor value;
};

/// Ordered set of uniquely named tensors ("BKFT" container).
///
/// Layout: "BKFT", u32 version, u32 count, then per entry
/// u16 name_len, name, u8 dtype, u8 ndim, u32 dims[ndim], row-major data,
/// all little-endian, followed by the CRC32 of every preceding byte.
class TensorPack {
 public:
  /// F32 entries are rounded to float on encode.
  void add(std::string name, Tensor value, DType dtype = DType::F64);

  bool contains(const std::string& name) const;
  const Entry& entry(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return entry(name).value; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
};

std::vector<std::uint8_t> encode(const TensorPack& pack);
/// Throws FormatError on bad magic, version mismatch, CRC mismatch or a
/// malformed body, checked in that order.
TensorPack decode(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save(const TensorPack& pack, const std::filesystem::path& path);
TensorPack load(const std::filesystem::path& path);

}  // namespace bkf::tensorpack
