#include "bkf/pack.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "bkf/error.hpp"

namespace bkf::tensorpack {
namespace {

constexpr char kMagic[4] = {'B', 'K', 'F', 'T'};

static_assert(std::endian::native == std::endian::little, "TensorPack I/O assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  template <class T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("TensorPack: unexpected end of data");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void TensorPack::add(std::string name, Tensor value, DType dtype) {
  if (name.empty() || name.size() > 0xffff) throw FormatError("TensorPack: invalid entry name length");
  if (contains(name)) throw FormatError("TensorPack: duplicate entry '" + name + "'");
  if (value.rank() > 0xff) throw FormatError("TensorPack: too many dimensions for '" + name + "'");
  if (dtype == DType::F32) {
    for (double& v : value.data()) v = static_cast<float>(v);
  }
  entries_.push_back({std::move(name), dtype, std::move(value)});
}

bool TensorPack::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Entry& TensorPack::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw FormatError("TensorPack: missing entry '" + name + "'");
}

std::vector<std::uint8_t> encode(const TensorPack& pack) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pack.entries().size()));
  for (const auto& e : pack.entries()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dtype));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) {
      if (d > 0xffffffffu) throw FormatError("TensorPack: extent too large in '" + e.name + "'");
      w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    }
    if (e.dtype == DType::F32) {
      for (double v : e.value.data()) w.put<float>(static_cast<float>(v));
    } else {
      w.put_bytes(e.value.ptr(), e.value.size() * sizeof(double));
    }
  }
  const std::uint32_t crc = crc32_of(w.out);
  w.put<std::uint32_t>(crc);
  return std::move(w.out);
}

TensorPack decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("TensorPack: bad magic (not a BKFT file)");
  }
  if (bytes.size() >= 8) {
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != kVersion) {
      throw FormatError("TensorPack: version mismatch: file has version " + std::to_string(version) +
                        ", reader supports version " + std::to_string(kVersion));
    }
  }
  if (bytes.size() < 16) throw FormatError("TensorPack: checksum mismatch (file truncated)");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored) throw FormatError("TensorPack: checksum mismatch");

  Reader r(body);
  r.take(8);
  const auto count = r.get<std::uint32_t>();
  TensorPack pack;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    const auto* name_ptr = r.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_ptr), name_len);
    const auto dtype_code = r.get<std::uint8_t>();
    if (dtype_code > 1) throw FormatError("TensorPack: unknown dtype " + std::to_string(dtype_code) + " in '" + name + "'");
    const auto ndim = r.get<std::uint8_t>();
    Shape shape(ndim);
    std::size_t count_values = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>();
      if (d == 0) throw FormatError("TensorPack: zero extent in '" + name + "'");
      count_values *= d;
    }
    const auto dtype = static_cast<DType>(dtype_code);
    const std::size_t width = dtype == DType::F32 ? sizeof(float) : sizeof(double);
    if (count_values > body.size() / width) throw FormatError("TensorPack: entry '" + name + "' exceeds file size");
    const auto* data = r.take(count_values * width);
    std::vector<double> values(count_values);
    if (dtype == DType::F32) {
      for (std::size_t k = 0; k < count_values; ++k) {
        float f;
        std::memcpy(&f, data + k * sizeof(float), sizeof(float));
        values[k] = f;
      }
    } else {
      std::memcpy(values.data(), data, count_values * sizeof(double));
    }
    if (!seen.insert(name).second) throw FormatError("TensorPack: duplicate entry '" + name + "'");
    pack.add(std::move(name), Tensor(std::move(shape), std::move(values)), dtype);
  }
  if (!r.done()) throw FormatError("TensorPack: trailing bytes after last entry");
  return pack;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void save(const TensorPack& pack, const std::filesystem::path& path) { write_file(path, encode(pack)); }

TensorPack load(const std::filesystem::path& path) { return decode(read_file(path)); }

}  // namespace bkf::tensorpack
