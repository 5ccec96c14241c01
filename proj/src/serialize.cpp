#include "parc/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "parc/errors.hpp"

namespace parc::io {

namespace {

constexpr char kPtnsMagic[4] = {'P', 'T', 'N', 'S'};
constexpr char kPckpMagic[4] = {'P', 'C', 'K', 'P'};
constexpr std::size_t kMaxRank = 8;

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; byte-swapped hosts are not supported");

class Reader {
 public:
  Reader(std::istream& is, std::size_t base) : is_(is), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }

  void read(void* dst, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError(std::string("truncated file reading ") + what + " at byte " +
                        std::to_string(offset()));
    }
    pos_ += n;
  }

  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    read(&v, 1, what);
    return v;
  }

  std::uint32_t u32(const char* what) {
    std::uint8_t b[4];
    read(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  // Bytes consumed from the stream by a nested reader; keeps offsets accurate.
  void skip_accounted(std::size_t n) { pos_ += n; }

 private:
  std::istream& is_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

void write_u32(std::ostream& os, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

const void* raw_data(const Tensor& t) {
  switch (t.dtype()) {
    case Dtype::F32: return t.f32().data();
    case Dtype::F64: return t.f64().data();
    case Dtype::U32: return t.u32().data();
  }
  return nullptr;
}

}  // namespace

void write_ptns(std::ostream& os, const Tensor& t) {
  if (!t.defined()) throw ArgumentError("write_ptns: undefined tensor");
  if (t.rank() > kMaxRank) throw ArgumentError("write_ptns: rank too large");
  os.write(kPtnsMagic, 4);
  const std::uint8_t version = 1;
  const std::uint8_t dtype = static_cast<std::uint8_t>(t.dtype());
  const std::uint8_t ndim = static_cast<std::uint8_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&version), 1);
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  os.write(reinterpret_cast<const char*>(&ndim), 1);
  for (std::size_t d : t.dims()) write_u32(os, static_cast<std::uint32_t>(d));
  os.write(static_cast<const char*>(raw_data(t)),
           static_cast<std::streamsize>(t.size() * dtype_size(t.dtype())));
  if (!os) throw IoError("write_ptns: stream write failed");
}

Tensor read_ptns(std::istream& is, std::size_t base_offset) {
  Reader r(is, base_offset);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kPtnsMagic, 4) != 0) {
    throw FormatError("bad PTNS magic at byte " + std::to_string(base_offset));
  }
  const std::uint8_t version = r.u8("version");
  if (version != 1) {
    throw FormatError("unsupported PTNS version " + std::to_string(version) + " at byte " +
                      std::to_string(r.offset() - 1));
  }
  const std::uint8_t dtype_byte = r.u8("dtype");
  if (dtype_byte > 2) {
    throw FormatError("unknown PTNS dtype " + std::to_string(dtype_byte) + " at byte " +
                      std::to_string(r.offset() - 1));
  }
  const Dtype dt = static_cast<Dtype>(dtype_byte);
  const std::uint8_t ndim = r.u8("ndim");
  if (ndim > kMaxRank) {
    throw FormatError("PTNS rank " + std::to_string(ndim) + " exceeds limit at byte " +
                      std::to_string(r.offset() - 1));
  }
  std::vector<std::size_t> dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = r.u32("dims");
    if (d == 0) {
      throw FormatError("PTNS dim " + std::to_string(i) + " is zero at byte " +
                        std::to_string(r.offset() - 4));
    }
    dims[i] = d;
  }
  Tensor t = Tensor::empty(dt, dims);
  void* dst = nullptr;
  switch (dt) {
    case Dtype::F32: dst = t.f32_mut().data(); break;
    case Dtype::F64: dst = t.f64_mut().data(); break;
    case Dtype::U32: dst = t.u32_mut().data(); break;
  }
  r.read(dst, t.size() * dtype_size(dt), "tensor data");
  return t;
}

void save_ptns(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_ptns(os, t);
  os.close();
  if (!os) throw IoError("write failed: " + path);
}

Tensor load_ptns(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  Tensor t = read_ptns(is, 0);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after PTNS payload in " + path);
  }
  return t;
}

bool CheckpointFile::has(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& CheckpointFile::get(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw ContractError("checkpoint entry not found: " + name);
}

void save_pckp(const std::string& path, const CheckpointFile& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kPckpMagic, 4);
  const std::uint8_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 1);
  write_u32(os, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, tensor] : ckpt.entries) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_ptns(os, tensor);
  }
  write_u32(os, ckpt.step);
  os.close();
  if (!os) throw IoError("write failed: " + path);
}

CheckpointFile load_pckp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  Reader r(is, 0);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kPckpMagic, 4) != 0) {
    throw FormatError("bad PCKP magic at byte 0");
  }
  const std::uint8_t version = r.u8("version");
  if (version != 1) {
    throw FormatError("unsupported PCKP version " + std::to_string(version) + " at byte 4");
  }
  const std::uint32_t count = r.u32("entry count");
  CheckpointFile ckpt;
  ckpt.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    if (name_len > (1u << 20)) {
      throw FormatError("implausible entry name length at byte " + std::to_string(r.offset() - 4));
    }
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "entry name");
    Tensor t = read_ptns(is, r.offset());
    // account for the embedded blob so later offsets stay accurate
    std::size_t blob = 4 + 3 + 4 * t.rank() + t.size() * dtype_size(t.dtype());
    r.skip_accounted(blob);
    ckpt.entries.emplace_back(std::move(name), std::move(t));
  }
  ckpt.step = r.u32("step counter");
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after PCKP payload in " + path);
  }
  return ckpt;
}

}  // namespace parc::io
