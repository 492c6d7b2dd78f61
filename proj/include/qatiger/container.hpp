// QTGF tensor container.
//
// Layout (all integers little-endian regardless of host):
//   magic   4 bytes  "QTGF"
//   version u32      currently 1
//   count   u64      number of tensor records
// then per record:
//   name_len u32, name bytes (UTF-8, unique within the file)
//   rank     u32
//   dims     rank × u64
//   dtype    u8      0 = single precision, 1 = double precision
//   payload  product(dims) × element size, row-major, little-endian
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "qatiger/tensor.hpp"

namespace qatiger {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[4] = {'Q', 'T', 'G', 'F'};

enum class ContainerErrorKind {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kDuplicateName,
};

class ContainerError : public std::runtime_error {
 public:
  ContainerError(ContainerErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ContainerErrorKind kind() const { return kind_; }

 private:
  ContainerErrorKind kind_;
};

enum class DType : std::uint8_t {
  kSingle = 0,
  kDouble = 1,
};

inline std::size_t element_size(DType t) { return t == DType::kSingle ? 4 : 8; }

// One stored tensor, kept as raw bytes so round-trips are bit-exact for
// either precision.
struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  DType dtype = DType::kDouble;
  std::vector<std::uint8_t> payload;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    need(4, "header field");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "header field");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1, "dtype tag");
    return data_[pos_++];
  }
  std::string bytes_as_string(std::size_t n) {
    need(n, "name");
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> out(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
    return out;
  }
  bool at_end() const { return pos_ == size_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > size_) {
      throw ContainerError(ContainerErrorKind::kTruncated,
                           std::string("container truncated while reading ") + what);
    }
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_container(const std::string& path, const std::vector<NamedTensor>& tensors) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    for (std::size_t j = i + 1; j < tensors.size(); ++j) {
      if (tensors[i].name == tensors[j].name) {
        throw ContainerError(ContainerErrorKind::kDuplicateName,
                             "duplicate tensor name: " + tensors[i].name);
      }
    }
    const std::uint64_t expected = tensors[i].element_count() * element_size(tensors[i].dtype);
    if (tensors[i].payload.size() != expected) {
      throw ContainerError(ContainerErrorKind::kTruncated,
                           "payload size mismatch for tensor " + tensors[i].name);
    }
  }

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kContainerMagic, kContainerMagic + 4);
  detail::put_u32(out, kContainerVersion);
  detail::put_u64(out, tensors.size());
  for (const NamedTensor& t : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) detail::put_u64(out, d);
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.insert(out.end(), t.payload.begin(), t.payload.end());
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContainerError(ContainerErrorKind::kIo, "cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw ContainerError(ContainerErrorKind::kIo, "write failed: " + path);
}

inline std::vector<NamedTensor> read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContainerError(ContainerErrorKind::kIo, "cannot open for reading: " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  detail::ByteReader r(data.data(), data.size());

  const std::string magic = r.bytes_as_string(4);
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) {
    throw ContainerError(ContainerErrorKind::kBadMagic, "bad magic in " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw ContainerError(ContainerErrorKind::kVersionMismatch,
                         "unsupported container version " + std::to_string(version));
  }
  const std::uint64_t count = r.u64();
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32();
    t.name = r.bytes_as_string(name_len);
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) t.dims.push_back(r.u64());
    t.dtype = static_cast<DType>(r.u8());
    t.payload = r.bytes(static_cast<std::size_t>(t.element_count() * element_size(t.dtype)),
                        ("payload of " + t.name).c_str());
    for (const NamedTensor& prev : tensors) {
      if (prev.name == t.name) {
        throw ContainerError(ContainerErrorKind::kDuplicateName,
                             "duplicate tensor name: " + t.name);
      }
    }
    tensors.push_back(std::move(t));
  }
  return tensors;
}

// --- Tensor ⇄ record conversion ---------------------------------------------

template <typename Scalar>
constexpr DType native_dtype() {
  return sizeof(Scalar) == 4 ? DType::kSingle : DType::kDouble;
}

template <typename Scalar>
NamedTensor to_record(const std::string& name, const Tensor<Scalar>& t) {
  NamedTensor r;
  r.name = name;
  for (Index d : t.dims()) r.dims.push_back(static_cast<std::uint64_t>(d));
  r.dtype = native_dtype<Scalar>();
  r.payload.reserve(static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  for (Index i = 0; i < t.size(); ++i) {
    if constexpr (sizeof(Scalar) == 4) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t(i)));
      for (int b = 0; b < 4; ++b) r.payload.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    } else {
      const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(t(i)));
      for (int b = 0; b < 8; ++b) r.payload.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  return r;
}

// Converts a record to the requested scalar type, widening or narrowing as
// needed.
template <typename Scalar>
Tensor<Scalar> from_record(const NamedTensor& r) {
  std::vector<Index> dims;
  for (std::uint64_t d : r.dims) dims.push_back(static_cast<Index>(d));
  Tensor<Scalar> t(dims);
  const std::uint64_t n = r.element_count();
  for (std::uint64_t i = 0; i < n; ++i) {
    double value = 0.0;
    if (r.dtype == DType::kSingle) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(r.payload[i * 4 + b]) << (8 * b);
      }
      value = static_cast<double>(std::bit_cast<float>(bits));
    } else {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(r.payload[i * 8 + b]) << (8 * b);
      }
      value = std::bit_cast<double>(bits);
    }
    t(static_cast<Index>(i)) = static_cast<Scalar>(value);
  }
  return t;
}

inline const NamedTensor& find_record(const std::vector<NamedTensor>& records,
                                      const std::string& name) {
  for (const NamedTensor& r : records) {
    if (r.name == name) return r;
  }
  throw ContainerError(ContainerErrorKind::kIo, "tensor not found in container: " + name);
}

inline bool has_record(const std::vector<NamedTensor>& records, const std::string& name) {
  for (const NamedTensor& r : records) {
    if (r.name == name) return true;
  }
  return false;
}

}  // namespace qatiger
