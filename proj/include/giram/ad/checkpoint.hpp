#pragma once

// Binary parameter checkpoint:
//   "GIRAMPAR" u32 version u64 count
//   count x { u32 name_len, name bytes, u64 rows, u64 cols, rows*cols f64 (column-major) }
// Values are written bit-for-bit, so a load restores exactly what was saved.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "giram/ad/tensor.hpp"
#include "giram/error.hpp"

namespace giram::io {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("corrupt file: unexpected end of data");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::size_t max_len = 1u << 20) {
  auto n = read_pod<std::uint32_t>(in);
  if (n > max_len) throw DataError("corrupt file: string length out of range");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw DataError("corrupt file: unexpected end of data");
  return s;
}

inline void write_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::istream& in, double* p, std::size_t n) {
  if (n && !in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw DataError("corrupt file: unexpected end of data");
  }
}

inline void expect_magic(std::istream& in, const char (&magic)[9]) {
  char buf[8];
  if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) {
    throw DataError(std::string("corrupt file: bad magic, expected ") + magic);
  }
}

}  // namespace giram::io

namespace giram::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_parameters(std::ostream& out, const ConstParameterList& params) {
  out.write("GIRAMPAR", 8);
  io::write_pod(out, kCheckpointVersion);
  io::write_pod<std::uint64_t>(out, params.size());
  for (const auto* p : params) {
    io::write_string(out, p->name);
    io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(p->rows()));
    io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(p->cols()));
    io::write_doubles(out, p->value.data(), static_cast<std::size_t>(p->value.size()));
  }
}

/// Name -> value map as stored in a checkpoint stream.
inline std::map<std::string, Matrix> read_parameters(std::istream& in) {
  io::expect_magic(in, "GIRAMPAR");
  auto version = io::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version mismatch: " + std::to_string(version));
  }
  auto count = io::read_pod<std::uint64_t>(in);
  std::map<std::string, Matrix> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = io::read_string(in);
    auto rows = io::read_pod<std::uint64_t>(in);
    auto cols = io::read_pod<std::uint64_t>(in);
    if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (1ull << 32)) {
      throw DataError("corrupt file: tensor shape out of range");
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    io::read_doubles(in, m.data(), static_cast<std::size_t>(rows * cols));
    if (!out.emplace(name, std::move(m)).second) throw DataError("duplicate tensor name: " + name);
  }
  return out;
}

/// Restores values by name; every parameter must be present with its shape.
inline void load_parameters(std::istream& in, const ParameterList& params) {
  auto stored = read_parameters(in);
  for (auto* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw DataError("checkpoint is missing tensor '" + p->name + "'");
    if (it->second.rows() != p->rows() || it->second.cols() != p->cols()) {
      throw DataError("checkpoint shape mismatch for '" + p->name + "'");
    }
    p->value = it->second;
  }
}

inline void save_parameters(const std::string& path, const ConstParameterList& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  save_parameters(out, params);
}

inline void load_parameters(const std::string& path, const ParameterList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  load_parameters(in, params);
}

}  // namespace giram::ad
