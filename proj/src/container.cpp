#include "equinet/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace equinet {

static_assert(std::endian::native == std::endian::little, "WT1 I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'W', 'T', '1', '\0'};

template <typename T>
void write_impl(const std::string& path, const Tensor<T>& t, uint8_t dtype) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(kMagic, 4);
  f.put(static_cast<char>(dtype));
  f.put(static_cast<char>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) {
    const uint64_t e = static_cast<uint64_t>(t.extent(d));
    f.write(reinterpret_cast<const char*>(&e), sizeof(e));
  }
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!f) throw std::runtime_error("short write to '" + path + "'");
}

Wt1Header read_header(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("'" + path + "' is not a WT1 container");
  Wt1Header h;
  h.dtype = f.get();
  const int ndim = f.get();
  if (h.dtype < 0 || h.dtype > 1 || ndim < 0) throw std::runtime_error("'" + path + "' has a corrupt WT1 header");
  for (int d = 0; d < ndim; ++d) {
    uint64_t e = 0;
    f.read(reinterpret_cast<char*>(&e), sizeof(e));
    h.dims.push_back(static_cast<int64_t>(e));
  }
  if (!f) throw std::runtime_error("'" + path + "' has a truncated WT1 header");
  return h;
}

template <typename T>
Tensor<T> read_impl(const std::string& path, int expected_dtype) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  const Wt1Header h = read_header(f, path);
  if (h.dtype != expected_dtype) throw std::runtime_error("'" + path + "' holds a different dtype");
  std::vector<int> dims;
  for (int64_t e : h.dims) dims.push_back(static_cast<int>(e));
  Tensor<T> t(dims);
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!f) throw std::runtime_error("'" + path + "' is truncated");
  return t;
}

}  // namespace

void write_wt1(const std::string& path, const Tensor<float>& t) { write_impl(path, t, 0); }
void write_wt1(const std::string& path, const Tensor<double>& t) { write_impl(path, t, 1); }

Wt1Header peek_wt1(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return read_header(f, path);
}

Tensor<float> read_wt1_f32(const std::string& path) { return read_impl<float>(path, 0); }
Tensor<double> read_wt1_f64(const std::string& path) { return read_impl<double>(path, 1); }

Tensor<double> read_wt1_as_f64(const std::string& path) {
  const Wt1Header h = peek_wt1(path);
  if (h.dtype == 1) return read_wt1_f64(path);
  return read_wt1_f32(path).cast<double>();
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << contents;
  if (!f) throw std::runtime_error("short write to '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace equinet
