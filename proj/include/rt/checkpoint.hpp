#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rt/tape.hpp"

namespace rt {

/// Binary tensor container: magic "RTCK", version, a free-form metadata
/// string (the CLI stores the model config there as JSON), then named f64
/// tensors. Writes go to a temp file that is renamed into place, so a
/// checkpoint on disk is never half-written. Round-trips are bit-exact.
namespace checkpoint {

constexpr char kMagic[4] = {'R', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InputError("checkpoint: truncated file");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw InputError("checkpoint: truncated string");
  return s;
}

}  // namespace detail

inline void save(const std::string& path, const std::string& meta,
                 const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ResourceError("checkpoint: cannot open " + tmp);
    os.write(kMagic, 4);
    detail::put<std::uint32_t>(os, kVersion);
    detail::put_string(os, meta);
    detail::put<std::uint64_t>(os, tensors.size());
    for (const auto& [name, m] : tensors) {
      detail::put_string(os, name);
      detail::put<std::uint64_t>(os, m->rows());
      detail::put<std::uint64_t>(os, m->cols());
      os.write(reinterpret_cast<const char*>(m->data().data()),
               static_cast<std::streamsize>(m->size() * sizeof(double)));
    }
    if (!os) throw ResourceError("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ResourceError("checkpoint: rename failed for " + path);
}

struct Loaded {
  std::string meta;
  ParamStore tensors;
};

inline Loaded load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ResourceError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw InputError("checkpoint: bad magic");
  if (detail::get<std::uint32_t>(is) != kVersion)
    throw InputError("checkpoint: unsupported version");
  Loaded out;
  out.meta = detail::get_string(is);
  const auto count = detail::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = detail::get_string(is);
    const auto rows = detail::get<std::uint64_t>(is);
    const auto cols = detail::get<std::uint64_t>(is);
    if (rows * cols > (std::uint64_t{1} << 32))
      throw InputError("checkpoint: implausible tensor size");
    Matrix m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data().data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw InputError("checkpoint: truncated payload");
    out.tensors.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace checkpoint
}  // namespace rt
