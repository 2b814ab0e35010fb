#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "msmgn/nn/layers.hpp"

namespace msmgn::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'S', 'M', 'G', 'N', 'C', 'K', 'P'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(fmt::format("checkpoint truncated in {}", what));
  return v;
}

std::string get_string(std::istream& in, const char* what) {
  const auto n = get<std::uint32_t>(in, what);
  if (n > (1u << 20)) throw ParseError(fmt::format("checkpoint {} length {} is implausible", what, n));
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw ParseError(fmt::format("checkpoint truncated in {}", what));
  return s;
}

}  // namespace

const Matrix& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, m] : blocks) {
    if (n == name) return m;
  }
  throw ParseError("checkpoint has no block named " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.first == name) return true;
  }
  return false;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& [name, m] : ckpt.blocks) {
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError("not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != Checkpoint::kVersion) throw ParseError(fmt::format("unsupported checkpoint version {}", version));
  Checkpoint ckpt;
  const auto nmeta = get<std::uint32_t>(in, "meta count");
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = get_string(in, "meta key");
    ckpt.meta[k] = get_string(in, "meta value");
  }
  const auto nblocks = get<std::uint32_t>(in, "block count");
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    std::string name = get_string(in, "block name");
    const auto rows = get<std::uint64_t>(in, "block rows");
    const auto cols = get<std::uint64_t>(in, "block cols");
    if (rows > (1ull << 32) || cols > (1ull << 32) || rows * cols > (1ull << 34)) {
      throw ParseError(fmt::format("block {} has implausible shape {}x{}", name, rows, cols));
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw ParseError("checkpoint truncated in block " + name);
    }
    ckpt.blocks.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace msmgn::nn
