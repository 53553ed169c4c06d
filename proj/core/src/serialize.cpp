#include "handocc/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "handocc/error.hpp"

namespace handocc {

namespace {

constexpr std::array<char, 4> kMagic{'O', 'T', 'N', 'S'};
constexpr std::uint32_t kMaxRank = 16;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("OTNS: unexpected end of stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("OTNS: write failed");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic;
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("OTNS: bad magic");
  const auto rank = get_le<std::uint32_t>(in);
  if (rank == 0 || rank > kMaxRank) throw IoError("OTNS: unsupported rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    if (d == 0) throw IoError("OTNS: zero dimension");
  }
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(data));
}

std::size_t encoded_size(const Tensor& t) { return 4 + 4 + 8 * t.rank() + 8 * t.size(); }

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

void write_tensor_table(std::ostream& out, const std::vector<NamedTensor>& table) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, value] : table) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, value);
  }
  if (!out) throw IoError("tensor table: write failed");
}

std::vector<NamedTensor> read_tensor_table(std::istream& in) {
  const auto count = get_le<std::uint32_t>(in);
  std::vector<NamedTensor> table;
  table.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in);
    if (len > 4096) throw IoError("tensor table: implausible name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw IoError("tensor table: truncated name");
    table.push_back({std::move(name), read_tensor(in)});
  }
  return table;
}

}  // namespace handocc
