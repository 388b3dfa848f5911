#include "taxo/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace taxo {

namespace {

constexpr std::array<char, 8> kMagic{'T', 'A', 'X', 'O', 'C', 'K', 'P', 'T'};

template <typename UInt>
void put(std::ostream& out, UInt value) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes, sizeof bytes);
}

template <typename UInt>
UInt get(std::istream& in) {
  unsigned char bytes[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof bytes))
    throw ParseError("<checkpoint>", 0, "truncated file");
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model) {
  model.validate();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, model.kind() == CellKind::GRU ? 0u : 1u);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(model.input_dim()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(model.hidden_dim()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(model.num_classes()));
  std::uint32_t count = 0;
  for_each_tensor(model, [&](std::string_view, const auto&) { ++count; });
  put<std::uint32_t>(out, count);
  for_each_tensor(model, [&](std::string_view name, const auto& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    for (Index r = 0; r < t.rows(); ++r)
      for (Index c = 0; c < t.cols(); ++c)
        put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t(r, c)));
  });
  if (!out) throw Error("checkpoint: write failed");
}

Model read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw ParseError("<checkpoint>", 0, "bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ParseError("<checkpoint>", 0, "unsupported version " + std::to_string(version));
  const auto kind_code = get<std::uint32_t>(in);
  if (kind_code > 1) throw ParseError("<checkpoint>", 0, "unknown cell kind");
  const auto input_dim = static_cast<Index>(get<std::uint64_t>(in));
  const auto hidden_dim = static_cast<Index>(get<std::uint64_t>(in));
  const auto num_classes = static_cast<Index>(get<std::uint64_t>(in));
  if (input_dim < 1 || hidden_dim < 1 || num_classes < 2 || input_dim > (1 << 24) ||
      hidden_dim > (1 << 24) || num_classes > (1 << 24))
    throw ParseError("<checkpoint>", 0, "implausible dimensions");
  Model model = Model::zeros(kind_code == 0 ? CellKind::GRU : CellKind::LSTM, input_dim, hidden_dim,
                             num_classes);
  std::uint32_t expected = 0;
  for_each_tensor(model, [&](std::string_view, const auto&) { ++expected; });
  if (get<std::uint32_t>(in) != expected) throw ParseError("<checkpoint>", 0, "tensor count");
  for_each_tensor(model, [&](std::string_view name, auto& t) {
    const auto len = get<std::uint32_t>(in);
    std::string stored(len, '\0');
    if (len > 256 || !in.read(stored.data(), len) || stored != name)
      throw ParseError("<checkpoint>", 0, "expected tensor '" + std::string(name) + "'");
    const auto rows = static_cast<Index>(get<std::uint64_t>(in));
    const auto cols = static_cast<Index>(get<std::uint64_t>(in));
    if (rows != t.rows() || cols != t.cols())
      throw ParseError("<checkpoint>", 0, "tensor '" + std::string(name) + "' has wrong shape");
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) t(r, c) = std::bit_cast<double>(get<std::uint64_t>(in));
  });
  model.validate();
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open checkpoint");
  return read_checkpoint(in);
}

}  // namespace taxo
