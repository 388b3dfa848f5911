#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "taxo/rnn.hpp"

namespace taxo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint, all integers and floats little-endian:
///
///   "TAXOCKPT"            8-byte magic
///   u32 version           kCheckpointVersion
///   u32 cell kind         0 = GRU, 1 = LSTM
///   u64 input_dim, u64 hidden_dim, u64 num_classes
///   u32 tensor count
///   per tensor: u32 name length, name bytes, u64 rows, u64 cols,
///               rows * cols IEEE-754 binary64 values in row-major order
///
/// Tensors appear in for_each_tensor order; vectors are stored as rows x 1.
void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace taxo
