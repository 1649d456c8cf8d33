#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hkt/blocks.hpp"

namespace hkt::nn {

/// Training metadata carried alongside the parameters.
struct CheckpointMeta {
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
};

// Checkpoint format: magic "HKTC", u32 version, then little-endian
// length-prefixed named f64 arrays per block. Round trips are bitwise.

std::vector<std::uint8_t> serialize_net(const BlockNet& net, const CheckpointMeta& meta);

/// Throws IoError for foreign bytes, CheckpointVersionError for an
/// unsupported version, CheckpointTruncatedError when the payload ends
/// early, CheckpointShapeError when declared shapes disagree with data.
std::pair<BlockNet, CheckpointMeta> deserialize_net(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const BlockNet& net, const CheckpointMeta& meta, const std::string& path);
std::pair<BlockNet, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace hkt::nn
