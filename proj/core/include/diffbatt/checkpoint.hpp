#pragma once

#include <filesystem>

#include "diffbatt/training.hpp"

namespace diffbatt {

inline constexpr int kCheckpointVersion = 1;

/// Text header (version, configuration, schedule, grid, feature statistics,
/// optimizer step) followed by named float32 little-endian blobs, each with a
/// CRC-32. Parameters, EMA weights and Adam moments are stored.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);

/// Throws CorruptionError for truncated or checksum-mismatched files and
/// IncompatibleError for a different format version, parameter shapes that
/// disagree with the stored configuration, or a configuration that differs
/// from `expected` when given.
TrainState load_checkpoint(const std::filesystem::path& path, const DenoiserConfig* expected = nullptr);

}  // namespace diffbatt
