#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tmclass/estimator.hpp"

namespace tmclass {

/// Optimizer and progress state carried by training checkpoints.
struct OptimizerSnapshot {
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;

    friend bool operator==(const OptimizerSnapshot&, const OptimizerSnapshot&) = default;
};

struct Checkpoint {
    EstimatorConfig config;
    EstimatorParams params;
    std::optional<OptimizerSnapshot> optimizer;
};

// Checkpoint container, little-endian:
//   magic "TMCK", u32 version (1)
//   u32 n, n bytes of JSON: {"estimator": {...}, "layout": [[name, rows, cols], ...]}
//   u64 parameter count, f32 values in layout order
//   u32 has_optimizer; if 1: u64 step, u64 seed, u64 n, n f64 first moments, n f64 second moments
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);

/// Writes to a sibling temporary file and renames it over `path`, so an I/O
/// failure never clobbers an existing checkpoint.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tmclass
