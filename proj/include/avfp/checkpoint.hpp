#pragma once

// Checkpoint file layout (all integers and floats little-endian):
//
//   "AVFP"                 4 bytes magic
//   version                u32
//   payload_length         u64
//   payload:
//     entry_count          u32
//     entry_count times:
//       name_length u32, name bytes (UTF-8)
//       rank u32, dims u64[rank]
//       data f64[product(dims)]
//   checksum               u64, FNV-1a 64 of the payload bytes

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avfp/cmapss.hpp"
#include "avfp/model.hpp"
#include "avfp/optimizer.hpp"
#include "avfp/training.hpp"

namespace avfp {

struct NamedArray {
    std::string name;
    std::vector<std::uint64_t> shape;  // zero-length dimensions allowed
    std::vector<double> data;
    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

inline constexpr char kCheckpointMagic[4] = {'A', 'V', 'F', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_arrays(const std::vector<NamedArray>& arrays, std::uint32_t version = kCheckpointVersion);
/// Validates magic, version, length and checksum before decoding anything.
std::vector<NamedArray> decode_arrays(const std::string& bytes);

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    NetworkSpec spec;
    TrainConfig config;
    NormalizationStats stats;
    ModelParams params;
    ModelParams best_params;
    OptimizerState gen_opt, disc_opt, rul_opt;
    // The generator is counter based: (seed, position) is its whole state.
    std::uint64_t rng_seed = 0;
    std::uint64_t rng_position = 0;
    std::uint64_t step = 0;
    std::uint64_t consecutive_failures = 0;
    std::uint64_t skipped_batches = 0;
    std::uint64_t best_step = 0;
    double best_validation_rmse = 0.0;
    bool has_best = false;
    std::vector<MetricPoint> trace;
    std::vector<StepRecord> steps;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<NamedArray> to_arrays(const Checkpoint& ckpt);
Checkpoint from_arrays(const std::vector<NamedArray>& arrays);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace avfp
