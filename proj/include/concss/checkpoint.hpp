#ifndef CONCSS_CHECKPOINT_HPP
#define CONCSS_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>

#include "concss/apm.hpp"
#include "concss/encoder.hpp"

namespace concss {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

struct Checkpoint {
  CheckpointMeta meta;
  EncoderPair encoders;
  std::optional<ApmParams> apm;
};

/// Little-endian layout:
///   "CCKP" | version u32 | seed u64 | step u64 | block count u32
///   per block: tag[4] | dim count u32 | dims u32... | value count u64 | f64 values
/// Tags: "ENCT" (text encoder), "ENCA" (audio encoder), "APM1" (optional).
/// Encoder dims are {input, embed, hidden, output, buckets}; APM dims are
/// {context, attn, 6}. Values follow each struct's block visiting order,
/// every matrix column-major.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws a dimension error naming the first mismatching field.
void require_dims(const EncoderParams& params, const EncoderDims& expected, const char* what);

}  // namespace concss

#endif  // CONCSS_CHECKPOINT_HPP
