#pragma once

// Policy checkpoint file, little-endian binary:
//
//   offset  size  field
//   0       8     magic "CSCDPOL1"
//   8       4     format version (uint32, currently 1)
//   12      4     vocab_size (uint32)
//   16      4     context_order (uint32)
//   20      4     version tag length L (uint32)
//   24      L     version tag bytes (UTF-8, no terminator)
//   24+L    8*N   logits as IEEE-754 binary64, N = vocab_size^(order+1), row-major by state
//
// The encoding has no padding or timestamps, so equal policies produce identical bytes.

#include <filesystem>
#include <iosfwd>

#include "cascade/policy.hpp"

namespace cascade::policy {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const PolicyParams& params);
PolicyParams read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace cascade::policy
