#include "cascade/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cascade/errors.hpp"

namespace cascade::policy {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'S', 'C', 'D', 'P', 'O', 'L', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw InvalidArgument("truncated checkpoint");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const PolicyParams& params) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.vocab_size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.context_order()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.version_tag().size()));
  out.write(params.version_tag().data(), static_cast<std::streamsize>(params.version_tag().size()));
  for (double x : params.logits()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  if (!out) throw InvalidState("failed to write checkpoint");
}

PolicyParams read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidArgument("not a policy checkpoint");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw InvalidArgument("unsupported checkpoint version " + std::to_string(version));
  const auto vocab = get_le<std::uint32_t>(in);
  const auto order = get_le<std::uint32_t>(in);
  const auto tag_len = get_le<std::uint32_t>(in);
  if (tag_len > (1u << 16)) throw InvalidArgument("corrupt checkpoint tag length");
  std::string tag(tag_len, '\0');
  in.read(tag.data(), tag_len);
  if (!in) throw InvalidArgument("truncated checkpoint");
  PolicyParams params(static_cast<int>(vocab), static_cast<int>(order), tag);
  for (std::size_t i = 0; i < params.num_params(); ++i) {
    const double x = std::bit_cast<double>(get_le<std::uint64_t>(in));
    if (!std::isfinite(x)) throw NumericFault("non-finite logit in checkpoint", i);
    params.logits()[i] = x;
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidState("cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace cascade::policy
