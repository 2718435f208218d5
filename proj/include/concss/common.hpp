#ifndef CONCSS_COMMON_HPP
#define CONCSS_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace concss {

/// All recoverable failures (bad input, violated preconditions) are reported
/// with this type. The message is a single line suitable for a CLI diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace concss

#endif  // CONCSS_COMMON_HPP
