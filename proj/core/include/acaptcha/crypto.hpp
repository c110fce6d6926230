#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace acaptcha {

/// `bytes` bytes from the OS CSPRNG, hex encoded (2 * bytes chars).
std::string random_hex(std::size_t bytes);

std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);

/// Constant-time equality for secrets.
bool secure_equals(std::string_view a, std::string_view b) noexcept;

}  // namespace acaptcha
