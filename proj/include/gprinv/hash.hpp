#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace gprinv {

std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::uint64_t hash_file(const std::filesystem::path& path);

std::string to_hex(std::uint64_t value);

// Stream splitting: each (master, tag, index) triple gets an independent
// 64-bit seed through a splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) noexcept;

}  // namespace gprinv
