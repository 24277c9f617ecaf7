#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace vreid {

/// 64-bit FNV-1a, used for provenance fingerprints (not for security).
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Caps worker threads for parallel_for; 0 means hardware concurrency.
void set_max_threads(unsigned threads);
unsigned max_threads();

/// Runs fn(i) for i in [0, n) across worker threads. Each index is handled by
/// exactly one call, so writes to per-index slots are scheduling-independent.
/// The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace vreid
