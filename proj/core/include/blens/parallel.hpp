#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace blens {

/// Runs body(i) for i in [0, count) on up to `jobs` threads. Work is handed
/// out by an atomic counter, so bodies must write only to slot i of their
/// outputs. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body);

/// SplitMix64 finaliser; used to derive independent seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

}  // namespace blens
