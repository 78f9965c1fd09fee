#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace abmem {

using Rng = std::mt19937_64;

// Independent stream for one purpose ("data", "episode", "init", "dropout",
// ...) derived from the run's root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);
Rng make_rng(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

}  // namespace abmem
