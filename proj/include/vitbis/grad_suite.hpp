#pragma once

#include <cstdint>
#include <iosfwd>

namespace vitbis {

// Central-finite-difference sweep (h = 1e-5, relative tolerance 1e-4) over
// every differentiable primitive plus the composed blocks, repeated across
// `seeds` consecutive seeds starting at base_seed. Writes one line per check
// to `out` and a final tally; returns true only when every check passed.
bool run_gradient_suite(std::uint64_t base_seed, std::ostream& out,
                        std::int64_t seeds = 5);

}  // namespace vitbis
