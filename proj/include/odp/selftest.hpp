#pragma once

#include <ostream>

namespace odp {

/// Fast invariant suite (gradient spot checks, score exactness, guidance
/// identities, schedule and RNG properties). Prints one line per check and
/// returns the number of failures.
int run_selftest(std::ostream& out);

}  // namespace odp
