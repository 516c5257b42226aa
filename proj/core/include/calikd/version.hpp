#pragma once

namespace calikd {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// Identifier of the PRNG algorithm, recorded in run metadata so results
/// can be tied to the exact generator.
inline constexpr const char* kPrngId = "pcg32-xsh-rr-64/32";

}  // namespace calikd
