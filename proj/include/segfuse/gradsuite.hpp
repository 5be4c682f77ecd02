#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace segfuse::gradsuite {

inline constexpr double kTolerance = 1e-4;
inline constexpr double kEps = 1e-5;
// Checked points keep at least this distance (along the perturbed axis) from
// relu kinks and pooling ties.
inline constexpr double kKinkMargin = 0.1;

struct CheckResult {
    std::string name;
    std::size_t coordinates = 0;
    double max_error = 0;
    bool passed = false;
};

/// Finite-difference checks, in 64-bit, of every differentiable op plus a
/// full stream and a full correction-fusion model, on small seeded problems.
std::vector<CheckResult> run(std::uint64_t seed = 7);

bool all_passed(const std::vector<CheckResult>& results);

/// "check,coordinates,max_rel_error,status" plus one line per check.
std::string report_csv(const std::vector<CheckResult>& results);

}  // namespace segfuse::gradsuite
