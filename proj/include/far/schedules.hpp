#pragma once

#include <random>

#include "far/mask.hpp"

namespace far {

/// Mask-ratio lower bound moves linearly from r_lo (level 1) to r_hi (level F).
struct MaskSchedule {
    double r_lo = 0.7;
    double r_hi = 0.0;

    void validate() const {
        require(0.0 <= r_hi && r_hi <= r_lo && r_lo <= 1.0, "MaskSchedule: need 0 <= r_hi <= r_lo <= 1");
    }
};

double mask_lower_bound(int level, int levels, const MaskSchedule& sched);

/// Masks floor(ratio * h * w) positions chosen uniformly without replacement.
MaskPlan mask_from_ratio(Index h, Index w, double ratio, std::mt19937_64& rng);

/// Draws ratio ~ U[r_i, 1] and masks accordingly.
MaskPlan sample_mask(Index h, Index w, int level, int levels, const MaskSchedule& sched, std::mt19937_64& rng);

} // namespace far
