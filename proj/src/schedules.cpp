#include "far/schedules.hpp"

#include <cmath>
#include <numeric>

namespace far {

double mask_lower_bound(int level, int levels, const MaskSchedule& sched) {
    sched.validate();
    require(levels >= 2, "mask_lower_bound: need at least two levels");
    require(level >= 1 && level <= levels, "mask_lower_bound: level out of range");
    const double u = double(levels - level) / double(levels - 1);
    return sched.r_hi + (sched.r_lo - sched.r_hi) * u;
}

MaskPlan mask_from_ratio(Index h, Index w, double ratio, std::mt19937_64& rng) {
    require(h >= 1 && w >= 1, "mask_from_ratio: grid must be non-empty");
    require(ratio >= 0.0 && ratio <= 1.0, "mask_from_ratio: ratio must lie in [0, 1]");
    const Index n = h * w;
    const Index count = std::min(n, static_cast<Index>(std::floor(ratio * double(n))));
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    MaskPlan plan = MaskPlan::none(h, w);
    // Partial Fisher-Yates: the first `count` slots are a uniform sample.
    for (Index i = 0; i < count; ++i) {
        std::uniform_int_distribution<Index> pick(i, n - 1);
        std::swap(order[std::size_t(i)], order[std::size_t(pick(rng))]);
        plan.masked[std::size_t(order[std::size_t(i)])] = 1;
    }
    return plan;
}

MaskPlan sample_mask(Index h, Index w, int level, int levels, const MaskSchedule& sched, std::mt19937_64& rng) {
    const double lo = mask_lower_bound(level, levels, sched);
    std::uniform_real_distribution<double> u(lo, 1.0);
    const double ratio = lo < 1.0 ? u(rng) : 1.0;
    return mask_from_ratio(h, w, ratio, rng);
}

} // namespace far
