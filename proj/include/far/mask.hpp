#pragma once

#include <cstdint>
#include <vector>

#include "far/tensor.hpp"

namespace far {

/// Boolean h x w grid of masked (unknown) token positions.
struct MaskPlan {
    Index h = 0;
    Index w = 0;
    std::vector<std::uint8_t> masked; // row-major, 1 = masked

    static MaskPlan none(Index h, Index w) { return {h, w, std::vector<std::uint8_t>(std::size_t(h * w), 0)}; }
    static MaskPlan all(Index h, Index w) { return {h, w, std::vector<std::uint8_t>(std::size_t(h * w), 1)}; }

    bool is_masked(Index p) const { return masked[static_cast<std::size_t>(p)] != 0; }

    Index count() const {
        Index n = 0;
        for (auto m : masked) n += m ? 1 : 0;
        return n;
    }

    double realized_ratio() const { return masked.empty() ? 0.0 : double(count()) / double(h * w); }
};

} // namespace far
