#include "far/diffloss.hpp"

#include <cmath>
#include <numbers>

namespace far {

double NoiseSchedule::cosine_alpha_bar(double t, double total) {
    const auto f = [](double u) {
        const double c = std::cos((u + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
        return c * c;
    };
    return f(t / total) / f(0.0);
}

NoiseSchedule::NoiseSchedule(int steps) : steps_(steps) {
    require(steps >= 2, "NoiseSchedule: need at least two steps");
    alpha_bar_.resize(static_cast<std::size_t>(steps) + 1);
    alpha_bar_[0] = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double ab = cosine_alpha_bar(double(t), double(steps));
        alpha_bar_[std::size_t(t)] = std::max(ab, alpha_bar_[std::size_t(t - 1)] * (1.0 - kMaxBeta));
    }
}

std::vector<int> NoiseSchedule::respaced(int count) const {
    if (count < 1 || count > steps_)
        throw UsageError("respaced: step count " + std::to_string(count) + " outside [1, " + std::to_string(steps_) + "]");
    std::vector<int> ts(static_cast<std::size_t>(count));
    if (count == 1) {
        ts[0] = steps_;
        return ts;
    }
    for (int k = 0; k < count; ++k) {
        const double u = double(steps_ - 1) * double(k) / double(count - 1);
        ts[std::size_t(k)] = steps_ - static_cast<int>(std::lround(u));
    }
    return ts;
}

double loss_weight(int level, int levels) {
    require(levels >= 1 && level >= 1 && level <= levels, "loss_weight: level out of range");
    return 1.0 + std::sin(std::numbers::pi / 2.0 * double(level) / double(levels));
}

int allocate_steps(int level, int levels, int t_min, int t_max) {
    require(levels >= 2, "allocate_steps: need at least two levels");
    require(level >= 1 && level <= levels, "allocate_steps: level out of range");
    require(t_min >= 1 && t_max >= t_min, "allocate_steps: need 1 <= t_min <= t_max");
    return static_cast<int>(
        std::lround(double(t_min) + double(t_max - t_min) * double(level - 1) / double(levels - 1)));
}

} // namespace far
