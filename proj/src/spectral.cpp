#include "far/spectral.hpp"

#include <algorithm>
#include <numbers>

namespace far {

FilterKind parse_filter_kind(const std::string& name) {
    if (name == "spatial" || name == "spatial-downup") return FilterKind::SpatialDownUp;
    if (name == "fourier" || name == "fourier-mask") return FilterKind::FourierMask;
    throw UsageError("unknown filter kind '" + name + "' (expected spatial or fourier)");
}

std::string to_string(FilterKind kind) {
    return kind == FilterKind::SpatialDownUp ? "spatial" : "fourier";
}

FrequencySchedule FrequencySchedule::linear(int levels, FilterKind kind, Index side) {
    require(levels >= 2, "FrequencySchedule: need at least two levels");
    if (kind == FilterKind::FourierMask) {
        std::vector<double> cutoffs;
        for (int i = 1; i <= levels; ++i) cutoffs.push_back(double(i - 1) / double(levels - 1));
        return fourier(std::move(cutoffs));
    }
    require(side >= 1, "FrequencySchedule: side must be positive");
    std::vector<Index> sides;
    for (int i = 1; i <= levels; ++i)
        sides.push_back(static_cast<Index>(std::lround(1.0 + double(side - 1) * double(i - 1) / double(levels - 1))));
    return spatial(std::move(sides));
}

FrequencySchedule FrequencySchedule::fourier(std::vector<double> cutoffs) {
    require(cutoffs.size() >= 2, "FrequencySchedule: need at least two levels");
    require(cutoffs.front() >= 0.0, "FrequencySchedule: cutoffs must be non-negative");
    for (std::size_t i = 1; i < cutoffs.size(); ++i)
        require(cutoffs[i] > cutoffs[i - 1], "FrequencySchedule: cutoffs must be strictly increasing");
    require(cutoffs.back() == 1.0, "FrequencySchedule: last cutoff must be 1");
    FrequencySchedule s;
    s.levels_ = static_cast<int>(cutoffs.size());
    s.kind_ = FilterKind::FourierMask;
    s.cutoffs_ = std::move(cutoffs);
    return s;
}

FrequencySchedule FrequencySchedule::spatial(std::vector<Index> sides) {
    require(sides.size() >= 2, "FrequencySchedule: need at least two levels");
    require(sides.front() >= 1, "FrequencySchedule: sides must be positive");
    // Non-decreasing: a grid with fewer sides than levels repeats some sizes.
    for (std::size_t i = 1; i < sides.size(); ++i)
        require(sides[i] >= sides[i - 1], "FrequencySchedule: sides must be non-decreasing");
    FrequencySchedule s;
    s.levels_ = static_cast<int>(sides.size());
    s.kind_ = FilterKind::SpatialDownUp;
    s.sides_ = std::move(sides);
    return s;
}

void FrequencySchedule::check_level(int level) const {
    if (level < 1 || level > levels_)
        throw UsageError("frequency level " + std::to_string(level) + " outside [1, " +
                         std::to_string(levels_) + "]");
}

double FrequencySchedule::cutoff(int level) const {
    check_level(level);
    require(kind_ == FilterKind::FourierMask, "cutoff() requires a fourier-mask schedule");
    return cutoffs_[static_cast<std::size_t>(level - 1)];
}

Index FrequencySchedule::side(int level) const {
    check_level(level);
    require(kind_ == FilterKind::SpatialDownUp, "side() requires a spatial-downup schedule");
    return sides_[static_cast<std::size_t>(level - 1)];
}

namespace {

Index folded(Index k, Index n) { return std::min(k, n - k); }

double normalized_radius(Index ky, Index kx, Index h, Index w) {
    const double fy = double(folded(ky, h));
    const double fx = double(folded(kx, w));
    const double my = double(h / 2);
    const double mx = double(w / 2);
    const double rmax = std::sqrt(my * my + mx * mx);
    if (rmax == 0.0) return 0.0;
    return std::sqrt(fy * fy + fx * fx) / rmax;
}

std::pair<Index, Index> spatial_target(Index h, Index w, Index s) {
    const Index side = std::max(h, w);
    if (h == w) return {s, s};
    const auto scaled = [&](Index n) {
        return std::max<Index>(1, static_cast<Index>(std::lround(double(s) * double(n) / double(side))));
    };
    return {scaled(h), scaled(w)};
}

Mat<double> fourier_operator(Index h, Index w, double cutoff) {
    const Index n = h * w;
    Mat<double> op = Mat<double>::Zero(n, n);
    Mat<double> imag = Mat<double>::Zero(n, n);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (Index ky = 0; ky < h; ++ky) {
        for (Index kx = 0; kx < w; ++kx) {
            if (normalized_radius(ky, kx, h, w) > cutoff + 1e-12) continue;
            for (Index dy = -(h - 1); dy < h; ++dy) {
                for (Index dx = -(w - 1); dx < w; ++dx) {
                    const double phase = two_pi * (double(ky * dy) / double(h) + double(kx * dx) / double(w));
                    const double c = std::cos(phase) / double(n);
                    const double s = std::sin(phase) / double(n);
                    // Accumulate into every (p, q) pair with offset p - q = (dy, dx).
                    for (Index y = std::max<Index>(0, dy); y < std::min(h, h + dy); ++y) {
                        for (Index x = std::max<Index>(0, dx); x < std::min(w, w + dx); ++x) {
                            const Index p = y * w + x;
                            const Index q = (y - dy) * w + (x - dx);
                            op(p, q) += c;
                            imag(p, q) += s;
                        }
                    }
                }
            }
        }
    }
    if (imag.cwiseAbs().maxCoeff() > 1e-9)
        throw NumericError("fourier_operator: mask is not conjugate-symmetric");
    return op;
}

Mat<double> spatial_operator(Index h, Index w, Index s) {
    if (s > std::max(h, w))
        throw UsageError("spatial_downup: target side " + std::to_string(s) + " exceeds grid side");
    const auto [sh, sw] = spatial_target(h, w, s);
    const Mat<double> ay = bilinear_upsample_1d(sh, h) * area_downsample_1d(h, sh);
    const Mat<double> ax = bilinear_upsample_1d(sw, w) * area_downsample_1d(w, sw);
    const Index n = h * w;
    Mat<double> op(n, n);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
            for (Index yy = 0; yy < h; ++yy)
                for (Index xx = 0; xx < w; ++xx) op(y * w + x, yy * w + xx) = ay(y, yy) * ax(x, xx);
    // Restore the grid mean lost by non-integer resampling ratios: P + (1/n) 1 1^T (I - P).
    const RowVec<double> loss = (RowVec<double>::Ones(n) - op.colwise().sum()) / double(n);
    op.rowwise() += loss;
    return op;
}

} // namespace

Mat<double> area_downsample_1d(Index n, Index s) {
    require(s >= 1 && s <= n, "area_downsample_1d: need 1 <= s <= n");
    Mat<double> d = Mat<double>::Zero(s, n);
    const double scale = double(n) / double(s);
    for (Index j = 0; j < s; ++j) {
        const double lo = double(j) * scale;
        const double hi = double(j + 1) * scale;
        for (Index i = static_cast<Index>(std::floor(lo)); i < n && double(i) < hi; ++i) {
            const double overlap = std::min(hi, double(i + 1)) - std::max(lo, double(i));
            if (overlap > 0.0) d(j, i) = overlap / scale;
        }
    }
    return d;
}

Mat<double> bilinear_upsample_1d(Index s, Index n) {
    require(s >= 1 && n >= 1, "bilinear_upsample_1d: sizes must be positive");
    Mat<double> u = Mat<double>::Zero(n, s);
    for (Index i = 0; i < n; ++i) {
        double src = (double(i) + 0.5) * double(s) / double(n) - 0.5;
        src = std::clamp(src, 0.0, double(s - 1));
        const Index i0 = static_cast<Index>(std::floor(src));
        const Index i1 = std::min(i0 + 1, s - 1);
        const double frac = src - double(i0);
        u(i, i0) += 1.0 - frac;
        u(i, i1) += frac;
    }
    return u;
}

Mat<double> filter_operator(Index h, Index w, int level, const FrequencySchedule& sched) {
    sched.check_level(level);
    require(h >= 1 && w >= 1, "filter_operator: grid must be non-empty");
    if (sched.kind() == FilterKind::FourierMask) return fourier_operator(h, w, sched.cutoff(level));
    if (level == sched.levels() && sched.side(level) != std::max(h, w))
        throw UsageError("spatial_downup: last level side must equal the grid side");
    return spatial_operator(h, w, sched.side(level));
}

namespace {
Mat<std::complex<double>> dft_matrix(Index n, double sign) {
    Mat<std::complex<double>> f(n, n);
    for (Index k = 0; k < n; ++k)
        for (Index j = 0; j < n; ++j)
            f(k, j) = std::polar(1.0, sign * 2.0 * std::numbers::pi * double((k * j) % n) / double(n));
    return f;
}
} // namespace

Mat<std::complex<double>> dft2(const Mat<std::complex<double>>& plane, bool inverse) {
    const double sign = inverse ? 1.0 : -1.0;
    Mat<std::complex<double>> out = dft_matrix(plane.rows(), sign) * plane * dft_matrix(plane.cols(), sign).transpose();
    if (inverse) out /= double(plane.size());
    return out;
}

Mat<std::complex<double>> dft2(const Mat<double>& plane) {
    return dft2(plane.cast<std::complex<double>>().eval(), false);
}

std::vector<bool> passband(Index h, Index w, int level, const FrequencySchedule& sched) {
    sched.check_level(level);
    std::vector<bool> keep(static_cast<std::size_t>(h * w));
    if (sched.kind() == FilterKind::FourierMask) {
        const double c = sched.cutoff(level);
        for (Index ky = 0; ky < h; ++ky)
            for (Index kx = 0; kx < w; ++kx)
                keep[static_cast<std::size_t>(ky * w + kx)] = normalized_radius(ky, kx, h, w) <= c + 1e-12;
    } else {
        const auto [sh, sw] = spatial_target(h, w, sched.side(level));
        for (Index ky = 0; ky < h; ++ky)
            for (Index kx = 0; kx < w; ++kx)
                keep[static_cast<std::size_t>(ky * w + kx)] =
                    2 * folded(ky, h) <= sh && 2 * folded(kx, w) <= sw;
    }
    return keep;
}

namespace detail {

namespace {
Mat<double> channel_plane(const Mat<double>& data, Index h, Index w, Index k) {
    Mat<double> plane(h, w);
    for (Index p = 0; p < h * w; ++p) plane(p / w, p % w) = data(p, k);
    return plane;
}
} // namespace

void check_grid_finite(const Mat<double>& data) {
    if (!data.allFinite()) throw NumericError("non-finite grid values");
}

std::vector<double> radial_power_spectrum(Index h, Index w, const Mat<double>& data) {
    require(h == w, "radial_power_spectrum: grid must be square");
    check_grid_finite(data);
    const Index bins = (h + 1) / 2;
    std::vector<double> energy(static_cast<std::size_t>(bins), 0.0);
    const double norm = double(h * w) * double(data.cols());
    for (Index k = 0; k < data.cols(); ++k) {
        const Mat<double> plane = channel_plane(data, h, w, k);
        const auto spec = dft2(plane);
        for (Index ky = 0; ky < h; ++ky) {
            for (Index kx = 0; kx < w; ++kx) {
                const double fy = double(folded(ky, h));
                const double fx = double(folded(kx, w));
                const Index bin = std::min<Index>(bins - 1, static_cast<Index>(std::floor(std::sqrt(fy * fy + fx * fx))));
                energy[static_cast<std::size_t>(bin)] += std::norm(spec(ky, kx)) / norm;
            }
        }
    }
    return energy;
}

double passband_energy_fraction(Index h, Index w, const Mat<double>& data, int level,
                                const FrequencySchedule& sched) {
    check_grid_finite(data);
    const auto keep = passband(h, w, level, sched);
    double inside = 0.0;
    double total = 0.0;
    for (Index k = 0; k < data.cols(); ++k) {
        const auto spec = dft2(channel_plane(data, h, w, k));
        for (Index p = 0; p < h * w; ++p) {
            const double e = std::norm(spec(p / w, p % w));
            total += e;
            if (keep[static_cast<std::size_t>(p)]) inside += e;
        }
    }
    return total > 0.0 ? inside / total : 1.0;
}

} // namespace detail

double icr_discrete(double codebook_size, double factor) {
    require(codebook_size >= 2.0, "icr_discrete: codebook size must be >= 2");
    require(factor >= 1.0, "icr_discrete: downscale factor must be >= 1");
    return std::log2(codebook_size) / (24.0 * factor * factor);
}

double icr_continuous(double channels, double factor) {
    require(channels >= 1.0, "icr_continuous: channel count must be >= 1");
    require(factor >= 1.0, "icr_continuous: downscale factor must be >= 1");
    return 32.0 * channels / (24.0 * factor * factor);
}

} // namespace far
