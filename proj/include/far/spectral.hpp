#pragma once

#include <complex>
#include <map>
#include <vector>

#include "far/tensor.hpp"

namespace far {

enum class FilterKind { SpatialDownUp, FourierMask };

FilterKind parse_filter_kind(const std::string& name);
std::string to_string(FilterKind kind);

/// Per-level low-pass parameters for F frequency levels.
///
/// Fourier levels carry a cutoff on the normalized radial frequency (0 keeps
/// only DC, 1 keeps everything). Spatial levels carry the side length of the
/// intermediate resampled grid. Level F always reproduces the input.
class FrequencySchedule {
public:
    /// Linear progression: cutoffs (i-1)/(F-1), sides round(1 + (side-1)(i-1)/(F-1)).
    static FrequencySchedule linear(int levels, FilterKind kind, Index side);
    static FrequencySchedule fourier(std::vector<double> cutoffs);
    static FrequencySchedule spatial(std::vector<Index> sides);

    int levels() const noexcept { return levels_; }
    FilterKind kind() const noexcept { return kind_; }
    double cutoff(int level) const;
    Index side(int level) const;

    void check_level(int level) const;

private:
    FrequencySchedule() = default;

    int levels_ = 0;
    FilterKind kind_ = FilterKind::SpatialDownUp;
    std::vector<double> cutoffs_;
    std::vector<Index> sides_;
};

/// Dense (h*w) x (h*w) operator of the level filter acting on token rows.
Mat<double> filter_operator(Index h, Index w, int level, const FrequencySchedule& sched);

/// 1-D area-weighted downsampling n -> s (rows sum to one).
Mat<double> area_downsample_1d(Index n, Index s);
/// 1-D bilinear upsampling s -> n with half-pixel centres and edge clamping.
Mat<double> bilinear_upsample_1d(Index s, Index n);

/// Unnormalized 2-D DFT of a real h x w plane.
Mat<std::complex<double>> dft2(const Mat<double>& plane);
/// Complex 2-D DFT; the inverse includes the 1/(h*w) factor.
Mat<std::complex<double>> dft2(const Mat<std::complex<double>>& plane, bool inverse);

/// Coefficients (ky, kx) inside the level passband, row-major h x w.
std::vector<bool> passband(Index h, Index w, int level, const FrequencySchedule& sched);

namespace detail {
void check_grid_finite(const Mat<double>& data);
std::vector<double> radial_power_spectrum(Index h, Index w, const Mat<double>& data);
double passband_energy_fraction(Index h, Index w, const Mat<double>& data, int level,
                                const FrequencySchedule& sched);
} // namespace detail

template <typename Scalar>
TokenGrid<Scalar> apply_filter(const TokenGrid<Scalar>& grid, const Mat<double>& op) {
    return TokenGrid<Scalar>(grid.rows(), grid.cols(),
                             (op.cast<Scalar>() * grid.data()).eval());
}

template <typename Scalar>
TokenGrid<Scalar> lowpass(const TokenGrid<Scalar>& grid, int level, const FrequencySchedule& sched) {
    sched.check_level(level);
    if (!grid.all_finite()) throw NumericError("lowpass: non-finite input grid");
    return apply_filter(grid, filter_operator(grid.rows(), grid.cols(), level, sched));
}

template <typename Scalar>
TokenGrid<Scalar> fourier_lowpass(const TokenGrid<Scalar>& grid, int level,
                                  const FrequencySchedule& sched) {
    require(sched.kind() == FilterKind::FourierMask, "fourier_lowpass: schedule is not fourier-mask");
    return lowpass(grid, level, sched);
}

template <typename Scalar>
TokenGrid<Scalar> spatial_downup(const TokenGrid<Scalar>& grid, int level,
                                 const FrequencySchedule& sched) {
    require(sched.kind() == FilterKind::SpatialDownUp, "spatial_downup: schedule is not spatial-downup");
    return lowpass(grid, level, sched);
}

/// [x_1, ..., x_F] with x_F equal to the input.
template <typename Scalar>
std::vector<TokenGrid<Scalar>> decompose(const TokenGrid<Scalar>& grid, const FrequencySchedule& sched) {
    std::vector<TokenGrid<Scalar>> out;
    out.reserve(static_cast<std::size_t>(sched.levels()));
    for (int level = 1; level <= sched.levels(); ++level) out.push_back(lowpass(grid, level, sched));
    return out;
}

/// Caches filter operators for one grid shape.
template <typename Scalar>
class FilterBank {
public:
    FilterBank(Index h, Index w, FrequencySchedule sched) : h_(h), w_(w), sched_(std::move(sched)) {
        for (int level = 1; level <= sched_.levels(); ++level)
            ops_.push_back(filter_operator(h, w, level, sched_).template cast<Scalar>());
    }

    const FrequencySchedule& schedule() const noexcept { return sched_; }
    int levels() const noexcept { return sched_.levels(); }

    TokenGrid<Scalar> operator()(const TokenGrid<Scalar>& grid, int level) const {
        sched_.check_level(level);
        require(grid.rows() == h_ && grid.cols() == w_, "FilterBank: grid shape mismatch");
        return TokenGrid<Scalar>(h_, w_, (ops_[static_cast<std::size_t>(level - 1)] * grid.data()).eval());
    }

private:
    Index h_;
    Index w_;
    FrequencySchedule sched_;
    std::vector<Mat<Scalar>> ops_;
};

/// Band energies in ceil(h/2) integer-radius annuli, averaged over channels.
///
/// Energies use the convention sum|X_k|^2 / (h*w) so that the bins add up to
/// the sum of squared grid values divided by the channel count. Corner
/// frequencies past the last annulus fold into the last bin.
template <typename Scalar>
std::vector<double> radial_power_spectrum(const TokenGrid<Scalar>& grid) {
    return detail::radial_power_spectrum(grid.rows(), grid.cols(), grid.data().template cast<double>());
}

/// Fraction of spectral energy (all channels, DC included) inside the level passband.
template <typename Scalar>
double passband_energy_fraction(const TokenGrid<Scalar>& grid, int level, const FrequencySchedule& sched) {
    return detail::passband_energy_fraction(grid.rows(), grid.cols(), grid.data().template cast<double>(),
                                            level, sched);
}

/// log2(N) / (24 f^2): bits per pixel budget of a discrete tokenizer.
double icr_discrete(double codebook_size, double factor);
/// 32 C / (24 f^2): fp32 latent budget of a continuous tokenizer.
double icr_continuous(double channels, double factor);

} // namespace far
