#pragma once

#include <span>
#include <vector>

#include "far/tensor.hpp"

namespace far {

/// Raster image with interleaved channels, values in [0, 1].
struct Image {
    Index height = 0;
    Index width = 0;
    Index channels = 1;
    Eigen::ArrayXd data; // (y * width + x) * channels + c

    Image() = default;
    Image(Index h, Index w, Index c, double fill = 0.0)
        : height(h), width(w), channels(c), data(Eigen::ArrayXd::Constant(h * w * c, fill)) {}

    double& operator()(Index y, Index x, Index c = 0) { return data[(y * width + x) * channels + c]; }
    double operator()(Index y, Index x, Index c = 0) const { return data[(y * width + x) * channels + c]; }

    Index pixels() const noexcept { return height * width; }
};

/// Per-component standardization of patch tokens.
struct TokenizerStats {
    Index patch_size = 2;
    Index channels = 1;
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;

    static constexpr double kStdFloor = 1e-6;

    Index token_dim() const noexcept { return patch_size * patch_size * channels; }

    static TokenizerStats identity(Index patch_size, Index channels);
    void validate() const;
};

TokenizerStats fit_stats(std::span<const Image> dataset, Index patch_size);

namespace detail {
// Raw (unstandardized) patch rearrangement; component order is (dy, dx, c) row-major.
Mat<double> raw_patches(const Image& img, Index patch_size);
} // namespace detail

template <typename Scalar>
TokenGrid<Scalar> patchify(const Image& img, const TokenizerStats& stats) {
    stats.validate();
    require(img.channels == stats.channels, "patchify: channel count does not match stats");
    Mat<double> raw = detail::raw_patches(img, stats.patch_size);
    raw.rowwise() -= stats.mean.transpose();
    raw.array().rowwise() /= stats.stddev.transpose().array();
    const Index p = stats.patch_size;
    return TokenGrid<Scalar>(img.height / p, img.width / p, raw.cast<Scalar>().eval());
}

Image unpatchify_raw(const Mat<double>& tokens, Index grid_h, Index grid_w, const TokenizerStats& stats);

/// Inverse of patchify; pixel values are clamped to [0, 1].
template <typename Scalar>
Image unpatchify(const TokenGrid<Scalar>& grid, const TokenizerStats& stats) {
    return unpatchify_raw(grid.data().template cast<double>(), grid.rows(), grid.cols(), stats);
}

/// Per-component [lo, hi] token range that decodes to pixels in [0, 1].
std::pair<Eigen::VectorXd, Eigen::VectorXd> token_bounds(const TokenizerStats& stats);

} // namespace far
