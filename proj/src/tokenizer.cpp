#include "far/tokenizer.hpp"

#include <algorithm>

namespace far {

TokenizerStats TokenizerStats::identity(Index patch_size, Index channels) {
    TokenizerStats s;
    s.patch_size = patch_size;
    s.channels = channels;
    s.mean = Eigen::VectorXd::Zero(s.token_dim());
    s.stddev = Eigen::VectorXd::Ones(s.token_dim());
    return s;
}

void TokenizerStats::validate() const {
    require(patch_size >= 1 && channels >= 1, "TokenizerStats: patch size and channels must be positive");
    require(mean.size() == token_dim() && stddev.size() == token_dim(),
            "TokenizerStats: mean/std length must equal patch_size^2 * channels");
    if (!(stddev.array() > kStdFloor * 0.999).all())
        throw NumericError("TokenizerStats: degenerate standard deviation");
}

namespace detail {

Mat<double> raw_patches(const Image& img, Index p) {
    require(p >= 1, "patchify: patch size must be positive");
    if (img.height % p != 0 || img.width % p != 0)
        throw UsageError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " not divisible by patch size " + std::to_string(p));
    const Index gh = img.height / p;
    const Index gw = img.width / p;
    const Index c = img.channels;
    Mat<double> out(gh * gw, p * p * c);
    for (Index r = 0; r < gh; ++r)
        for (Index q = 0; q < gw; ++q)
            for (Index dy = 0; dy < p; ++dy)
                for (Index dx = 0; dx < p; ++dx)
                    for (Index k = 0; k < c; ++k)
                        out(r * gw + q, (dy * p + dx) * c + k) = img(r * p + dy, q * p + dx, k);
    return out;
}

} // namespace detail

Image unpatchify_raw(const Mat<double>& tokens, Index gh, Index gw, const TokenizerStats& stats) {
    stats.validate();
    if (tokens.cols() != stats.token_dim() || tokens.rows() != gh * gw)
        throw UsageError("unpatchify: token grid shape does not match tokenizer stats");
    const Index p = stats.patch_size;
    const Index c = stats.channels;
    Image img(gh * p, gw * p, c);
    for (Index r = 0; r < gh; ++r)
        for (Index q = 0; q < gw; ++q)
            for (Index dy = 0; dy < p; ++dy)
                for (Index dx = 0; dx < p; ++dx)
                    for (Index k = 0; k < c; ++k) {
                        const Index j = (dy * p + dx) * c + k;
                        const double v = tokens(r * gw + q, j) * stats.stddev[j] + stats.mean[j];
                        img(r * p + dy, q * p + dx, k) = std::clamp(v, 0.0, 1.0);
                    }
    return img;
}

TokenizerStats fit_stats(std::span<const Image> dataset, Index patch_size) {
    require(!dataset.empty(), "fit_stats: empty dataset");
    TokenizerStats s;
    s.patch_size = patch_size;
    s.channels = dataset.front().channels;
    const Index d = s.token_dim();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(d);
    double count = 0.0;
    // Shifted one-pass sums.
    const Eigen::RowVectorXd shift = detail::raw_patches(dataset.front(), patch_size).row(0);
    for (const Image& img : dataset) {
        require(img.channels == s.channels, "fit_stats: mixed channel counts");
        Mat<double> raw = detail::raw_patches(img, patch_size);
        raw.rowwise() -= shift;
        sum += raw.colwise().sum().transpose();
        sumsq += raw.array().square().colwise().sum().matrix().transpose();
        count += double(raw.rows());
    }
    const Eigen::VectorXd centered_mean = sum / count;
    s.mean = centered_mean + shift.transpose();
    const Eigen::VectorXd var = (sumsq / count - centered_mean.cwiseAbs2()).cwiseMax(0.0);
    s.stddev = var.cwiseSqrt().cwiseMax(TokenizerStats::kStdFloor);
    return s;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> token_bounds(const TokenizerStats& stats) {
    stats.validate();
    Eigen::VectorXd lo = (-stats.mean).cwiseQuotient(stats.stddev);
    Eigen::VectorXd hi = (Eigen::VectorXd::Ones(stats.token_dim()) - stats.mean).cwiseQuotient(stats.stddev);
    return {lo, hi};
}

} // namespace far
