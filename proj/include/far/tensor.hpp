#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

#include "far/error.hpp"

namespace far {

using Index = Eigen::Index;

// Row-major dense matrix; rows are tokens, columns are features.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// An h x w grid of d-dimensional continuous tokens.
///
/// Storage is an (h*w) x d matrix; token (r, c) lives in row r*w + c.
template <typename Scalar>
class TokenGrid {
public:
    TokenGrid() = default;

    TokenGrid(Index h, Index w, Index d) : h_(h), w_(w), data_(Mat<Scalar>::Zero(h * w, d)) {
        require(h >= 1 && w >= 1 && d >= 1, "TokenGrid: dimensions must be positive");
    }

    TokenGrid(Index h, Index w, Mat<Scalar> data) : h_(h), w_(w), data_(std::move(data)) {
        require(h >= 1 && w >= 1 && data_.cols() >= 1, "TokenGrid: dimensions must be positive");
        require(data_.rows() == h * w, "TokenGrid: data rows must equal h*w");
    }

    Index rows() const noexcept { return h_; }
    Index cols() const noexcept { return w_; }
    Index channels() const noexcept { return data_.cols(); }
    Index positions() const noexcept { return h_ * w_; }

    Scalar& operator()(Index r, Index c, Index k) { return data_(r * w_ + c, k); }
    Scalar operator()(Index r, Index c, Index k) const { return data_(r * w_ + c, k); }

    Mat<Scalar>& data() noexcept { return data_; }
    const Mat<Scalar>& data() const noexcept { return data_; }

    bool all_finite() const { return data_.allFinite(); }

    bool same_shape(const TokenGrid& o) const noexcept {
        return h_ == o.h_ && w_ == o.w_ && channels() == o.channels();
    }

    template <typename Other>
    TokenGrid<Other> cast() const {
        return TokenGrid<Other>(h_, w_, data_.template cast<Other>().eval());
    }

private:
    Index h_ = 0;
    Index w_ = 0;
    Mat<Scalar> data_;
};

template <typename Scalar>
Scalar max_abs_diff(const TokenGrid<Scalar>& a, const TokenGrid<Scalar>& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

} // namespace far
