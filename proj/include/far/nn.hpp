#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "far/tensor.hpp"

// Row-wise building blocks shared by the transformer and the denoiser.
namespace far::nn {

template <typename Scalar>
struct NormCache {
    Mat<Scalar> xhat;
    Vec<Scalar> rstd;
};

/// Row-wise layer norm without affine parameters.
template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, Scalar eps, NormCache<Scalar>& cache) {
    const Vec<Scalar> mean = x.rowwise().mean();
    Mat<Scalar> centered = x.colwise() - mean;
    const Vec<Scalar> var = centered.array().square().rowwise().mean();
    cache.rstd = (var.array() + eps).rsqrt();
    cache.xhat = centered.array().colwise() * cache.rstd.array();
    return cache.xhat;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dxhat, const NormCache<Scalar>& cache) {
    const Vec<Scalar> mean_d = dxhat.rowwise().mean();
    const Vec<Scalar> mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().mean();
    Mat<Scalar> dx = dxhat.colwise() - mean_d;
    dx.array() -= cache.xhat.array().colwise() * mean_dx.array();
    dx.array().colwise() *= cache.rstd.array();
    return dx;
}

template <typename Scalar>
Mat<Scalar> affine(const Mat<Scalar>& x, const Mat<Scalar>& w, const Mat<Scalar>& b) {
    Mat<Scalar> y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

/// Accumulates dW, db for y = x w + b and returns dx.
template <typename Scalar>
Mat<Scalar> affine_backward(const Mat<Scalar>& x, const Mat<Scalar>& w, const Mat<Scalar>& dy,
                            Mat<Scalar>& dw, Mat<Scalar>& db) {
    dw.noalias() += x.transpose() * dy;
    db.row(0) += dy.colwise().sum();
    return dy * w.transpose();
}

template <typename Scalar>
void affine_backward_params(const Mat<Scalar>& x, const Mat<Scalar>& dy, Mat<Scalar>& dw, Mat<Scalar>& db) {
    dw.noalias() += x.transpose() * dy;
    db.row(0) += dy.colwise().sum();
}

namespace detail {
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> erf_of(const Mat<Scalar>& x, Scalar k) {
    return (x.array() * k).unaryExpr([](Scalar v) { return std::erf(v); });
}
} // namespace detail

// Exact (erf) GELU.
template <typename Scalar>
Mat<Scalar> gelu(const Mat<Scalar>& x) {
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    return (Scalar(0.5) * x.array() * (Scalar(1) + detail::erf_of(x, inv_sqrt2))).matrix();
}

template <typename Scalar>
Mat<Scalar> gelu_grad(const Mat<Scalar>& x) {
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    const auto cdf = (Scalar(0.5) * (Scalar(1) + detail::erf_of(x, inv_sqrt2))).eval();
    const auto pdf = (Scalar(-0.5) * x.array().square()).exp() * inv_sqrt2pi;
    return (cdf + x.array() * pdf).matrix();
}

template <typename Scalar>
Mat<Scalar> silu(const Mat<Scalar>& x) {
    return (x.array() / (Scalar(1) + (-x.array()).exp())).matrix();
}

template <typename Scalar>
Mat<Scalar> silu_grad(const Mat<Scalar>& x) {
    const auto sig = Scalar(1) / (Scalar(1) + (-x.array()).exp());
    return (sig * (Scalar(1) + x.array() * (Scalar(1) - sig))).matrix();
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& s) {
    Mat<Scalar> p = s.colwise() - s.rowwise().maxCoeff();
    p = p.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

template <typename Scalar>
Mat<Scalar> softmax_rows_backward(const Mat<Scalar>& p, const Mat<Scalar>& dp) {
    const Vec<Scalar> inner = (p.array() * dp.array()).rowwise().sum();
    return (p.array() * (dp.colwise() - inner).array()).matrix();
}

template <typename Scalar>
Mat<Scalar> xavier_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Mat<Scalar> w(fan_in, fan_out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(dist(rng));
    return w;
}

template <typename Scalar>
Mat<Scalar> normal(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat<Scalar> w(rows, cols);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(dist(rng));
    return w;
}

} // namespace far::nn
