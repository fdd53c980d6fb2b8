#include "far/dataset.hpp"

#include <cmath>
#include <random>

#include "far/spectral.hpp"

namespace far {

std::vector<Image> Dataset::class_images(Index label) const {
    std::vector<Image> out;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (labels[i] == label) out.push_back(images[i]);
    return out;
}

namespace {

Image shape_image(ShapeClass cls, Index side, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    std::normal_distribution<double> noise(0.0, 0.03);

    const double s = double(side) / 16.0;
    const double background = uniform(0.05, 0.2);
    const double intensity = uniform(0.7, 1.0);
    const double cy = double(side) / 2.0 + uniform(-1.5, 1.5) * s;
    const double cx = double(side) / 2.0 + uniform(-1.5, 1.5) * s;
    const double radius = uniform(3.5, 5.5) * s;
    const double arm_width = uniform(0.9, 1.6) * s;
    const double band = uniform(2.0, 3.5) * s;
    const double offset = uniform(0.0, 2.0 * band);

    Image img(side, side, 1);
    for (Index y = 0; y < side; ++y) {
        for (Index x = 0; x < side; ++x) {
            const double py = double(y) + 0.5 - cy;
            const double px = double(x) + 0.5 - cx;
            bool on = false;
            switch (cls) {
            case ShapeClass::Circle: on = py * py + px * px <= radius * radius; break;
            case ShapeClass::Square: on = std::abs(py) <= radius && std::abs(px) <= radius; break;
            case ShapeClass::Cross:
                on = (std::abs(py) <= arm_width && std::abs(px) <= radius) ||
                     (std::abs(px) <= arm_width && std::abs(py) <= radius);
                break;
            case ShapeClass::Stripes: on = int(std::floor((double(y) + 0.5 + offset) / band)) % 2 == 0; break;
            }
            img(y, x) = std::clamp((on ? intensity : background) + noise(rng), 0.0, 1.0);
        }
    }
    return img;
}

Image gaussian_field(double exponent, Index side, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat<std::complex<double>> white(side, side);
    for (Index i = 0; i < white.size(); ++i) white.data()[i] = normal(rng);
    Mat<std::complex<double>> spec = dft2(white, false);
    for (Index ky = 0; ky < side; ++ky) {
        for (Index kx = 0; kx < side; ++kx) {
            const double fy = double(std::min(ky, side - ky));
            const double fx = double(std::min(kx, side - kx));
            spec(ky, kx) *= std::pow(1.0 + std::sqrt(fy * fy + fx * fx), -exponent / 2.0);
        }
    }
    const Mat<double> field = dft2(spec, true).real();
    const double lo = field.minCoeff();
    const double hi = field.maxCoeff();
    Image img(side, side, 1);
    for (Index y = 0; y < side; ++y)
        for (Index x = 0; x < side; ++x) img(y, x) = hi > lo ? (field(y, x) - lo) / (hi - lo) : 0.5;
    return img;
}

} // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate(1);
    std::mt19937_64 rng(spec.seed);
    Dataset ds;
    // Interleave classes so any prefix is class-balanced.
    for (Index i = 0; i < spec.samples_per_class; ++i) {
        for (Index c = 0; c < spec.num_classes; ++c) {
            if (spec.kind == "shapes") {
                ds.images.push_back(shape_image(static_cast<ShapeClass>(c), spec.side, rng));
            } else {
                const double e = spec.spectral_exponent * double(c + 1) / double(spec.num_classes);
                ds.images.push_back(gaussian_field(e, spec.side, rng));
            }
            ds.labels.push_back(c);
        }
    }
    return ds;
}

} // namespace far
