#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "far/optim.hpp"
#include "far/tensor.hpp"

namespace far::testing {

inline Mat<double> random_mat(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat<double> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline TokenGrid<double> random_grid(Index h, Index w, Index d, std::mt19937_64& rng) {
    return TokenGrid<double>(h, w, random_mat(h * w, d, rng));
}

struct GradCheck {
    double max_rel = 0.0;
    std::string worst;
    long checked = 0;
};

/// Compares analytic gradients of every parameter against central differences of `loss`.
template <typename Model>
GradCheck check_params(Model& model, Model& grad, const std::function<double()>& loss, double h = 1e-4) {
    ParamList<double> p, g;
    p.add(model, "");
    g.add(grad, "");
    GradCheck out;
    for (std::size_t k = 0; k < p.size(); ++k) {
        Mat<double>& w = *p.tensors[k];
        for (Index i = 0; i < w.size(); ++i) {
            const double saved = w.data()[i];
            w.data()[i] = saved + h;
            const double up = loss();
            w.data()[i] = saved - h;
            const double down = loss();
            w.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = g.tensors[k]->data()[i];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            ++out.checked;
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = p.names[k] + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

} // namespace far::testing
