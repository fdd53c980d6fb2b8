#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "far/tensor.hpp"

namespace far {

/// Flat view over the tensors of one or more parameter sets, in visit order.
template <typename Scalar>
struct ParamList {
    std::vector<std::string> names;
    std::vector<Mat<Scalar>*> tensors;

    template <typename Model>
    ParamList& add(Model& m, const std::string& prefix) {
        m.for_each([&](const std::string& name, Mat<Scalar>& t) {
            names.push_back(prefix + name);
            tensors.push_back(&t);
        });
        return *this;
    }

    std::size_t size() const noexcept { return tensors.size(); }
};

template <typename Scalar>
double squared_norm(const ParamList<Scalar>& grads) {
    double s = 0.0;
    for (const auto* g : grads.tensors) s += double(g->squaredNorm());
    return s;
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
template <typename Scalar>
double clip_grad_norm(ParamList<Scalar>& grads, double max_norm) {
    const double norm = std::sqrt(squared_norm(grads));
    if (!std::isfinite(norm)) throw NumericError("clip_grad_norm: non-finite gradient norm");
    if (max_norm > 0.0 && norm > max_norm) {
        const Scalar scale = Scalar(max_norm / (norm + 1e-12));
        for (auto* g : grads.tensors) *g *= scale;
    }
    return norm;
}

/// theta_ema += (1 - rate) (theta - theta_ema); rate 0 copies exactly.
template <typename Scalar>
void ema_update(ParamList<Scalar>& ema, const ParamList<Scalar>& params, double rate) {
    require(ema.size() == params.size(), "ema_update: parameter lists differ");
    const Scalar k = Scalar(1.0 - rate);
    for (std::size_t i = 0; i < ema.size(); ++i) {
        if (rate == 0.0) *ema.tensors[i] = *params.tensors[i];
        else *ema.tensors[i] += k * (*params.tensors[i] - *ema.tensors[i]);
    }
}

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.02;
};

/// Adam with decoupled weight decay: theta <- theta (1 - lr wd), then the Adam step.
///
/// Decay applies to matrices only; single-row tensors (biases, norm gains,
/// the mask token) are not decayed.
template <typename Scalar>
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWParams p) : params_(p) {}

    template <typename List>
    void init(const List& params) {
        m_.clear();
        v_.clear();
        for (const auto* t : params.tensors) {
            m_.push_back(Mat<Scalar>::Zero(t->rows(), t->cols()));
            v_.push_back(Mat<Scalar>::Zero(t->rows(), t->cols()));
        }
        step_ = 0;
    }

    void step(ParamList<Scalar>& params, const ParamList<Scalar>& grads, double lr) {
        require(params.size() == grads.size() && params.size() == m_.size(), "AdamW: state not initialized");
        ++step_;
        const double bc1 = 1.0 - std::pow(params_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(params_.beta2, double(step_));
        const Scalar b1 = Scalar(params_.beta1);
        const Scalar b2 = Scalar(params_.beta2);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params.tensors[i];
            const auto& g = *grads.tensors[i];
            m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
            v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
            if (p.rows() > 1) p *= Scalar(1.0 - lr * params_.weight_decay);
            const auto mhat = m_[i].array() / Scalar(bc1);
            const auto vhat = v_[i].array() / Scalar(bc2);
            p.array() -= Scalar(lr) * mhat / (vhat.sqrt() + Scalar(params_.eps));
        }
    }

    long step_count() const noexcept { return step_; }
    void set_step_count(long s) noexcept { step_ = s; }
    std::vector<Mat<Scalar>>& first_moments() noexcept { return m_; }
    std::vector<Mat<Scalar>>& second_moments() noexcept { return v_; }
    const std::vector<Mat<Scalar>>& first_moments() const noexcept { return m_; }
    const std::vector<Mat<Scalar>>& second_moments() const noexcept { return v_; }

private:
    AdamWParams params_;
    std::vector<Mat<Scalar>> m_;
    std::vector<Mat<Scalar>> v_;
    long step_ = 0;
};

} // namespace far
