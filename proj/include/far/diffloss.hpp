#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "far/nn.hpp"
#include "far/tensor.hpp"

namespace far {

/// Variance-preserving discrete schedule over t = 0..T (t = 0 is clean data).
class NoiseSchedule {
public:
    static constexpr double kCosineOffset = 0.008;
    static constexpr double kMaxBeta = 0.999;

    /// Cosine alpha-bar schedule; per-step betas are capped at 0.999 at the tail.
    explicit NoiseSchedule(int steps = 1000);

    int steps() const noexcept { return steps_; }
    double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }
    double alpha(int t) const { return std::sqrt(alpha_bar(t)); }
    double sigma(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

    /// Evenly spaced timesteps for a respaced sampler, strictly decreasing from T.
    std::vector<int> respaced(int count) const;

    /// Unclipped closed form cos^2(((t/T + s)/(1 + s)) pi/2) / cos^2((s/(1 + s)) pi/2).
    static double cosine_alpha_bar(double t, double total);

private:
    int steps_;
    std::vector<double> alpha_bar_;
};

/// x_t = alpha_t x0 + sigma_t noise, row-wise.
template <typename Scalar>
Mat<Scalar> perturb(const Mat<Scalar>& x0, int t, const Mat<Scalar>& noise, const NoiseSchedule& sched) {
    require(t >= 0 && t <= sched.steps(), "perturb: timestep out of range");
    require(x0.rows() == noise.rows() && x0.cols() == noise.cols(), "perturb: shape mismatch");
    return Scalar(sched.alpha(t)) * x0 + Scalar(sched.sigma(t)) * noise;
}

/// w_i = 1 + sin((pi/2) i / F).
double loss_weight(int level, int levels);

/// round(t_min + (t_max - t_min)(level - 1)/(F - 1)).
int allocate_steps(int level, int levels, int t_min = 40, int t_max = 100);

struct DenoiserConfig {
    Index token_dim = 4;
    Index cond_dim = 64;
    Index width = 256;
    Index depth = 3;
    Index time_dim = 64;

    void validate() const {
        require(token_dim >= 1 && cond_dim >= 1, "DenoiserConfig: token and cond dims must be positive");
        require(width >= 1 && depth >= 1, "DenoiserConfig: width and depth must be positive");
        require(time_dim >= 2 && time_dim % 2 == 0, "DenoiserConfig: time_dim must be even and >= 2");
    }
};

template <typename Scalar>
struct ResBlock {
    Mat<Scalar> mod_w, mod_b; // width -> (shift, scale, gate)
    Mat<Scalar> fc1_w, fc1_b;
    Mat<Scalar> fc2_w, fc2_b;
};

/// Small residual MLP predicting the injected noise from (x_t, t, z).
///
/// c = time_affine(sinusoid(t)) + cond_affine(z) drives, through SiLU and an
/// affine, the shift/scale/gate modulation of every block and the final
/// shift/scale before the output affine.
template <typename Scalar>
class DenoiserMlp {
public:
    DenoiserMlp() = default;

    explicit DenoiserMlp(const DenoiserConfig& cfg) : config_(cfg) {
        cfg.validate();
        const Index w = cfg.width;
        in_w = Mat<Scalar>::Zero(cfg.token_dim, w);
        in_b = Mat<Scalar>::Zero(1, w);
        time_w = Mat<Scalar>::Zero(cfg.time_dim, w);
        time_b = Mat<Scalar>::Zero(1, w);
        cond_w = Mat<Scalar>::Zero(cfg.cond_dim, w);
        cond_b = Mat<Scalar>::Zero(1, w);
        blocks.resize(static_cast<std::size_t>(cfg.depth));
        for (auto& b : blocks) {
            b.mod_w = Mat<Scalar>::Zero(w, 3 * w);
            b.mod_b = Mat<Scalar>::Zero(1, 3 * w);
            b.fc1_w = Mat<Scalar>::Zero(w, w);
            b.fc1_b = Mat<Scalar>::Zero(1, w);
            b.fc2_w = Mat<Scalar>::Zero(w, w);
            b.fc2_b = Mat<Scalar>::Zero(1, w);
        }
        final_mod_w = Mat<Scalar>::Zero(w, 2 * w);
        final_mod_b = Mat<Scalar>::Zero(1, 2 * w);
        out_w = Mat<Scalar>::Zero(w, cfg.token_dim);
        out_b = Mat<Scalar>::Zero(1, cfg.token_dim);
    }

    /// Xavier-uniform affines. Modulation and output affines start at zero
    /// unless `zero_modulation` is false (used by gradient checks).
    static DenoiserMlp initialized(const DenoiserConfig& cfg, std::mt19937_64& rng, bool zero_modulation = true) {
        DenoiserMlp m(cfg);
        const Index w = cfg.width;
        m.in_w = nn::xavier_uniform<Scalar>(cfg.token_dim, w, rng);
        m.time_w = nn::xavier_uniform<Scalar>(cfg.time_dim, w, rng);
        m.cond_w = nn::xavier_uniform<Scalar>(cfg.cond_dim, w, rng);
        for (auto& b : m.blocks) {
            b.fc1_w = nn::xavier_uniform<Scalar>(w, w, rng);
            b.fc2_w = nn::xavier_uniform<Scalar>(w, w, rng);
            if (!zero_modulation) b.mod_w = nn::xavier_uniform<Scalar>(w, 3 * w, rng);
        }
        if (!zero_modulation) {
            m.final_mod_w = nn::xavier_uniform<Scalar>(w, 2 * w, rng);
            m.out_w = nn::xavier_uniform<Scalar>(w, cfg.token_dim, rng);
        }
        return m;
    }

    const DenoiserConfig& config() const noexcept { return config_; }
    DenoiserMlp zeros_like() const { return DenoiserMlp(config_); }

    template <typename Fn>
    void for_each(Fn&& fn) { visit(*this, fn); }
    template <typename Fn>
    void for_each(Fn&& fn) const { visit(*this, fn); }

    Mat<Scalar> in_w, in_b;
    Mat<Scalar> time_w, time_b;
    Mat<Scalar> cond_w, cond_b;
    std::vector<ResBlock<Scalar>> blocks;
    Mat<Scalar> final_mod_w, final_mod_b;
    Mat<Scalar> out_w, out_b;

private:
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn& fn) {
        fn(std::string("in.w"), self.in_w);
        fn(std::string("in.b"), self.in_b);
        fn(std::string("time.w"), self.time_w);
        fn(std::string("time.b"), self.time_b);
        fn(std::string("cond.w"), self.cond_w);
        fn(std::string("cond.b"), self.cond_b);
        for (std::size_t i = 0; i < self.blocks.size(); ++i) {
            const std::string p = "blocks." + std::to_string(i) + ".";
            fn(p + "mod.w", self.blocks[i].mod_w);
            fn(p + "mod.b", self.blocks[i].mod_b);
            fn(p + "fc1.w", self.blocks[i].fc1_w);
            fn(p + "fc1.b", self.blocks[i].fc1_b);
            fn(p + "fc2.w", self.blocks[i].fc2_w);
            fn(p + "fc2.b", self.blocks[i].fc2_b);
        }
        fn(std::string("final_mod.w"), self.final_mod_w);
        fn(std::string("final_mod.b"), self.final_mod_b);
        fn(std::string("out.w"), self.out_w);
        fn(std::string("out.b"), self.out_b);
    }

    DenoiserConfig config_;
};

/// Sinusoidal embedding [cos(t f_k), sin(t f_k)], f_k = exp(-ln(10000) k / half).
template <typename Scalar>
Mat<Scalar> timestep_embedding(const std::vector<int>& t, Index dim) {
    const Index half = dim / 2;
    Mat<Scalar> e(static_cast<Index>(t.size()), dim);
    for (Index k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
        for (Index r = 0; r < e.rows(); ++r) {
            const double arg = double(t[static_cast<std::size_t>(r)]) * freq;
            e(r, k) = Scalar(std::cos(arg));
            e(r, half + k) = Scalar(std::sin(arg));
        }
    }
    return e;
}

template <typename Scalar>
struct DenoiserCache {
    struct Block {
        nn::NormCache<Scalar> ln;
        Mat<Scalar> shift, scale, gate;
        Mat<Scalar> h0, h1, h2, h3;
    };
    Mat<Scalar> x_t;
    Mat<Scalar> temb;
    Mat<Scalar> z;
    Mat<Scalar> c;
    Mat<Scalar> sc;
    std::vector<Block> blocks;
    nn::NormCache<Scalar> lnf;
    Mat<Scalar> fshift, fscale, hf;
};

/// Batched noise prediction; row r of x_t is conditioned on t[r] and row r of z.
template <typename Scalar>
Mat<Scalar> denoise(const DenoiserMlp<Scalar>& mlp, const Mat<Scalar>& x_t, const std::vector<int>& t,
                    const Mat<Scalar>& z, DenoiserCache<Scalar>* cache = nullptr) {
    const DenoiserConfig& cfg = mlp.config();
    require(x_t.cols() == cfg.token_dim, "denoise: token dimension mismatch");
    require(z.cols() == cfg.cond_dim, "denoise: conditioning dimension mismatch");
    require(x_t.rows() == z.rows() && x_t.rows() == static_cast<Index>(t.size()), "denoise: row count mismatch");
    const Index w = cfg.width;
    constexpr Scalar eps = Scalar(1e-6);

    DenoiserCache<Scalar> local;
    DenoiserCache<Scalar>& cc = cache ? *cache : local;
    cc.temb = timestep_embedding<Scalar>(t, cfg.time_dim);
    cc.c = nn::affine(cc.temb, mlp.time_w, mlp.time_b) + nn::affine(z, mlp.cond_w, mlp.cond_b);
    cc.sc = nn::silu(cc.c);
    if (cache) {
        cc.x_t = x_t;
        cc.z = z;
    }
    Mat<Scalar> x = nn::affine(x_t, mlp.in_w, mlp.in_b);
    cc.blocks.resize(mlp.blocks.size());
    for (std::size_t i = 0; i < mlp.blocks.size(); ++i) {
        const auto& blk = mlp.blocks[i];
        auto& bc = cc.blocks[i];
        const Mat<Scalar> mod = nn::affine(cc.sc, blk.mod_w, blk.mod_b);
        bc.shift = mod.leftCols(w);
        bc.scale = mod.middleCols(w, w);
        bc.gate = mod.rightCols(w);
        const Mat<Scalar> ln = nn::layer_norm(x, eps, bc.ln);
        bc.h0 = (ln.array() * (bc.scale.array() + Scalar(1)) + bc.shift.array()).matrix();
        bc.h1 = nn::affine(bc.h0, blk.fc1_w, blk.fc1_b);
        bc.h2 = nn::silu(bc.h1);
        bc.h3 = nn::affine(bc.h2, blk.fc2_w, blk.fc2_b);
        x.array() += bc.gate.array() * bc.h3.array();
    }
    const Mat<Scalar> fmod = nn::affine(cc.sc, mlp.final_mod_w, mlp.final_mod_b);
    cc.fshift = fmod.leftCols(w);
    cc.fscale = fmod.rightCols(w);
    const Mat<Scalar> ln = nn::layer_norm(x, eps, cc.lnf);
    cc.hf = (ln.array() * (cc.fscale.array() + Scalar(1)) + cc.fshift.array()).matrix();
    Mat<Scalar> out = nn::affine(cc.hf, mlp.out_w, mlp.out_b);
    if (!out.allFinite()) throw NumericError("denoise: non-finite output");
    return out;
}

/// Accumulates parameter gradients into `grad` and returns d(loss)/dz.
template <typename Scalar>
Mat<Scalar> denoise_backward(const DenoiserMlp<Scalar>& mlp, const DenoiserCache<Scalar>& cc, const Mat<Scalar>& dout,
                             DenoiserMlp<Scalar>& grad) {
    const Index w = mlp.config().width;
    Mat<Scalar> dhf = nn::affine_backward(cc.hf, mlp.out_w, dout, grad.out_w, grad.out_b);
    Mat<Scalar> dfmod(dout.rows(), 2 * w);
    dfmod.leftCols(w) = dhf;
    dfmod.rightCols(w) = (dhf.array() * cc.lnf.xhat.array()).matrix();
    Mat<Scalar> dsc = nn::affine_backward(cc.sc, mlp.final_mod_w, dfmod, grad.final_mod_w, grad.final_mod_b);
    Mat<Scalar> dln = (dhf.array() * (cc.fscale.array() + Scalar(1))).matrix();
    Mat<Scalar> dx = nn::layer_norm_backward(dln, cc.lnf);

    for (std::size_t i = mlp.blocks.size(); i-- > 0;) {
        const auto& blk = mlp.blocks[i];
        const auto& bc = cc.blocks[i];
        auto& gb = grad.blocks[i];
        Mat<Scalar> dmod(dout.rows(), 3 * w);
        dmod.rightCols(w) = (dx.array() * bc.h3.array()).matrix();
        const Mat<Scalar> dh3 = (dx.array() * bc.gate.array()).matrix();
        Mat<Scalar> dh2 = nn::affine_backward(bc.h2, blk.fc2_w, dh3, gb.fc2_w, gb.fc2_b);
        const Mat<Scalar> dh1 = (dh2.array() * nn::silu_grad(bc.h1).array()).matrix();
        const Mat<Scalar> dh0 = nn::affine_backward(bc.h0, blk.fc1_w, dh1, gb.fc1_w, gb.fc1_b);
        dmod.leftCols(w) = dh0;
        dmod.middleCols(w, w) = (dh0.array() * bc.ln.xhat.array()).matrix();
        dsc += nn::affine_backward(cc.sc, blk.mod_w, dmod, gb.mod_w, gb.mod_b);
        const Mat<Scalar> dlnb = (dh0.array() * (bc.scale.array() + Scalar(1))).matrix();
        dx += nn::layer_norm_backward(dlnb, bc.ln);
    }

    nn::affine_backward_params(cc.x_t, dx, grad.in_w, grad.in_b);
    const Mat<Scalar> dc = (dsc.array() * nn::silu_grad(cc.c).array()).matrix();
    nn::affine_backward_params(cc.temb, dc, grad.time_w, grad.time_b);
    return nn::affine_backward(cc.z, mlp.cond_w, dc, grad.cond_w, grad.cond_b);
}

/// Random draws behind one diffusion-loss evaluation: one (t, noise) per row.
template <typename Scalar>
struct LossDraws {
    std::vector<int> t;
    Mat<Scalar> noise;

    static LossDraws sample(Index rows, Index dim, const NoiseSchedule& sched, std::mt19937_64& rng) {
        LossDraws d;
        std::uniform_int_distribution<int> ut(1, sched.steps());
        std::normal_distribution<double> un(0.0, 1.0);
        d.t.resize(static_cast<std::size_t>(rows));
        for (auto& v : d.t) v = ut(rng);
        d.noise.resize(rows, dim);
        for (Index i = 0; i < d.noise.size(); ++i) d.noise.data()[i] = Scalar(un(rng));
        return d;
    }
};

template <typename Scalar>
struct LossResult {
    double loss = 0.0;     // unweighted mean squared error
    double weighted = 0.0; // loss * weight
    Mat<Scalar> dz;        // d(weighted)/dz, one row per grid position
};

/// Weighted noise-prediction loss on fixed draws.
///
/// Rows of `draws` cover every grid position `repeats` times
/// (row = r * positions + p). The mean is over rows and token components.
template <typename Scalar>
LossResult<Scalar> diffusion_loss(const DenoiserMlp<Scalar>& mlp, const Mat<Scalar>& z, const Mat<Scalar>& target,
                                  double weight, const LossDraws<Scalar>& draws, const NoiseSchedule& sched,
                                  DenoiserMlp<Scalar>& grad) {
    require(z.rows() == target.rows(), "diffusion_loss: z and target grids differ in size");
    const Index n = target.rows();
    const Index rows = draws.noise.rows();
    require(rows % n == 0 && static_cast<Index>(draws.t.size()) == rows, "diffusion_loss: draws do not tile the grid");
    const Index repeats = rows / n;

    Mat<Scalar> x_t(rows, target.cols());
    Mat<Scalar> zr(rows, z.cols());
    for (Index r = 0; r < repeats; ++r) {
        zr.middleRows(r * n, n) = z;
        for (Index p = 0; p < n; ++p) {
            const int t = draws.t[static_cast<std::size_t>(r * n + p)];
            x_t.row(r * n + p) = Scalar(sched.alpha(t)) * target.row(p) + Scalar(sched.sigma(t)) * draws.noise.row(r * n + p);
        }
    }
    DenoiserCache<Scalar> cache;
    const Mat<Scalar> eps_hat = denoise(mlp, x_t, draws.t, zr, &cache);
    const Mat<Scalar> diff = eps_hat - draws.noise;
    const double count = double(diff.size());
    LossResult<Scalar> res;
    res.loss = double(diff.squaredNorm()) / count;
    res.weighted = weight * res.loss;
    if (!std::isfinite(res.weighted)) throw NumericError("diffusion_loss: non-finite loss");
    const Mat<Scalar> dout = diff * Scalar(2.0 * weight / count);
    const Mat<Scalar> dzr = denoise_backward(mlp, cache, dout, grad);
    res.dz = Mat<Scalar>::Zero(n, z.cols());
    for (Index r = 0; r < repeats; ++r) res.dz += dzr.middleRows(r * n, n);
    return res;
}

/// Optional per-component box on the x0 estimate during sampling.
struct SampleBounds {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
};

/// Ancestral DDPM sampling of one token per row of z.
///
/// The T-step schedule is respaced to `steps` timesteps. Each update uses the
/// epsilon-prediction posterior mean and the "small" posterior variance, with
/// the injected noise (and the initial draw) scaled by `temperature`.
template <typename Scalar>
Mat<Scalar> sample_tokens(const DenoiserMlp<Scalar>& mlp, const Mat<Scalar>& z, int steps, const NoiseSchedule& sched,
                          double temperature, std::mt19937_64& rng, const std::optional<SampleBounds>& bounds = {}) {
    if (steps < 1 || steps > sched.steps())
        throw UsageError("sample_tokens: steps " + std::to_string(steps) + " outside [1, " +
                         std::to_string(sched.steps()) + "]");
    require(temperature >= 0.0, "sample_tokens: temperature must be non-negative");
    const Index rows = z.rows();
    const Index d = mlp.config().token_dim;
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto draw = [&](Mat<Scalar>& m) {
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(normal(rng));
    };

    Mat<Scalar> x(rows, d);
    draw(x);
    x *= Scalar(temperature);
    Mat<Scalar> noise(rows, d);
    const std::vector<int> ts = sched.respaced(steps);
    std::vector<int> tvec(static_cast<std::size_t>(rows));
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int prev = k + 1 < ts.size() ? ts[k + 1] : 0;
        const double ab_t = sched.alpha_bar(t);
        const double ab_p = sched.alpha_bar(prev);
        const double beta = 1.0 - ab_t / ab_p;
        std::fill(tvec.begin(), tvec.end(), t);
        const Mat<Scalar> eps_hat = denoise(mlp, x, tvec, z);
        Mat<Scalar> x0 = (x - Scalar(std::sqrt(1.0 - ab_t)) * eps_hat) / Scalar(std::sqrt(ab_t));
        if (bounds) {
            for (Index j = 0; j < d; ++j)
                x0.col(j) = x0.col(j).cwiseMax(Scalar(bounds->lo[j])).cwiseMin(Scalar(bounds->hi[j]));
        }
        // Posterior q(x_prev | x_t, x0).
        const double c0 = std::sqrt(ab_p) * beta / (1.0 - ab_t);
        const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_p) / (1.0 - ab_t);
        x = Scalar(c0) * x0 + Scalar(ct) * x;
        if (prev > 0 && temperature > 0.0) {
            const double var = beta * (1.0 - ab_p) / (1.0 - ab_t);
            draw(noise);
            x += Scalar(temperature * std::sqrt(var)) * noise;
        }
    }
    return x;
}

} // namespace far
