#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "far/diffloss.hpp"
#include "support.hpp"

using namespace far;
using far::testing::random_mat;

namespace {

DenoiserConfig tiny(Index depth = 2, Index width = 8) {
    DenoiserConfig c;
    c.token_dim = 3;
    c.cond_dim = 5;
    c.width = width;
    c.depth = depth;
    c.time_dim = 6;
    return c;
}

DenoiserMlp<double> random_mlp(const DenoiserConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto m = DenoiserMlp<double>::initialized(cfg, rng, false);
    std::normal_distribution<double> n(0.0, 0.1);
    m.for_each([&](const std::string&, Mat<double>& t) {
        for (Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
    });
    return m;
}

double direct_cosine(double t, double total) {
    const double s = 0.008;
    const double num = std::cos((t / total + s) / (1 + s) * std::numbers::pi / 2);
    const double den = std::cos(s / (1 + s) * std::numbers::pi / 2);
    return num * num / (den * den);
}

} // namespace

TEST_CASE("schedule follows the cosine formula and preserves variance") {
    const NoiseSchedule s(1000);
    CHECK(s.alpha_bar(0) == 1.0);
    for (int t : {250, 500, 750}) CHECK(s.alpha_bar(t) == doctest::Approx(direct_cosine(t, 1000)).epsilon(1e-12));
    for (int t = 0; t <= 1000; ++t) {
        CHECK(std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0) < 1e-9);
        if (t > 0) {
            CHECK(s.alpha(t) <= s.alpha(t - 1));
            CHECK(s.sigma(t) >= s.sigma(t - 1));
            CHECK(1.0 - s.alpha_bar(t) / s.alpha_bar(t - 1) <= NoiseSchedule::kMaxBeta + 1e-12);
        }
    }
    CHECK(s.alpha_bar(1000) > 0.0);
    CHECK_THROWS_AS(NoiseSchedule(1), UsageError);
}

TEST_CASE("perturb is the affine mix of signal and noise") {
    const NoiseSchedule s(1000);
    std::mt19937_64 rng(1);
    const Mat<double> x0 = random_mat(4, 3, rng);
    const Mat<double> eps = random_mat(4, 3, rng);
    CHECK((perturb(x0, 0, eps, s) - x0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((perturb(Mat<double>(Mat<double>::Zero(4, 3)), 500, eps, s) - s.sigma(500) * eps).cwiseAbs().maxCoeff() <
          1e-15);
    const double a = std::sqrt(direct_cosine(500, 1000));
    const double b = std::sqrt(1 - direct_cosine(500, 1000));
    const Mat<double> y = perturb(x0, 500, eps, s);
    for (Index i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(a * x0.data()[i] + b * eps.data()[i]));
    CHECK_THROWS_AS(perturb(x0, 1001, eps, s), UsageError);
}

TEST_CASE("loss weight and step allocation") {
    CHECK(loss_weight(10, 10) == 2.0);
    CHECK(loss_weight(5, 10) == doctest::Approx(1.0 + std::sqrt(0.5)).epsilon(1e-14));
    for (int f = 1; f <= 64; ++f) {
        for (int i = 1; i <= f; ++i) {
            const double w = loss_weight(i, f);
            CHECK(w > 1.0);
            CHECK(w <= 2.0);
            if (i > 1) CHECK(w > loss_weight(i - 1, f));
        }
    }
    CHECK(allocate_steps(1, 10) == 40);
    CHECK(allocate_steps(10, 10) == 100);
    CHECK(allocate_steps(5, 9) == 70);
    int sum = 0;
    for (int i = 1; i <= 10; ++i) {
        sum += allocate_steps(i, 10);
        if (i > 1) CHECK(allocate_steps(i, 10) >= allocate_steps(i - 1, 10));
    }
    CHECK(sum == 700);
    CHECK_THROWS_AS(allocate_steps(1, 1), UsageError);
    CHECK_THROWS_AS(allocate_steps(0, 10), UsageError);
}

TEST_CASE("zero denoiser outputs zero and conditioning matters") {
    const DenoiserConfig cfg = tiny();
    const DenoiserMlp<double> zero(cfg);
    std::mt19937_64 rng(2);
    const Mat<double> x = random_mat(4, cfg.token_dim, rng);
    const Mat<double> z = random_mat(4, cfg.cond_dim, rng);
    const std::vector<int> t{1, 10, 100, 1000};
    CHECK(denoise(zero, x, t, z).cwiseAbs().maxCoeff() == 0.0);
    const auto m = random_mlp(cfg, 3);
    const Mat<double> z2 = random_mat(4, cfg.cond_dim, rng);
    CHECK((denoise(m, x, t, z) - denoise(m, x, t, z2)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("depth-1 width-2 denoiser matches hand computation") {
    DenoiserConfig cfg;
    cfg.token_dim = 1;
    cfg.cond_dim = 1;
    cfg.width = 2;
    cfg.depth = 1;
    cfg.time_dim = 2;
    DenoiserMlp<double> m(cfg);
    // With zero modulation the block is x + gate * fc2(silu(fc1(ln(x)))) and gate = b_gate.
    m.in_w << 1.0, -2.0;
    m.in_b << 0.5, 0.0;
    m.blocks[0].mod_b << 0.0, 0.0, 0.0, 0.0, 0.5, 2.0;
    m.blocks[0].fc1_w << 1.0, 0.0, 0.0, 1.0;
    m.blocks[0].fc2_w << 1.0, 0.0, 0.0, 1.0;
    m.out_w << 1.0, 3.0;
    m.out_b << 0.25;

    const double xin = 0.7;
    const Mat<double> x = Mat<double>::Constant(1, 1, xin);
    const Mat<double> z = Mat<double>::Constant(1, 1, -4.0);
    const double out = denoise(m, x, std::vector<int>{17}, z)(0, 0);

    const auto ln = [](double a, double b) {
        const double mu = 0.5 * (a + b);
        const double sd = std::sqrt(0.25 * (a - b) * (a - b) + 1e-6);
        return std::pair{(a - mu) / sd, (b - mu) / sd};
    };
    const auto silu = [](double v) { return v / (1.0 + std::exp(-v)); };
    double h0 = xin + 0.5, h1 = -2.0 * xin;
    const auto [l0, l1] = ln(h0, h1);
    h0 += 0.5 * silu(l0);
    h1 += 2.0 * silu(l1);
    const auto [f0, f1] = ln(h0, h1);
    CHECK(out == doctest::Approx(f0 + 3.0 * f1 + 0.25).epsilon(1e-12));
}

TEST_CASE("denoiser and loss gradients match central differences") {
    const NoiseSchedule sched(1000);
    for (auto [depth, width] : {std::pair<Index, Index>{1, 8}, {2, 16}}) {
        for (std::uint64_t seed : {21u, 22u, 23u}) {
            const DenoiserConfig cfg = tiny(depth, width);
            auto m = random_mlp(cfg, seed);
            std::mt19937_64 rng(seed + 100);
            const Index n = 4;
            Mat<double> z = random_mat(n, cfg.cond_dim, rng);
            const Mat<double> target = random_mat(n, cfg.token_dim, rng);
            const auto draws = LossDraws<double>::sample(2 * n, cfg.token_dim, sched, rng);
            const double weight = loss_weight(3, 10);

            auto grad = m.zeros_like();
            const auto res = diffusion_loss(m, z, target, weight, draws, sched, grad);
            const auto loss = [&] {
                auto scratch = m.zeros_like();
                return diffusion_loss(m, z, target, weight, draws, sched, scratch).weighted;
            };
            const auto check = far::testing::check_params(m, grad, loss);
            INFO("depth " << depth << " seed " << seed << " worst " << check.worst);
            CHECK(check.max_rel < 1e-4);

            double zerr = 0.0;
            for (Index i = 0; i < z.size(); ++i) {
                const double h = 1e-4, s = z.data()[i];
                z.data()[i] = s + h;
                const double up = loss();
                z.data()[i] = s - h;
                const double down = loss();
                z.data()[i] = s;
                const double num = (up - down) / (2 * h);
                zerr = std::max(zerr, std::abs(num - res.dz.data()[i]) / std::max({std::abs(num), 1e-6}));
            }
            CHECK(zerr < 1e-4);
            CHECK(res.weighted == doctest::Approx(weight * res.loss).epsilon(1e-14));
        }
    }
}

TEST_CASE("loss averages squared noise error over rows and components") {
    const DenoiserConfig cfg = tiny();
    const DenoiserMlp<double> zero(cfg);
    const NoiseSchedule sched(1000);
    std::mt19937_64 rng(5);
    const Mat<double> z = random_mat(3, cfg.cond_dim, rng);
    const Mat<double> target = random_mat(3, cfg.token_dim, rng);
    const auto draws = LossDraws<double>::sample(6, cfg.token_dim, sched, rng);
    auto grad = zero.zeros_like();
    const auto res = diffusion_loss(zero, z, target, 2.0, draws, sched, grad);
    CHECK(res.loss == doctest::Approx(draws.noise.squaredNorm() / double(draws.noise.size())).epsilon(1e-14));
    CHECK(res.weighted == doctest::Approx(2.0 * res.loss).epsilon(1e-14));

    LossDraws<double> bad = draws;
    bad.t.pop_back();
    CHECK_THROWS_AS(diffusion_loss(zero, z, target, 1.0, bad, sched, grad), UsageError);
}

TEST_CASE("respaced timesteps are strictly decreasing from T") {
    const NoiseSchedule s(1000);
    for (int count : {1, 2, 7, 40, 70, 100, 999, 1000}) {
        const auto ts = s.respaced(count);
        CHECK(ts.size() == std::size_t(count));
        CHECK(ts.front() == 1000);
        for (std::size_t k = 1; k < ts.size(); ++k) CHECK(ts[k] < ts[k - 1]);
        CHECK(ts.back() >= 1);
    }
    CHECK(s.respaced(1000).back() == 1);
    CHECK_THROWS_AS(s.respaced(0), UsageError);
    CHECK_THROWS_AS(s.respaced(1001), UsageError);
}

TEST_CASE("zero-prediction sampler output is centered") {
    DenoiserConfig cfg = tiny(1, 4);
    cfg.token_dim = 1;
    const DenoiserMlp<double> zero(cfg);
    const NoiseSchedule sched(1000);
    std::mt19937_64 rng(6);
    const Index rows = 10000;
    const Mat<double> z = Mat<double>::Zero(rows, cfg.cond_dim);
    const Mat<double> x = sample_tokens(zero, z, 1000, sched, 1.0, rng);
    const double mean = x.mean();
    const double sd = std::sqrt((x.array() - mean).square().sum() / double(rows - 1));
    CHECK(std::abs(mean) < 5.0 * sd / std::sqrt(double(rows)));
}

TEST_CASE("temperature zero is deterministic across rng seeds") {
    const DenoiserConfig cfg = tiny();
    const auto m = random_mlp(cfg, 7);
    const NoiseSchedule sched(1000);
    std::mt19937_64 zr(7);
    const Mat<double> z = random_mat(5, cfg.cond_dim, zr);
    std::mt19937_64 a(1), b(2);
    const Mat<double> xa = sample_tokens(m, z, 50, sched, 0.0, a);
    const Mat<double> xb = sample_tokens(m, z, 50, sched, 0.0, b);
    CHECK((xa - xb).cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 c(1), d(2);
    CHECK((sample_tokens(m, z, 50, sched, 1.0, c) - sample_tokens(m, z, 50, sched, 1.0, d)).cwiseAbs().maxCoeff() >
          0.0);
    CHECK_THROWS_AS(sample_tokens(m, z, 0, sched, 1.0, c), UsageError);
    CHECK_THROWS_AS(sample_tokens(m, z, 1001, sched, 1.0, c), UsageError);
}

TEST_CASE("sampler bounds clip every x0 estimate") {
    const DenoiserConfig cfg = tiny();
    const auto m = random_mlp(cfg, 8);
    const NoiseSchedule sched(1000);
    std::mt19937_64 rng(8);
    const Mat<double> z = random_mat(20, cfg.cond_dim, rng);
    SampleBounds box{Eigen::VectorXd::Constant(cfg.token_dim, -0.5), Eigen::VectorXd::Constant(cfg.token_dim, 0.5)};
    const Mat<double> x = sample_tokens(m, z, 30, sched, 0.0, rng, box);
    // The last update returns the clipped x0 exactly.
    CHECK(x.maxCoeff() <= 0.5 + 1e-12);
    CHECK(x.minCoeff() >= -0.5 - 1e-12);
}
