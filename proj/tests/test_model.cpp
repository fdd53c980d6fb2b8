#include <doctest.h>

#include <cmath>
#include <limits>
#include <tuple>
#include <random>
#include <vector>

#include "far/model.hpp"
#include "support.hpp"

using namespace far;
using far::testing::random_grid;

namespace {

ModelConfig tiny_config(Index depth = 1, Index width = 8, Index heads = 2) {
    ModelConfig c;
    c.grid_h = 2;
    c.grid_w = 3;
    c.token_dim = 3;
    c.width = width;
    c.depth = depth;
    c.heads = heads;
    c.num_classes = 3;
    c.levels = 4;
    c.mlp_ratio = 2;
    return c;
}

// Initialized model with every tensor perturbed so no gradient is structurally trivial.
FarModel<double> random_model(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto m = FarModel<double>::initialized(cfg, rng, 0.5);
    std::normal_distribution<double> n(0.0, 0.2);
    m.for_each([&](const std::string&, Mat<double>& t) {
        for (Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
    });
    return m;
}

// Loop-level reference of the transformer forward pass.
struct Ref {
    using V = std::vector<double>;
    using M = std::vector<V>;

    static M affine(const M& x, const Mat<double>& w, const Mat<double>& b) {
        M y(x.size(), V(std::size_t(w.cols()), 0.0));
        for (std::size_t r = 0; r < x.size(); ++r)
            for (Index j = 0; j < w.cols(); ++j) {
                double s = b(0, j);
                for (Index i = 0; i < w.rows(); ++i) s += x[r][std::size_t(i)] * w(i, j);
                y[r][std::size_t(j)] = s;
            }
        return y;
    }

    static M norm(const M& x, const Mat<double>& g, const Mat<double>& b) {
        M y = x;
        for (auto& row : y) {
            double mu = 0.0, var = 0.0;
            for (double v : row) mu += v;
            mu /= double(row.size());
            for (double v : row) var += (v - mu) * (v - mu);
            var /= double(row.size());
            for (std::size_t j = 0; j < row.size(); ++j)
                row[j] = (row[j] - mu) / std::sqrt(var + 1e-6) * g(0, Index(j)) + b(0, Index(j));
        }
        return y;
    }

    static M run(const FarModel<double>& m, const TokenGrid<double>& tokens, const MaskPlan& mask, Index cls,
                 int level) {
        const auto& cfg = m.config();
        const std::size_t n = std::size_t(cfg.positions());
        const std::size_t w = std::size_t(cfg.width);
        M tok(n, V(std::size_t(cfg.token_dim)));
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t k = 0; k < tok[p].size(); ++k) tok[p][k] = tokens.data()(Index(p), Index(k));
        M proj = affine(tok, m.in_w, m.in_b);
        M x(n + 1, V(w));
        for (std::size_t j = 0; j < w; ++j) {
            x[0][j] = m.class_emb(cls, Index(j)) + m.level_emb(level - 1, Index(j));
            for (std::size_t p = 0; p < n; ++p) {
                const double e = mask.is_masked(Index(p)) ? m.mask_token(0, Index(j)) : proj[p][j];
                x[p + 1][j] = e + m.pos(Index(p), Index(j)) + m.level_emb(level - 1, Index(j));
            }
        }
        const std::size_t hd = w / std::size_t(cfg.heads);
        for (const auto& b : m.blocks) {
            M a = norm(x, b.ln1_g, b.ln1_b);
            M qkv = affine(a, b.qkv_w, b.qkv_b);
            M att(n + 1, V(w, 0.0));
            for (std::size_t h = 0; h < std::size_t(cfg.heads); ++h) {
                for (std::size_t i = 0; i <= n; ++i) {
                    V s(n + 1);
                    double mx = -1e300;
                    for (std::size_t j = 0; j <= n; ++j) {
                        double dot = 0.0;
                        for (std::size_t k = 0; k < hd; ++k) dot += qkv[i][h * hd + k] * qkv[j][w + h * hd + k];
                        s[j] = dot / std::sqrt(double(hd));
                        mx = std::max(mx, s[j]);
                    }
                    double z = 0.0;
                    for (auto& v : s) z += (v = std::exp(v - mx));
                    for (std::size_t j = 0; j <= n; ++j)
                        for (std::size_t k = 0; k < hd; ++k) att[i][h * hd + k] += s[j] / z * qkv[j][2 * w + h * hd + k];
                }
            }
            M o = affine(att, b.proj_w, b.proj_b);
            for (std::size_t i = 0; i <= n; ++i)
                for (std::size_t j = 0; j < w; ++j) x[i][j] += o[i][j];
            M hid = affine(norm(x, b.ln2_g, b.ln2_b), b.fc1_w, b.fc1_b);
            for (auto& row : hid)
                for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
            M o2 = affine(hid, b.fc2_w, b.fc2_b);
            for (std::size_t i = 0; i <= n; ++i)
                for (std::size_t j = 0; j < w; ++j) x[i][j] += o2[i][j];
        }
        M z = affine(norm(x, m.lnf_g, m.lnf_b), m.out_w, m.out_b);
        z.erase(z.begin());
        return z;
    }
};

MaskPlan some_mask(const ModelConfig& c) {
    MaskPlan m = MaskPlan::none(c.grid_h, c.grid_w);
    m.masked[1] = 1;
    m.masked[4] = 1;
    return m;
}

} // namespace

TEST_CASE("forward matches a loop-level reference") {
    for (std::uint64_t seed : {1u, 2u}) {
        const ModelConfig cfg = tiny_config(2, 8, 2);
        const auto m = random_model(cfg, seed);
        std::mt19937_64 rng(seed + 10);
        const auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
        const MaskPlan mask = some_mask(cfg);
        const auto z = forward(m, tokens, mask, 2, 3);
        const auto ref = Ref::run(m, tokens, mask, 2, 3);
        double err = 0.0;
        for (Index p = 0; p < z.positions(); ++p)
            for (Index k = 0; k < z.channels(); ++k)
                err = std::max(err, std::abs(z.data()(p, k) - ref[std::size_t(p)][std::size_t(k)]));
        CHECK(err < 1e-12);
    }
}

TEST_CASE("single-head 1x2 grid forward matches hand computation") {
    ModelConfig cfg;
    cfg.grid_h = 1;
    cfg.grid_w = 2;
    cfg.token_dim = 1;
    cfg.width = 2;
    cfg.depth = 1;
    cfg.heads = 1;
    cfg.num_classes = 1;
    cfg.levels = 2;
    cfg.mlp_ratio = 1;
    FarModel<double> m(cfg);
    // Attention only: q = k = 0 gives uniform weights; v = x; MLP branch is zero.
    m.in_w << 1.0, -1.0;
    m.pos << 0.1, 0.0, 0.0, 0.2;
    m.class_emb << 0.3, 0.0, 0.0, 0.0;
    m.blocks[0].ln1_g << 1.0, 1.0;
    m.blocks[0].qkv_w.rightCols(2) = Mat<double>::Identity(2, 2);
    m.blocks[0].proj_w = Mat<double>::Identity(2, 2);
    m.lnf_g << 1.0, 1.0;
    m.out_w = Mat<double>::Identity(2, 2);

    const TokenGrid<double> tokens(1, 2, (Mat<double>(2, 1) << 0.5, -1.0).finished());
    const auto z = forward(m, tokens, MaskPlan::none(1, 2), 0, 1);

    // Rows: class [0.3, 0], token0 [0.6, -0.5], token1 [-1.0, 1.2].
    // Each LN'd 2-vector is [+-1, -+1] * 1/sqrt(1 + 4e-6 / d^2) ~ sign pattern.
    const auto ln = [](double a, double b) {
        const double mu = 0.5 * (a + b);
        const double sd = std::sqrt(0.25 * (a - b) * (a - b) + 1e-6);
        return std::pair{(a - mu) / sd, (b - mu) / sd};
    };
    const double rows[3][2] = {{0.3, 0.0}, {0.6, -0.5}, {-1.0, 1.2}};
    double v[3][2];
    for (int i = 0; i < 3; ++i) std::tie(v[i][0], v[i][1]) = ln(rows[i][0], rows[i][1]);
    const double mean0 = (v[0][0] + v[1][0] + v[2][0]) / 3.0;
    const double mean1 = (v[0][1] + v[1][1] + v[2][1]) / 3.0;
    for (int p = 0; p < 2; ++p) {
        const auto [e0, e1] = ln(rows[p + 1][0] + mean0, rows[p + 1][1] + mean1);
        CHECK(z.data()(p, 0) == doctest::Approx(e0).epsilon(1e-12));
        CHECK(z.data()(p, 1) == doctest::Approx(e1).epsilon(1e-12));
    }
}

TEST_CASE("backward matches central differences") {
    for (auto [depth, width] : {std::pair<Index, Index>{1, 8}, {2, 16}}) {
        for (std::uint64_t seed : {11u, 12u, 13u}) {
            const ModelConfig cfg = tiny_config(depth, width, 2);
            auto m = random_model(cfg, seed);
            std::mt19937_64 rng(seed * 7);
            const auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
            const Mat<double> dz = far::testing::random_mat(cfg.positions(), cfg.z_dim(), rng);
            const MaskPlan mask = some_mask(cfg);
            const auto loss = [&] { return (forward(m, tokens, mask, 1, 2).data().array() * dz.array()).sum(); };

            ForwardCache<double> cache;
            forward(m, tokens, mask, 1, 2, &cache);
            auto grad = m.zeros_like();
            Mat<double> dtok;
            backward(m, cache, dz, grad, &dtok);
            const auto res = far::testing::check_params(m, grad, loss);
            INFO("depth " << depth << " seed " << seed << " worst " << res.worst);
            CHECK(res.max_rel < 1e-4);

            TokenGrid<double> t = tokens;
            double tok_err = 0.0;
            for (Index i = 0; i < t.data().size(); ++i) {
                const double h = 1e-4;
                const double s = t.data().data()[i];
                t.data().data()[i] = s + h;
                const double up = (forward(m, t, mask, 1, 2).data().array() * dz.array()).sum();
                t.data().data()[i] = s - h;
                const double down = (forward(m, t, mask, 1, 2).data().array() * dz.array()).sum();
                t.data().data()[i] = s;
                const double num = (up - down) / (2 * h);
                tok_err = std::max(tok_err, std::abs(num - dtok.data()[i]) / std::max({std::abs(num), 1e-6}));
            }
            CHECK(tok_err < 1e-4);
        }
    }
}

TEST_CASE("zero upstream gradient gives zero gradients") {
    const ModelConfig cfg = tiny_config();
    auto m = random_model(cfg, 3);
    std::mt19937_64 rng(3);
    const auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
    ForwardCache<double> cache;
    forward(m, tokens, some_mask(cfg), 0, 1, &cache);
    auto grad = m.zeros_like();
    backward(m, cache, Mat<double>(Mat<double>::Zero(cfg.positions(), cfg.z_dim())), grad);
    double total = 0.0;
    grad.for_each([&](const std::string&, const Mat<double>& t) { total += t.cwiseAbs().sum(); });
    CHECK(total == 0.0);
}

TEST_CASE("unused embedding rows get zero gradient") {
    const ModelConfig cfg = tiny_config();
    auto m = random_model(cfg, 4);
    std::mt19937_64 rng(4);
    const auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
    ForwardCache<double> cache;
    forward(m, tokens, MaskPlan::none(cfg.grid_h, cfg.grid_w), 1, 2, &cache);
    auto grad = m.zeros_like();
    backward(m, cache, far::testing::random_mat(cfg.positions(), cfg.z_dim(), rng), grad);
    CHECK(grad.class_emb.row(0).norm() == 0.0);
    CHECK(grad.class_emb.row(2).norm() == 0.0);
    CHECK(grad.class_emb.row(1).norm() > 0.0);
    CHECK(grad.level_emb.row(0).norm() == 0.0);
    CHECK(grad.mask_token.norm() == 0.0);
}

TEST_CASE("masked token values never reach the output") {
    const ModelConfig cfg = tiny_config(2);
    const auto m = random_model(cfg, 5);
    std::mt19937_64 rng(5);
    auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
    const MaskPlan mask = some_mask(cfg);
    const auto z0 = forward(m, tokens, mask, 0, 1);
    tokens.data().row(1).setConstant(123.0);
    tokens.data().row(4).setConstant(-7.0);
    CHECK(max_abs_diff(z0, forward(m, tokens, mask, 0, 1)) == 0.0);

    const MaskPlan all = MaskPlan::all(cfg.grid_h, cfg.grid_w);
    const auto a = forward(m, random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng), all, 0, 1);
    const auto b = forward(m, random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng), all, 0, 1);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("swapping two tokens with their positional embeddings swaps their outputs") {
    const ModelConfig cfg = tiny_config(2);
    auto m = random_model(cfg, 6);
    std::mt19937_64 rng(6);
    auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
    const MaskPlan none = MaskPlan::none(cfg.grid_h, cfg.grid_w);
    const auto z = forward(m, tokens, none, 0, 1);
    tokens.data().row(0).swap(tokens.data().row(5));
    m.pos.row(0).swap(m.pos.row(5));
    const auto zs = forward(m, tokens, none, 0, 1);
    CHECK((z.data().row(0) - zs.data().row(5)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((z.data().row(5) - zs.data().row(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((z.data().row(2) - zs.data().row(2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward is deterministic and level-sensitive") {
    const ModelConfig cfg = tiny_config(2);
    const auto m = random_model(cfg, 7);
    std::mt19937_64 rng(7);
    const auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
    const MaskPlan none = MaskPlan::none(cfg.grid_h, cfg.grid_w);
    CHECK(max_abs_diff(forward(m, tokens, none, 0, 1), forward(m, tokens, none, 0, 1)) == 0.0);
    CHECK(max_abs_diff(forward(m, tokens, none, 0, 1), forward(m, tokens, none, 0, cfg.levels)) > 1e-6);
}

TEST_CASE("forward rejects invalid inputs") {
    const ModelConfig cfg = tiny_config();
    const auto m = random_model(cfg, 8);
    std::mt19937_64 rng(8);
    const auto tokens = random_grid(cfg.grid_h, cfg.grid_w, cfg.token_dim, rng);
    const MaskPlan none = MaskPlan::none(cfg.grid_h, cfg.grid_w);
    CHECK_THROWS_AS(forward(m, tokens, none, 0, 0), UsageError);
    CHECK_THROWS_AS(forward(m, tokens, none, 0, cfg.levels + 1), UsageError);
    CHECK_THROWS_AS(forward(m, tokens, none, cfg.num_classes + 1, 1), UsageError);
    CHECK_THROWS_AS(forward(m, random_grid(3, 3, cfg.token_dim, rng), none, 0, 1), UsageError);
    auto bad = m;
    bad.in_w(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(forward(bad, tokens, none, 0, 1), NumericError);
    ModelConfig odd;
    odd.width = 10;
    odd.heads = 4;
    CHECK_THROWS_AS(odd.validate(), UsageError);
}
