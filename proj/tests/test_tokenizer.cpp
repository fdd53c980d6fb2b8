#include <doctest.h>

#include <random>

#include "far/tokenizer.hpp"

using namespace far;

namespace {

Image random_image(Index h, Index w, Index c, std::mt19937_64& rng) {
    Image img(h, w, c);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Index i = 0; i < img.data.size(); ++i) img.data[i] = u(rng);
    return img;
}

} // namespace

TEST_CASE("4x4 patch layout by hand") {
    Image img(4, 4, 1);
    for (Index i = 0; i < 16; ++i) img.data[i] = double(i) / 16.0;
    const auto g = patchify<double>(img, TokenizerStats::identity(2, 1));
    CHECK(g.rows() == 2);
    CHECK(g.cols() == 2);
    CHECK(g.channels() == 4);
    // Pixel index y*4+x; patch (r, q) holds rows 2r..2r+1, cols 2q..2q+1.
    const int expect[4][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}};
    for (Index p = 0; p < 4; ++p)
        for (Index k = 0; k < 4; ++k) CHECK(g.data()(p, k) == double(expect[p][k]) / 16.0);
}

TEST_CASE("colour channels interleave inside a patch") {
    Image img(2, 2, 3);
    for (Index i = 0; i < 12; ++i) img.data[i] = double(i) / 12.0;
    const auto g = patchify<double>(img, TokenizerStats::identity(2, 3));
    CHECK(g.positions() == 1);
    for (Index k = 0; k < 12; ++k) CHECK(g.data()(0, k) == double(k) / 12.0);
}

TEST_CASE("identity stats give an 8x8 grid of raw pixels") {
    std::mt19937_64 rng(1);
    const Image img = random_image(16, 16, 1, rng);
    const auto g = patchify<double>(img, TokenizerStats::identity(2, 1));
    CHECK(g.rows() == 8);
    CHECK(g.channels() == 4);
    CHECK(g(3, 5, 2) == img(7, 10));
}

TEST_CASE("constant images and standardization") {
    Image img(6, 6, 1, 0.3);
    TokenizerStats s = TokenizerStats::identity(3, 1);
    s.mean.setConstant(0.1);
    s.stddev.setConstant(0.5);
    const auto g = patchify<double>(img, s);
    CHECK((g.data().array() - 0.4).abs().maxCoeff() < 1e-15);

    TokenizerStats half = TokenizerStats::identity(2, 1);
    half.mean.setConstant(0.5);
    const Image out = unpatchify(TokenGrid<double>(3, 3, 4), half);
    CHECK((out.data - 0.5).abs().maxCoeff() == 0.0);
}

TEST_CASE("round trips") {
    std::mt19937_64 rng(2);
    std::vector<Image> data;
    for (int i = 0; i < 5; ++i) data.push_back(random_image(8, 8, 1, rng));
    const TokenizerStats s = fit_stats(data, 2);
    for (const auto& img : data) {
        const Image back = unpatchify(patchify<double>(img, s), s);
        CHECK((back.data - img.data).abs().maxCoeff() < 1e-14);
    }
    // A grid whose decode stays inside [0, 1] survives grid -> image -> grid.
    const auto g = patchify<double>(random_image(8, 8, 1, rng), s);
    const auto again = patchify<double>(unpatchify(g, s), s);
    CHECK(max_abs_diff(g, again) < 1e-12);

    const Image ident = random_image(4, 4, 3, rng);
    const auto id = TokenizerStats::identity(2, 3);
    CHECK((unpatchify(patchify<double>(ident, id), id).data - ident.data).abs().maxCoeff() == 0.0);
}

TEST_CASE("decode clamps to [0, 1]") {
    TokenGrid<double> g(2, 2, 4);
    g.data().setConstant(5.0);
    g.data()(0, 0) = -5.0;
    const Image img = unpatchify(g, TokenizerStats::identity(2, 1));
    CHECK(img.data.maxCoeff() == 1.0);
    CHECK(img.data.minCoeff() == 0.0);
}

TEST_CASE("fit_stats agrees with a two-pass computation") {
    std::mt19937_64 rng(3);
    std::vector<Image> data;
    for (int i = 0; i < 7; ++i) {
        Image img = random_image(6, 4, 1, rng);
        img.data = img.data * 1e-3 + 0.9;
        data.push_back(img);
    }
    const TokenizerStats s = fit_stats(data, 2);
    for (Index k = 0; k < 4; ++k) {
        const Index dy = k / 2, dx = k % 2;
        double sum = 0.0, n = 0.0;
        for (const auto& img : data)
            for (Index y = dy; y < 6; y += 2)
                for (Index x = dx; x < 4; x += 2) sum += img(y, x), n += 1.0;
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& img : data)
            for (Index y = dy; y < 6; y += 2)
                for (Index x = dx; x < 4; x += 2) ss += (img(y, x) - mean) * (img(y, x) - mean);
        CHECK(std::abs(s.mean[k] - mean) < 1e-9);
        CHECK(std::abs(s.stddev[k] - std::sqrt(ss / n)) < 1e-9);
    }
}

TEST_CASE("fit_stats edge cases") {
    std::vector<Image> same(3, Image(4, 4, 1, 0.25));
    const auto s = fit_stats(same, 2);
    CHECK((s.mean.array() - 0.25).abs().maxCoeff() < 1e-15);
    CHECK((s.stddev.array() == TokenizerStats::kStdFloor).all());

    std::vector<Image> two{Image(4, 4, 1, 0.0), Image(4, 4, 1, 1.0)};
    const auto t = fit_stats(two, 2);
    CHECK((t.mean.array() - 0.5).abs().maxCoeff() < 1e-15);
    CHECK((t.stddev.array() - 0.5).abs().maxCoeff() < 1e-15);

    CHECK_THROWS_AS(fit_stats(std::vector<Image>{}, 2), UsageError);
}

TEST_CASE("token bounds decode to the pixel range") {
    TokenizerStats s = TokenizerStats::identity(2, 1);
    s.mean << 0.1, 0.2, 0.3, 0.4;
    s.stddev << 0.5, 0.25, 2.0, 1.0;
    const auto [lo, hi] = token_bounds(s);
    TokenGrid<double> g(1, 1, 4);
    g.data().row(0) = lo.transpose();
    CHECK(unpatchify(g, s).data.abs().maxCoeff() < 1e-15);
    g.data().row(0) = hi.transpose();
    CHECK((unpatchify(g, s).data - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("invalid shapes and stats") {
    std::mt19937_64 rng(4);
    const auto id = TokenizerStats::identity(2, 1);
    CHECK_THROWS_AS(patchify<double>(random_image(5, 4, 1, rng), id), UsageError);
    CHECK_THROWS_AS(patchify<double>(random_image(4, 4, 3, rng), id), UsageError);
    CHECK_THROWS_AS(unpatchify(TokenGrid<double>(2, 2, 3), id), UsageError);
    TokenizerStats bad = id;
    bad.stddev[1] = 0.0;
    CHECK_THROWS_AS(patchify<double>(random_image(4, 4, 1, rng), bad), NumericError);
}
