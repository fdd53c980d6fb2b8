#pragma once

#include <random>
#include <string>
#include <vector>

#include "far/mask.hpp"
#include "far/nn.hpp"
#include "far/tensor.hpp"

namespace far {

struct ModelConfig {
    Index grid_h = 8;
    Index grid_w = 8;
    Index token_dim = 4;
    Index width = 64;
    Index depth = 2;
    Index heads = 4;
    Index num_classes = 4;
    int levels = 10;
    Index mlp_ratio = 4;

    Index positions() const noexcept { return grid_h * grid_w; }
    Index z_dim() const noexcept { return width; }
    Index head_dim() const noexcept { return width / heads; }
    /// Index of the class-embedding row used for unconditional passes.
    Index unconditional_class() const noexcept { return num_classes; }

    void validate() const {
        require(grid_h >= 1 && grid_w >= 1 && token_dim >= 1, "ModelConfig: grid and token dims must be positive");
        require(width >= 1 && depth >= 1 && heads >= 1, "ModelConfig: width, depth, heads must be positive");
        require(width % heads == 0, "ModelConfig: width must be divisible by heads");
        require(num_classes >= 1, "ModelConfig: need at least one class");
        require(levels >= 2, "ModelConfig: need at least two frequency levels");
        require(mlp_ratio >= 1, "ModelConfig: mlp ratio must be positive");
    }
};

/// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
template <typename Scalar>
struct TransformerBlock {
    Mat<Scalar> ln1_g, ln1_b;
    Mat<Scalar> qkv_w, qkv_b;
    Mat<Scalar> proj_w, proj_b;
    Mat<Scalar> ln2_g, ln2_b;
    Mat<Scalar> fc1_w, fc1_b;
    Mat<Scalar> fc2_w, fc2_b;

    template <typename Self, typename Fn>
    static void visit(Self& self, const std::string& prefix, Fn&& fn) {
        fn(prefix + "ln1.g", self.ln1_g);
        fn(prefix + "ln1.b", self.ln1_b);
        fn(prefix + "qkv.w", self.qkv_w);
        fn(prefix + "qkv.b", self.qkv_b);
        fn(prefix + "proj.w", self.proj_w);
        fn(prefix + "proj.b", self.proj_b);
        fn(prefix + "ln2.g", self.ln2_g);
        fn(prefix + "ln2.b", self.ln2_b);
        fn(prefix + "fc1.w", self.fc1_w);
        fn(prefix + "fc1.b", self.fc1_b);
        fn(prefix + "fc2.w", self.fc2_w);
        fn(prefix + "fc2.b", self.fc2_b);
    }
};

/// Bidirectional transformer mapping a (partially masked) level-i token grid to
/// per-position conditioning vectors z.
template <typename Scalar>
class FarModel {
public:
    FarModel() = default;

    /// All parameters zero; layer-norm gains zero as well.
    explicit FarModel(const ModelConfig& cfg) : config_(cfg) {
        cfg.validate();
        const Index w = cfg.width;
        const Index hidden = cfg.mlp_ratio * w;
        in_w = Mat<Scalar>::Zero(cfg.token_dim, w);
        in_b = Mat<Scalar>::Zero(1, w);
        pos = Mat<Scalar>::Zero(cfg.positions(), w);
        level_emb = Mat<Scalar>::Zero(cfg.levels, w);
        class_emb = Mat<Scalar>::Zero(cfg.num_classes + 1, w);
        mask_token = Mat<Scalar>::Zero(1, w);
        blocks.resize(static_cast<std::size_t>(cfg.depth));
        for (auto& b : blocks) {
            b.ln1_g = Mat<Scalar>::Zero(1, w);
            b.ln1_b = Mat<Scalar>::Zero(1, w);
            b.qkv_w = Mat<Scalar>::Zero(w, 3 * w);
            b.qkv_b = Mat<Scalar>::Zero(1, 3 * w);
            b.proj_w = Mat<Scalar>::Zero(w, w);
            b.proj_b = Mat<Scalar>::Zero(1, w);
            b.ln2_g = Mat<Scalar>::Zero(1, w);
            b.ln2_b = Mat<Scalar>::Zero(1, w);
            b.fc1_w = Mat<Scalar>::Zero(w, hidden);
            b.fc1_b = Mat<Scalar>::Zero(1, hidden);
            b.fc2_w = Mat<Scalar>::Zero(hidden, w);
            b.fc2_b = Mat<Scalar>::Zero(1, w);
        }
        lnf_g = Mat<Scalar>::Zero(1, w);
        lnf_b = Mat<Scalar>::Zero(1, w);
        out_w = Mat<Scalar>::Zero(w, cfg.z_dim());
        out_b = Mat<Scalar>::Zero(1, cfg.z_dim());
    }

    /// Xavier-uniform affines, N(0, 0.02) embeddings, unit layer-norm gains.
    static FarModel initialized(const ModelConfig& cfg, std::mt19937_64& rng, double embed_std = 0.02) {
        FarModel m(cfg);
        const Index w = cfg.width;
        const Index hidden = cfg.mlp_ratio * w;
        m.in_w = nn::xavier_uniform<Scalar>(cfg.token_dim, w, rng);
        m.pos = nn::normal<Scalar>(cfg.positions(), w, embed_std, rng);
        m.level_emb = nn::normal<Scalar>(cfg.levels, w, embed_std, rng);
        m.class_emb = nn::normal<Scalar>(cfg.num_classes + 1, w, embed_std, rng);
        m.mask_token = nn::normal<Scalar>(1, w, embed_std, rng);
        for (auto& b : m.blocks) {
            b.ln1_g.setOnes();
            b.ln2_g.setOnes();
            b.qkv_w = nn::xavier_uniform<Scalar>(w, 3 * w, rng);
            b.proj_w = nn::xavier_uniform<Scalar>(w, w, rng);
            b.fc1_w = nn::xavier_uniform<Scalar>(w, hidden, rng);
            b.fc2_w = nn::xavier_uniform<Scalar>(hidden, w, rng);
        }
        m.lnf_g.setOnes();
        m.out_w = nn::xavier_uniform<Scalar>(w, cfg.z_dim(), rng);
        return m;
    }

    const ModelConfig& config() const noexcept { return config_; }

    FarModel zeros_like() const { return FarModel(config_); }

    template <typename Fn>
    void for_each(Fn&& fn) { visit(*this, fn); }
    template <typename Fn>
    void for_each(Fn&& fn) const { visit(*this, fn); }

    Mat<Scalar> in_w, in_b;
    Mat<Scalar> pos;
    Mat<Scalar> level_emb;
    Mat<Scalar> class_emb;
    Mat<Scalar> mask_token;
    std::vector<TransformerBlock<Scalar>> blocks;
    Mat<Scalar> lnf_g, lnf_b;
    Mat<Scalar> out_w, out_b;

private:
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn& fn) {
        fn(std::string("in.w"), self.in_w);
        fn(std::string("in.b"), self.in_b);
        fn(std::string("pos"), self.pos);
        fn(std::string("level_emb"), self.level_emb);
        fn(std::string("class_emb"), self.class_emb);
        fn(std::string("mask_token"), self.mask_token);
        for (std::size_t i = 0; i < self.blocks.size(); ++i)
            TransformerBlock<Scalar>::visit(self.blocks[i], "blocks." + std::to_string(i) + ".", fn);
        fn(std::string("lnf.g"), self.lnf_g);
        fn(std::string("lnf.b"), self.lnf_b);
        fn(std::string("out.w"), self.out_w);
        fn(std::string("out.b"), self.out_b);
    }

    ModelConfig config_;
};

template <typename Scalar>
struct BlockCache {
    Mat<Scalar> x_in;
    nn::NormCache<Scalar> ln1;
    Mat<Scalar> a;
    Mat<Scalar> qkv;
    std::vector<Mat<Scalar>> probs;
    Mat<Scalar> attn;
    Mat<Scalar> x_mid;
    nn::NormCache<Scalar> ln2;
    Mat<Scalar> b;
    Mat<Scalar> pre;
    Mat<Scalar> act;
};

/// Activations retained by forward for the backward pass.
template <typename Scalar>
struct ForwardCache {
    Mat<Scalar> tokens;
    MaskPlan mask;
    Index class_id = 0;
    int level = 1;
    std::vector<BlockCache<Scalar>> blocks;
    nn::NormCache<Scalar> lnf;
    Mat<Scalar> fin;
};

namespace detail {

template <typename Scalar>
void check_forward_inputs(const FarModel<Scalar>& model, const TokenGrid<Scalar>& tokens, const MaskPlan& mask,
                          Index class_id, int level) {
    const ModelConfig& cfg = model.config();
    if (tokens.rows() != cfg.grid_h || tokens.cols() != cfg.grid_w || tokens.channels() != cfg.token_dim)
        throw UsageError("forward: token grid shape does not match the model");
    if (mask.h != cfg.grid_h || mask.w != cfg.grid_w ||
        mask.masked.size() != static_cast<std::size_t>(cfg.positions()))
        throw UsageError("forward: mask shape does not match the model");
    if (class_id < 0 || class_id > cfg.unconditional_class())
        throw UsageError("forward: class id " + std::to_string(class_id) + " out of range");
    if (level < 1 || level > cfg.levels)
        throw UsageError("forward: level " + std::to_string(level) + " out of range");
}

template <typename Scalar>
void affine_norm(Mat<Scalar>& y, const Mat<Scalar>& g, const Mat<Scalar>& b) {
    y.array().rowwise() *= g.row(0).array();
    y.rowwise() += b.row(0);
}

} // namespace detail

/// Runs the transformer; the class token is prepended and its output dropped.
///
/// Masked positions use the mask-token embedding in place of the projected
/// token. Positional and level embeddings are added to every grid position;
/// the level embedding is also added to the class token. Attention is
/// unmasked (fully bidirectional).
template <typename Scalar>
TokenGrid<Scalar> forward(const FarModel<Scalar>& model, const TokenGrid<Scalar>& tokens, const MaskPlan& mask,
                          Index class_id, int level, ForwardCache<Scalar>* cache = nullptr) {
    detail::check_forward_inputs(model, tokens, mask, class_id, level);
    const ModelConfig& cfg = model.config();
    const Index n = cfg.positions();
    const Index len = n + 1;
    const Index width = cfg.width;
    const Index hd = cfg.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(hd));
    constexpr Scalar eps = Scalar(1e-6);

    Mat<Scalar> x(len, width);
    const Mat<Scalar> projected = nn::affine(tokens.data(), model.in_w, model.in_b);
    x.row(0) = model.class_emb.row(class_id);
    for (Index p = 0; p < n; ++p)
        x.row(p + 1) = mask.is_masked(p) ? model.mask_token.row(0) : projected.row(p);
    x.bottomRows(n) += model.pos;
    x.rowwise() += model.level_emb.row(level - 1);

    if (cache) {
        cache->tokens = tokens.data();
        cache->mask = mask;
        cache->class_id = class_id;
        cache->level = level;
        cache->blocks.assign(model.blocks.size(), BlockCache<Scalar>{});
    }

    for (std::size_t bi = 0; bi < model.blocks.size(); ++bi) {
        const auto& blk = model.blocks[bi];
        BlockCache<Scalar> local;
        BlockCache<Scalar>& bc = cache ? cache->blocks[bi] : local;
        bc.x_in = x;
        Mat<Scalar> a = nn::layer_norm(x, eps, bc.ln1);
        detail::affine_norm(a, blk.ln1_g, blk.ln1_b);
        bc.qkv = nn::affine(a, blk.qkv_w, blk.qkv_b);
        bc.a = std::move(a);
        bc.attn.resize(len, width);
        bc.probs.resize(static_cast<std::size_t>(cfg.heads));
        for (Index h = 0; h < cfg.heads; ++h) {
            const auto q = bc.qkv.middleCols(h * hd, hd);
            const auto k = bc.qkv.middleCols(width + h * hd, hd);
            const auto v = bc.qkv.middleCols(2 * width + h * hd, hd);
            Mat<Scalar> s = (q * k.transpose()) * scale;
            Mat<Scalar>& p = bc.probs[static_cast<std::size_t>(h)];
            p = nn::softmax_rows(s);
            bc.attn.middleCols(h * hd, hd).noalias() = p * v;
        }
        x += nn::affine(bc.attn, blk.proj_w, blk.proj_b);
        bc.x_mid = x;
        Mat<Scalar> b = nn::layer_norm(x, eps, bc.ln2);
        detail::affine_norm(b, blk.ln2_g, blk.ln2_b);
        bc.pre = nn::affine(b, blk.fc1_w, blk.fc1_b);
        bc.b = std::move(b);
        bc.act = nn::gelu(bc.pre);
        x += nn::affine(bc.act, blk.fc2_w, blk.fc2_b);
    }

    nn::NormCache<Scalar> lnf_local;
    nn::NormCache<Scalar>& lnf = cache ? cache->lnf : lnf_local;
    Mat<Scalar> fin = nn::layer_norm(x, eps, lnf);
    detail::affine_norm(fin, model.lnf_g, model.lnf_b);
    Mat<Scalar> z = nn::affine(fin, model.out_w, model.out_b);
    if (cache) cache->fin = std::move(fin);
    if (!z.allFinite()) throw NumericError("forward: non-finite activations");
    return TokenGrid<Scalar>(cfg.grid_h, cfg.grid_w, z.bottomRows(n).eval());
}

/// Backpropagates dz through a cached forward pass.
///
/// Parameter gradients accumulate into `grad`; token gradients (zero at masked
/// positions) are written to `dtokens` when non-null.
template <typename Scalar>
void backward(const FarModel<Scalar>& model, const ForwardCache<Scalar>& cache, const Mat<Scalar>& dz,
              FarModel<Scalar>& grad, Mat<Scalar>* dtokens = nullptr) {
    const ModelConfig& cfg = model.config();
    const Index n = cfg.positions();
    const Index len = n + 1;
    const Index width = cfg.width;
    const Index hd = cfg.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(hd));
    require(dz.rows() == n && dz.cols() == cfg.z_dim(), "backward: upstream gradient shape mismatch");
    require(cache.blocks.size() == model.blocks.size(), "backward: cache does not match model");

    Mat<Scalar> dfull = Mat<Scalar>::Zero(len, cfg.z_dim());
    dfull.bottomRows(n) = dz;
    Mat<Scalar> dfin = nn::affine_backward(cache.fin, model.out_w, dfull, grad.out_w, grad.out_b);
    // fin = xhat * g + b
    grad.lnf_g.row(0) += (dfin.array() * cache.lnf.xhat.array()).colwise().sum().matrix();
    grad.lnf_b.row(0) += dfin.colwise().sum();
    dfin.array().rowwise() *= model.lnf_g.row(0).array();
    Mat<Scalar> dx = nn::layer_norm_backward(dfin, cache.lnf);

    for (std::size_t bi = model.blocks.size(); bi-- > 0;) {
        const auto& blk = model.blocks[bi];
        const auto& bc = cache.blocks[bi];
        auto& gb = grad.blocks[bi];

        // MLP branch.
        Mat<Scalar> dact = nn::affine_backward(bc.act, blk.fc2_w, dx, gb.fc2_w, gb.fc2_b);
        Mat<Scalar> dpre = (dact.array() * nn::gelu_grad(bc.pre).array()).matrix();
        Mat<Scalar> db = nn::affine_backward(bc.b, blk.fc1_w, dpre, gb.fc1_w, gb.fc1_b);
        gb.ln2_g.row(0) += (db.array() * bc.ln2.xhat.array()).colwise().sum().matrix();
        gb.ln2_b.row(0) += db.colwise().sum();
        db.array().rowwise() *= blk.ln2_g.row(0).array();
        dx += nn::layer_norm_backward(db, bc.ln2);

        // Attention branch.
        Mat<Scalar> dattn = nn::affine_backward(bc.attn, blk.proj_w, dx, gb.proj_w, gb.proj_b);
        Mat<Scalar> dqkv(len, 3 * width);
        for (Index h = 0; h < cfg.heads; ++h) {
            const auto q = bc.qkv.middleCols(h * hd, hd);
            const auto k = bc.qkv.middleCols(width + h * hd, hd);
            const auto v = bc.qkv.middleCols(2 * width + h * hd, hd);
            const Mat<Scalar>& p = bc.probs[static_cast<std::size_t>(h)];
            const auto dout = dattn.middleCols(h * hd, hd);
            dqkv.middleCols(2 * width + h * hd, hd).noalias() = p.transpose() * dout;
            const Mat<Scalar> dp = dout * v.transpose();
            const Mat<Scalar> ds = nn::softmax_rows_backward(p, dp) * scale;
            dqkv.middleCols(h * hd, hd).noalias() = ds * k;
            dqkv.middleCols(width + h * hd, hd).noalias() = ds.transpose() * q;
        }
        Mat<Scalar> da = nn::affine_backward(bc.a, blk.qkv_w, dqkv, gb.qkv_w, gb.qkv_b);
        gb.ln1_g.row(0) += (da.array() * bc.ln1.xhat.array()).colwise().sum().matrix();
        gb.ln1_b.row(0) += da.colwise().sum();
        da.array().rowwise() *= blk.ln1_g.row(0).array();
        dx += nn::layer_norm_backward(da, bc.ln1);
    }

    // Embedding layer.
    grad.class_emb.row(cache.class_id) += dx.row(0);
    grad.level_emb.row(cache.level - 1) += dx.colwise().sum();
    grad.pos += dx.bottomRows(n);
    Mat<Scalar> dproj = dx.bottomRows(n);
    for (Index p = 0; p < n; ++p) {
        if (cache.mask.is_masked(p)) {
            grad.mask_token.row(0) += dproj.row(p);
            dproj.row(p).setZero();
        }
    }
    nn::affine_backward_params(cache.tokens, dproj, grad.in_w, grad.in_b);
    if (dtokens) *dtokens = dproj * model.in_w.transpose();
}

} // namespace far
