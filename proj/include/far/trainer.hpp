#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "far/checkpoint.hpp"
#include "far/config.hpp"
#include "far/dataset.hpp"
#include "far/diffloss.hpp"
#include "far/model.hpp"
#include "far/optim.hpp"
#include "far/schedules.hpp"
#include "far/spectral.hpp"
#include "far/tokenizer.hpp"

namespace far {

/// Raises glibc's mmap and trim thresholds so large activation temporaries stay on the heap.
void tune_allocator();

/// Level drawn uniformly from [1, F - 1], or [1, F] with `include_top`.
int sample_level(int levels, std::mt19937_64& rng, bool include_top = false);

/// Outcome of one training sample.
struct SampleRecord {
    int level = 0;
    double loss = 0.0;
    double weighted = 0.0;
};

struct StepReport {
    long step = 0; // 1-based index of the completed step
    double loss = 0.0;
    double weighted = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    std::vector<SampleRecord> samples;
};

/// Gradients and loss of one training sample, written into `grad_model` / `grad_mlp`.
///
/// The per-sample rng decides, in order: level, mask, class drop, diffusion draws.
template <typename Scalar>
SampleRecord sample_gradient(const FarModel<Scalar>& model, const DenoiserMlp<Scalar>& mlp,
                             const FilterBank<Scalar>& filters, const NoiseSchedule& noise, const TrainConfig& cfg,
                             const TokenGrid<Scalar>& x, Index label, std::mt19937_64& rng,
                             FarModel<Scalar>& grad_model, DenoiserMlp<Scalar>& grad_mlp) {
    const ModelConfig& mc = model.config();
    const int levels = mc.levels;
    SampleRecord rec;
    rec.level = sample_level(levels, rng, cfg.train_top_level);
    const TokenGrid<Scalar> xi = filters(x, rec.level);
    const MaskSchedule ms{cfg.mask_r_lo, cfg.mask_r_hi};
    const MaskPlan mask = cfg.use_mask ? sample_mask(mc.grid_h, mc.grid_w, rec.level, levels, ms, rng)
                                       : MaskPlan::none(mc.grid_h, mc.grid_w);
    const Index class_id =
        std::bernoulli_distribution(cfg.class_drop_prob)(rng) ? mc.unconditional_class() : label;

    ForwardCache<Scalar> cache;
    const TokenGrid<Scalar> z = forward(model, xi, mask, class_id, rec.level, &cache);
    const Mat<Scalar> target = cfg.use_dms || rec.level == levels ? x.data() : filters(x, rec.level + 1).data();
    const double weight = cfg.use_ftl ? loss_weight(rec.level, levels) : 1.0;
    const auto draws = LossDraws<Scalar>::sample(mc.positions() * cfg.diffusion_batch_mul, mc.token_dim, noise, rng);
    const LossResult<Scalar> res = diffusion_loss(mlp, z.data(), target, weight, draws, noise, grad_mlp);
    backward(model, cache, res.dz, grad_model);
    rec.loss = res.loss;
    rec.weighted = res.weighted;
    return rec;
}

/// Training state for one FAR model at fp32.
///
/// Samples are processed independently and their gradients summed in batch
/// order, so results do not depend on the thread count.
class Trainer {
public:
    using Scalar = float;

    /// Fresh run: fits tokenizer stats on `data` and initializes parameters from cfg.train.seed.
    Trainer(const FarConfig& cfg, const Dataset& data);

    /// Resumes from a checkpoint; `cfg` must describe the same architecture.
    Trainer(const FarConfig& cfg, const Dataset& data, const Container& checkpoint);

    /// One optimizer step on the next batch.
    StepReport step();

    /// Steps left under cfg.train.epochs and cfg.train.max_steps.
    bool finished() const;
    long total_steps() const;

    Container checkpoint() const;

    void set_threads(int threads) { threads_ = threads < 1 ? 1 : threads; }

    const FarConfig& config() const noexcept { return cfg_; }
    const TokenizerStats& stats() const noexcept { return stats_; }
    const FarModel<Scalar>& model() const noexcept { return model_; }
    const DenoiserMlp<Scalar>& mlp() const noexcept { return mlp_; }
    const FarModel<Scalar>& ema_model() const noexcept { return ema_model_; }
    const DenoiserMlp<Scalar>& ema_mlp() const noexcept { return ema_mlp_; }
    long step_count() const noexcept { return step_; }
    int epoch() const noexcept { return epoch_; }
    long steps_per_epoch() const;

    /// Learning rate at the given 0-based step (linear warmup, then constant).
    double learning_rate(long step) const;

    /// All trainable tensors, model then denoiser.
    ParamList<Scalar> params();

private:
    void build(const Dataset& data);
    void reshuffle();

    FarConfig cfg_;
    TokenizerStats stats_;
    std::vector<TokenGrid<Scalar>> tokens_;
    std::vector<Index> labels_;
    FarModel<Scalar> model_, ema_model_;
    DenoiserMlp<Scalar> mlp_, ema_mlp_;
    AdamW<Scalar> adam_;
    std::mt19937_64 rng_;
    std::vector<std::uint32_t> perm_;
    std::size_t cursor_ = 0;
    long step_ = 0;
    int epoch_ = 0;
    int threads_ = 1;
    std::vector<FilterBank<Scalar>> filters_;
    NoiseSchedule noise_;
    std::vector<FarModel<Scalar>> grad_model_;
    std::vector<DenoiserMlp<Scalar>> grad_mlp_;
};

/// Writes every tensor of `m` as `<prefix><name>`.
template <typename Model>
void store_params(Container& c, const std::string& prefix, const Model& m) {
    m.for_each([&](const std::string& name, const auto& t) { c.add(NamedTensor::from(prefix + name, t)); });
}

template <typename Model>
void load_params(const Container& c, const std::string& prefix, Model& m) {
    m.for_each([&](const std::string& name, auto& t) { c.get(prefix + name).copy_to(t); });
}

/// Splits checkpoint metadata into config entries and `state.` entries.
std::pair<FarConfig, KeyValues> read_metadata(const Container& c);

TokenizerStats load_stats(const Container& c, Index patch_size, Index channels);

} // namespace far
