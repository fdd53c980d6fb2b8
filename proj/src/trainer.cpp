#include "far/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace far {

void tune_allocator() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
        mallopt(M_TRIM_THRESHOLD, 256 << 20);
        return true;
    }();
    (void)once;
#endif
}

int sample_level(int levels, std::mt19937_64& rng, bool include_top) {
    require(levels >= 2, "sample_level: need at least two levels");
    return std::uniform_int_distribution<int>(1, include_top ? levels : levels - 1)(rng);
}

Trainer::Trainer(const FarConfig& cfg, const Dataset& data) : cfg_(cfg), noise_(cfg.noise_steps) {
    tune_allocator();
    cfg_.validate();
    require(data.size() > 0, "Trainer: empty dataset");
    stats_ = fit_stats(std::span<const Image>(data.images), cfg_.patch_size);
    // Keep the stats exactly representable in the fp32 checkpoint.
    stats_.mean = stats_.mean.cast<float>().cast<double>();
    stats_.stddev = stats_.stddev.cast<float>().cast<double>();
    rng_.seed(cfg_.train.seed);
    model_ = FarModel<Scalar>::initialized(cfg_.model_config(), rng_);
    mlp_ = DenoiserMlp<Scalar>::initialized(cfg_.denoiser_config(), rng_);
    ema_model_ = model_;
    ema_mlp_ = mlp_;
    build(data);
    adam_.init(params());
    reshuffle();
}

Trainer::Trainer(const FarConfig& cfg, const Dataset& data, const Container& ckpt) : cfg_(cfg), noise_(cfg.noise_steps) {
    tune_allocator();
    cfg_.validate();
    stats_ = load_stats(ckpt, cfg_.patch_size, 1);
    model_ = FarModel<Scalar>(cfg_.model_config());
    mlp_ = DenoiserMlp<Scalar>(cfg_.denoiser_config());
    load_params(ckpt, "model.", model_);
    load_params(ckpt, "mlp.", mlp_);
    ema_model_ = model_.zeros_like();
    ema_mlp_ = mlp_.zeros_like();
    load_params(ckpt, "ema.model.", ema_model_);
    load_params(ckpt, "ema.mlp.", ema_mlp_);
    build(data);
    auto list = params();
    adam_.init(list);
    for (std::size_t i = 0; i < list.size(); ++i) {
        ckpt.get("adam.m." + list.names[i]).copy_to(adam_.first_moments()[i]);
        ckpt.get("adam.v." + list.names[i]).copy_to(adam_.second_moments()[i]);
    }

    const auto [stored, state] = read_metadata(ckpt);
    const auto value = [&state](const std::string& key) -> const std::string& {
        for (const auto& [k, v] : state)
            if (k == key) return v;
        throw FormatError("checkpoint metadata lacks '" + key + "'");
    };
    step_ = std::stol(value("state.step"));
    epoch_ = std::stoi(value("state.epoch"));
    cursor_ = std::stoul(value("state.cursor"));
    adam_.set_step_count(std::stol(value("state.adam_step")));
    std::istringstream(value("state.rng")) >> rng_;

    const NamedTensor& perm = ckpt.get("train.perm");
    if (perm.values.size() != tokens_.size()) throw FormatError("checkpoint permutation does not match the dataset");
    perm_.resize(perm.values.size());
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = static_cast<std::uint32_t>(perm.values[i]);
    if (cursor_ > perm_.size()) throw FormatError("checkpoint cursor out of range");
}

void Trainer::build(const Dataset& data) {
    require(data.size() < (std::size_t(1) << 24), "Trainer: dataset too large for the checkpoint permutation");
    tokens_.clear();
    tokens_.reserve(data.size());
    for (const auto& img : data.images) tokens_.push_back(patchify<Scalar>(img, stats_));
    labels_ = data.labels;
    const Index side = cfg_.grid_side();
    filters_.clear();
    filters_.emplace_back(side, side, cfg_.frequency_schedule());
}

void Trainer::reshuffle() {
    perm_.resize(tokens_.size());
    std::iota(perm_.begin(), perm_.end(), 0u);
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    cursor_ = 0;
}

long Trainer::steps_per_epoch() const {
    return std::max<long>(1, static_cast<long>(tokens_.size()) / cfg_.train.batch_size);
}

long Trainer::total_steps() const {
    return cfg_.train.max_steps > 0 ? cfg_.train.max_steps : long(cfg_.train.epochs) * steps_per_epoch();
}

bool Trainer::finished() const { return step_ >= total_steps(); }

double Trainer::learning_rate(long step) const {
    const long warm = cfg_.train.warmup_steps;
    if (step < warm) return cfg_.train.lr * double(step + 1) / double(warm);
    if (cfg_.train.lr_decay == "constant") return cfg_.train.lr;
    const long span = total_steps() - warm;
    const double u = span > 0 ? std::min(1.0, double(step - warm) / double(span)) : 1.0;
    return cfg_.train.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

ParamList<Trainer::Scalar> Trainer::params() {
    ParamList<Scalar> list;
    list.add(model_, "model.").add(mlp_, "mlp.");
    return list;
}

StepReport Trainer::step() {
    const auto batch = static_cast<std::size_t>(cfg_.train.batch_size);
    std::vector<std::size_t> index(batch);
    std::vector<std::uint64_t> seeds(batch);
    for (std::size_t j = 0; j < batch; ++j) {
        if (cursor_ >= perm_.size()) {
            reshuffle();
            ++epoch_;
        }
        index[j] = perm_[cursor_++];
    }
    for (auto& s : seeds) s = rng_();

    auto& gmodel = grad_model_;
    auto& gmlp = grad_mlp_;
    if (gmodel.size() != batch) {
        gmodel.assign(batch, model_.zeros_like());
        gmlp.assign(batch, mlp_.zeros_like());
    } else {
        for (std::size_t j = 0; j < batch; ++j) {
            gmodel[j].for_each([](const std::string&, Mat<Scalar>& t) { t.setZero(); });
            gmlp[j].for_each([](const std::string&, Mat<Scalar>& t) { t.setZero(); });
        }
    }
    StepReport rep;
    rep.samples.resize(batch);
    const auto work = [&](std::size_t j) {
        std::mt19937_64 srng(seeds[j]);
        rep.samples[j] = sample_gradient(model_, mlp_, filters_.front(), noise_, cfg_.train, tokens_[index[j]],
                                         labels_[index[j]], srng, gmodel[j], gmlp[j]);
    };
    const auto workers = static_cast<std::size_t>(std::min<int>(threads_, int(batch)));
    if (workers <= 1) {
        for (std::size_t j = 0; j < batch; ++j) work(j);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t j = w; j < batch; j += workers) work(j);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    for (std::size_t j = 1; j < batch; ++j) {
        ParamList<Scalar> acc, add;
        acc.add(gmodel[0], "").add(gmlp[0], "");
        add.add(gmodel[j], "").add(gmlp[j], "");
        for (std::size_t k = 0; k < acc.size(); ++k) *acc.tensors[k] += *add.tensors[k];
    }
    ParamList<Scalar> grads;
    grads.add(gmodel[0], "model.").add(gmlp[0], "mlp.");
    const auto inv = Scalar(1.0 / double(batch));
    for (auto* g : grads.tensors) *g *= inv;

    for (const auto& s : rep.samples) {
        rep.loss += s.loss / double(batch);
        rep.weighted += s.weighted / double(batch);
    }
    if (!std::isfinite(rep.weighted))
        throw NumericError("training diverged at step " + std::to_string(step_ + 1) + ": non-finite loss");
    rep.grad_norm = clip_grad_norm(grads, cfg_.train.grad_clip);
    rep.lr = learning_rate(step_);
    auto list = params();
    adam_.step(list, grads, rep.lr);
    ParamList<Scalar> ema;
    ema.add(ema_model_, "").add(ema_mlp_, "");
    ema_update(ema, list, cfg_.train.ema_rate);
    rep.step = ++step_;
    return rep;
}

Container Trainer::checkpoint() const {
    Container c;
    KeyValues kv = cfg_.to_key_values();
    std::ostringstream rng_text;
    rng_text << rng_;
    kv.emplace_back("state.step", std::to_string(step_));
    kv.emplace_back("state.epoch", std::to_string(epoch_));
    kv.emplace_back("state.cursor", std::to_string(cursor_));
    kv.emplace_back("state.adam_step", std::to_string(adam_.step_count()));
    kv.emplace_back("state.rng", rng_text.str());
    c.metadata = format_key_values(kv);

    store_params(c, "model.", model_);
    store_params(c, "mlp.", mlp_);
    store_params(c, "ema.model.", ema_model_);
    store_params(c, "ema.mlp.", ema_mlp_);
    std::vector<std::string> names;
    model_.for_each([&](const std::string& n, const auto&) { names.push_back("model." + n); });
    mlp_.for_each([&](const std::string& n, const auto&) { names.push_back("mlp." + n); });
    for (std::size_t i = 0; i < names.size(); ++i) {
        c.add(NamedTensor::from("adam.m." + names[i], adam_.first_moments()[i]));
        c.add(NamedTensor::from("adam.v." + names[i], adam_.second_moments()[i]));
    }
    c.add(NamedTensor::from("tokenizer.mean", Mat<double>(stats_.mean.transpose())));
    c.add(NamedTensor::from("tokenizer.std", Mat<double>(stats_.stddev.transpose())));
    Mat<double> perm(1, static_cast<Index>(perm_.size()));
    for (std::size_t i = 0; i < perm_.size(); ++i) perm(0, Index(i)) = double(perm_[i]);
    c.add(NamedTensor::from("train.perm", perm));
    return c;
}

std::pair<FarConfig, KeyValues> read_metadata(const Container& c) {
    KeyValues config, state;
    for (auto& kv : parse_key_values(c.metadata)) (kv.first.rfind("state.", 0) == 0 ? state : config).push_back(kv);
    FarConfig cfg;
    try {
        cfg.apply(config);
    } catch (const UsageError& e) {
        throw FormatError(std::string("checkpoint metadata: ") + e.what());
    }
    return {cfg, state};
}

TokenizerStats load_stats(const Container& c, Index patch_size, Index channels) {
    TokenizerStats s;
    s.patch_size = patch_size;
    s.channels = channels;
    Mat<double> mean(1, s.token_dim()), stddev(1, s.token_dim());
    c.get("tokenizer.mean").copy_to(mean);
    c.get("tokenizer.std").copy_to(stddev);
    s.mean = mean.row(0).transpose();
    s.stddev = stddev.row(0).transpose();
    try {
        s.validate();
    } catch (const UsageError& e) {
        throw FormatError(std::string("checkpoint tokenizer stats: ") + e.what());
    }
    return s;
}

} // namespace far
