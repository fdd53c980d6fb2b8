#include "far/generator.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "far/schedules.hpp"
#include "far/trainer.hpp"

namespace far {

std::vector<int> plan_levels(int steps, int levels) {
    if (steps < 2 || steps > levels)
        throw UsageError("plan_levels: steps " + std::to_string(steps) + " outside [2, " + std::to_string(levels) + "]");
    std::vector<int> path(static_cast<std::size_t>(steps));
    const double lo = double(levels) / double(steps);
    for (int k = 0; k < steps; ++k) {
        const double v = lo + (double(levels) - lo) * double(k) / double(steps - 1);
        path[std::size_t(k)] = int(std::lround(v));
    }
    path.back() = levels;
    for (std::size_t k = 1; k < path.size(); ++k) path[k] = std::max(path[k], path[k - 1] + 1);
    for (std::size_t k = path.size() - 1; k-- > 0;) path[k] = std::min(path[k], path[k + 1] - 1);
    return path;
}

Pipeline Pipeline::from_checkpoint(const Container& c, bool use_ema) {
    Pipeline p;
    p.config = read_metadata(c).first;
    p.config.validate();
    p.stats = load_stats(c, p.config.patch_size, 1);
    p.model = FarModel<Scalar>(p.config.model_config());
    p.mlp = DenoiserMlp<Scalar>(p.config.denoiser_config());
    const std::string prefix = use_ema ? "ema." : "";
    load_params(c, prefix + "model.", p.model);
    load_params(c, prefix + "mlp.", p.mlp);
    return p;
}

std::vector<int> resolve_level_path(const SampleConfig& cfg, int levels) {
    cfg.validate(levels, 1 << 30);
    return cfg.level_path.empty() ? plan_levels(cfg.ar_steps, levels) : cfg.level_path;
}

std::vector<int> resolve_diffusion_steps(const SampleConfig& cfg, const std::vector<int>& path, int levels) {
    if (!cfg.diffusion_steps.empty()) return cfg.diffusion_steps;
    std::vector<int> steps;
    for (int level : path)
        steps.push_back(cfg.fixed_diffusion_steps > 0 ? cfg.fixed_diffusion_steps
                                                      : allocate_steps(level, levels, cfg.t_min, cfg.t_max));
    return steps;
}

GenerationResult generate(const Pipeline& pipe, const SampleConfig& cfg) {
    using Scalar = Pipeline::Scalar;
    const FarConfig& fc = pipe.config;
    const int levels = fc.levels;
    cfg.validate(levels, fc.noise_steps);
    const Index num_classes = fc.dataset.num_classes;
    if (cfg.class_id < 0 || cfg.class_id > num_classes)
        throw UsageError("generate: class_id " + std::to_string(cfg.class_id) + " out of range");
    const std::vector<int> path = resolve_level_path(cfg, levels);
    const std::vector<int> dsteps = resolve_diffusion_steps(cfg, path, levels);

    const Index side = fc.grid_side();
    const FilterBank<Scalar> filters(side, side, fc.frequency_schedule());
    const NoiseSchedule noise(fc.noise_steps);
    std::optional<SampleBounds> bounds;
    if (cfg.clip_tokens) {
        auto [lo, hi] = token_bounds(pipe.stats);
        bounds = SampleBounds{lo, hi};
    }
    std::mt19937_64 rng(cfg.seed);
    const Index uncond = pipe.model.config().unconditional_class();

    GenerationResult res;
    TokenGrid<Scalar> input(side, side, Mat<Scalar>::Zero(side * side, fc.token_dim()));
    for (std::size_t k = 0; k < path.size(); ++k) {
        const auto start = std::chrono::steady_clock::now();
        TraceStep st;
        st.level = path[k];
        st.diffusion_steps = dsteps[k];
        st.mask = k == 0 ? MaskPlan::all(side, side) : mask_from_ratio(side, side, cfg.inference_mask_ratio, rng);
        st.input = input;
        TokenGrid<Scalar> z = forward(pipe.model, input, st.mask, cfg.class_id, st.level);
        ++res.trace.transformer_forwards;
        if (cfg.guidance != 1.0) {
            const TokenGrid<Scalar> zu = forward(pipe.model, input, st.mask, uncond, st.level);
            ++res.trace.transformer_forwards;
            z = TokenGrid<Scalar>(side, side, (zu.data() + Scalar(cfg.guidance) * (z.data() - zu.data())).eval());
        }
        const Mat<Scalar> x = sample_tokens(pipe.mlp, z.data(), st.diffusion_steps, noise, cfg.temperature, rng, bounds);
        st.estimate = TokenGrid<Scalar>(side, side, x);
        if (!st.estimate.all_finite()) throw NumericError("generate: non-finite tokens at step " + std::to_string(k + 1));
        st.filtered = filters(st.estimate, st.level);
        st.decoded = unpatchify(st.filtered, pipe.stats);
        if (k + 1 < path.size()) input = filters(st.estimate, path[k + 1]);
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        res.trace.steps.push_back(std::move(st));
    }
    res.image = unpatchify(res.trace.steps.back().estimate, pipe.stats);
    return res;
}

std::vector<Image> generate_batch(const Pipeline& pipe, SampleConfig cfg, Index class_id, int count,
                                  std::uint64_t seed, int threads) {
    require(count >= 0, "generate_batch: negative count");
    cfg.class_id = class_id;
    std::vector<Image> out(static_cast<std::size_t>(count));
    const auto run = [&](std::size_t begin, std::size_t stride) {
        SampleConfig local = cfg;
        for (std::size_t i = begin; i < out.size(); i += stride) {
            local.seed = seed + i;
            out[i] = generate(pipe, local).image;
        }
    };
    const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, std::max(count, 1)));
    if (workers == 1) {
        run(0, 1);
        return out;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                run(w, workers);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

namespace {

TokenGrid<double> image_grid(const Image& img) {
    Mat<double> data(img.pixels(), img.channels);
    for (Index p = 0; p < img.pixels(); ++p)
        for (Index c = 0; c < img.channels; ++c) data(p, c) = img.data[p * img.channels + c];
    return TokenGrid<double>(img.height, img.width, std::move(data));
}

} // namespace

std::vector<double> mean_image_spectrum(const std::vector<Image>& images) {
    require(!images.empty(), "mean_image_spectrum: empty image set");
    std::vector<double> acc;
    for (const auto& img : images) {
        require(img.height == images.front().height && img.width == images.front().width,
                "mean_image_spectrum: images differ in size");
        const auto s = radial_power_spectrum(image_grid(img));
        if (acc.empty()) acc.assign(s.size(), 0.0);
        for (std::size_t b = 0; b < s.size(); ++b) acc[b] += s[b] / double(images.size());
    }
    return acc;
}

double eval_spectrum_match(const std::vector<Image>& generated, const std::vector<Image>& reference) {
    require(!generated.empty() && !reference.empty(), "eval_spectrum_match: empty image set");
    require(generated.front().height == reference.front().height, "eval_spectrum_match: image sides differ");
    const auto g = mean_image_spectrum(generated);
    const auto r = mean_image_spectrum(reference);
    require(g.size() >= 2, "eval_spectrum_match: images too small");
    constexpr double floor = 1e-12;
    double err = 0.0;
    for (std::size_t b = 1; b < g.size(); ++b) err += std::abs(std::log((g[b] + floor) / (r[b] + floor)));
    return err / double(g.size() - 1);
}

double eval_diversity(const std::vector<Image>& generated) {
    require(generated.size() >= 2, "eval_diversity: need at least two images");
    double total = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        for (std::size_t j = i + 1; j < generated.size(); ++j) {
            require(generated[i].data.size() == generated[j].data.size(), "eval_diversity: images differ in size");
            total += std::sqrt((generated[i].data - generated[j].data).square().mean());
            ++pairs;
        }
    }
    return total / double(pairs);
}

NearestMeanClassifier::NearestMeanClassifier(const Dataset& data, Index num_classes) {
    require(data.size() > 0, "NearestMeanClassifier: empty dataset");
    std::vector<long> counts(std::size_t(num_classes), 0);
    means_.assign(std::size_t(num_classes), Eigen::ArrayXd::Zero(data.images.front().data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto c = std::size_t(data.labels[i]);
        require(c < means_.size(), "NearestMeanClassifier: label out of range");
        means_[c] += data.images[i].data;
        ++counts[c];
    }
    for (std::size_t c = 0; c < means_.size(); ++c)
        if (counts[c] > 0) means_[c] /= double(counts[c]);
}

Index NearestMeanClassifier::predict(const Image& img) const {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < means_.size(); ++c) {
        const double d = (img.data - means_[c]).square().sum();
        if (d < best_d) {
            best_d = d;
            best = Index(c);
        }
    }
    return best;
}

double NearestMeanClassifier::accuracy(const std::vector<Image>& images, const std::vector<Index>& labels) const {
    require(!images.empty() && images.size() == labels.size(), "accuracy: mismatched inputs");
    long hit = 0;
    for (std::size_t i = 0; i < images.size(); ++i) hit += predict(images[i]) == labels[i] ? 1 : 0;
    return double(hit) / double(images.size());
}

} // namespace far
