#pragma once

#include <random>
#include <vector>

#include "far/checkpoint.hpp"
#include "far/config.hpp"
#include "far/dataset.hpp"
#include "far/diffloss.hpp"
#include "far/model.hpp"
#include "far/spectral.hpp"
#include "far/tokenizer.hpp"

namespace far {

/// K level indices ending at F: round(linspace(F/K, F, K)), forced strictly increasing.
std::vector<int> plan_levels(int steps, int levels);

/// Everything needed for inference, held at fp32.
struct Pipeline {
    using Scalar = float;

    FarConfig config;
    TokenizerStats stats;
    FarModel<Scalar> model;
    DenoiserMlp<Scalar> mlp;

    /// Uses the EMA weights when `use_ema` is set.
    static Pipeline from_checkpoint(const Container& c, bool use_ema);
};

struct TraceStep {
    int level = 0;
    int diffusion_steps = 0;
    MaskPlan mask;
    TokenGrid<float> input;    // x_i fed to the transformer (zeros on the first step)
    TokenGrid<float> estimate; // full-frequency sample
    TokenGrid<float> filtered; // estimate low-passed to this step's level
    Image decoded;             // unpatchify(filtered)
    double seconds = 0.0;
};

struct GenerationTrace {
    std::vector<TraceStep> steps;
    int transformer_forwards = 0;
};

struct GenerationResult {
    Image image;
    GenerationTrace trace;
};

/// Level-by-level sampling along the configured level path.
///
/// Step k runs the transformer on the current input at level_path[k] (all
/// positions masked on the first step), samples every token with the
/// diffusion head, and low-passes the estimate to level_path[k + 1] to form
/// the next input. The last estimate is the output.
GenerationResult generate(const Pipeline& pipe, const SampleConfig& cfg);

/// `count` images of one class with seeds seed, seed + 1, ...; work is split across threads.
std::vector<Image> generate_batch(const Pipeline& pipe, SampleConfig cfg, Index class_id, int count,
                                  std::uint64_t seed, int threads = 1);

/// Resolved per-step levels and diffusion step counts for a sample config.
std::vector<int> resolve_level_path(const SampleConfig& cfg, int levels);
std::vector<int> resolve_diffusion_steps(const SampleConfig& cfg, const std::vector<int>& path, int levels);

/// Average radial power spectrum of a set of single- or multi-channel images.
std::vector<double> mean_image_spectrum(const std::vector<Image>& images);

/// Mean |log(P_gen / P_ref)| over radial bins 1 .. ceil(side/2) - 1.
double eval_spectrum_match(const std::vector<Image>& generated, const std::vector<Image>& reference);

/// Mean pairwise RMS pixel distance.
double eval_diversity(const std::vector<Image>& generated);

/// Nearest-class-mean classifier in pixel space.
class NearestMeanClassifier {
public:
    NearestMeanClassifier(const Dataset& data, Index num_classes);
    Index predict(const Image& img) const;
    double accuracy(const std::vector<Image>& images, const std::vector<Index>& labels) const;

private:
    std::vector<Eigen::ArrayXd> means_;
};

} // namespace far
