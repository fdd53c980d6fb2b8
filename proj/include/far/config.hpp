#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "far/diffloss.hpp"
#include "far/model.hpp"
#include "far/spectral.hpp"

namespace far {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);

std::string format_double(double v);

struct DatasetSpec {
    std::string kind = "shapes"; // shapes | gaussian-field
    Index side = 16;
    Index num_classes = 4;
    Index samples_per_class = 500;
    double spectral_exponent = 3.0;
    std::uint64_t seed = 1;

    void validate(Index patch_size) const;
};

struct TrainConfig {
    int epochs = 1;
    int max_steps = 0; // 0: run all epochs
    int batch_size = 16;
    double lr = 1e-4;
    int warmup_steps = 100;
    std::string lr_decay = "constant"; // constant | cosine (to zero at the last step)
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.02;
    double ema_rate = 0.999;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    double class_drop_prob = 0.1;
    bool use_mask = true;
    bool use_ftl = true;
    bool use_dms = true;
    bool train_top_level = false; // also draw level F, whose embedding the last generation step uses
    double mask_r_lo = 0.7;
    double mask_r_hi = 0.0;
    int diffusion_batch_mul = 1;
    int checkpoint_every = 0;
    int log_every = 100;

    void validate() const;
};

struct SampleConfig {
    int ar_steps = 10;
    std::vector<int> level_path;      // empty: plan_levels(ar_steps, F)
    std::vector<int> diffusion_steps; // empty: allocate_steps per level
    int fixed_diffusion_steps = 0;    // > 0 overrides the per-level allocation
    int t_min = 40;
    int t_max = 100;
    double temperature = 1.0;
    double guidance = 1.0;
    double inference_mask_ratio = 0.0;
    std::uint64_t seed = 0;
    Index class_id = 0;
    bool use_ema = true;
    bool clip_tokens = true;

    void validate(int levels, int noise_steps) const;
};

/// Every tunable of a run, representable as flat key=value text.
struct FarConfig {
    DatasetSpec dataset;
    Index patch_size = 2;
    std::string filter = "spatial";
    int levels = 10;
    Index width = 64;
    Index depth = 2;
    Index heads = 4;
    Index mlp_width = 64;
    Index mlp_depth = 3;
    Index time_dim = 64;
    int noise_steps = 1000;
    TrainConfig train;
    SampleConfig sample;

    /// Throws UsageError for unknown keys, FormatError for unparsable values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    bool has_key(const std::string& key) const;
    KeyValues to_key_values() const;
    void apply(const KeyValues& kv);

    void validate() const;
    FilterKind filter_kind() const { return parse_filter_kind(filter); }
    Index grid_side() const { return dataset.side / patch_size; }
    Index token_dim() const { return patch_size * patch_size; }
    ModelConfig model_config() const;
    DenoiserConfig denoiser_config() const;
    FrequencySchedule frequency_schedule() const;
};

FarConfig load_config_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

} // namespace far
