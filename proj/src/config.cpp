#include "far/config.hpp"
#include "far/schedules.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

namespace far {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last)
        throw FormatError("config: cannot parse value '" + value + "' for key '" + key + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw FormatError("config: cannot parse boolean '" + value + "' for key '" + key + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, std::string(trim(item))));
    return out;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

using Slot = std::variant<int*, long*, std::uint64_t*, double*, bool*, std::string*, std::vector<int>*>;

template <typename Cfg>
std::vector<std::pair<const char*, Slot>> slots(Cfg& c) {
    auto* cfg = const_cast<FarConfig*>(&c);
    auto& d = cfg->dataset;
    auto& t = cfg->train;
    auto& s = cfg->sample;
    return {
        {"dataset_kind", &d.kind},
        {"image_side", &d.side},
        {"num_classes", &d.num_classes},
        {"samples_per_class", &d.samples_per_class},
        {"spectral_exponent", &d.spectral_exponent},
        {"dataset_seed", &d.seed},
        {"patch_size", &cfg->patch_size},
        {"filter", &cfg->filter},
        {"levels", &cfg->levels},
        {"width", &cfg->width},
        {"depth", &cfg->depth},
        {"heads", &cfg->heads},
        {"mlp_width", &cfg->mlp_width},
        {"mlp_depth", &cfg->mlp_depth},
        {"time_dim", &cfg->time_dim},
        {"noise_steps", &cfg->noise_steps},
        {"epochs", &t.epochs},
        {"max_steps", &t.max_steps},
        {"batch_size", &t.batch_size},
        {"lr", &t.lr},
        {"warmup_steps", &t.warmup_steps},
        {"lr_decay", &t.lr_decay},
        {"beta1", &t.beta1},
        {"beta2", &t.beta2},
        {"adam_eps", &t.adam_eps},
        {"weight_decay", &t.weight_decay},
        {"ema_rate", &t.ema_rate},
        {"grad_clip", &t.grad_clip},
        {"seed", &t.seed},
        {"class_drop_prob", &t.class_drop_prob},
        {"use_mask", &t.use_mask},
        {"use_ftl", &t.use_ftl},
        {"use_dms", &t.use_dms},
        {"train_top_level", &t.train_top_level},
        {"mask_r_lo", &t.mask_r_lo},
        {"mask_r_hi", &t.mask_r_hi},
        {"diffusion_batch_mul", &t.diffusion_batch_mul},
        {"checkpoint_every", &t.checkpoint_every},
        {"log_every", &t.log_every},
        {"ar_steps", &s.ar_steps},
        {"level_path", &s.level_path},
        {"diffusion_steps", &s.diffusion_steps},
        {"fixed_diffusion_steps", &s.fixed_diffusion_steps},
        {"t_min", &s.t_min},
        {"t_max", &s.t_max},
        {"temperature", &s.temperature},
        {"guidance", &s.guidance},
        {"inference_mask_ratio", &s.inference_mask_ratio},
        {"sample_seed", &s.seed},
        {"class_id", &s.class_id},
        {"use_ema", &s.use_ema},
        {"clip_tokens", &s.clip_tokens},
    };
}

Slot find_slot(const FarConfig& cfg, const std::string& key) {
    for (auto& [name, slot] : slots(cfg))
        if (key == name) return slot;
    throw UsageError("config: unknown key '" + key + "'");
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

KeyValues parse_key_values(std::string_view text) {
    KeyValues out;
    std::size_t lineno = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw FormatError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw FormatError("line " + std::to_string(lineno) + ": empty key");
        out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    return out;
}

std::string format_key_values(const KeyValues& kv) {
    std::string s;
    for (const auto& [k, v] : kv) s += k + "=" + v + "\n";
    return s;
}

void FarConfig::set(const std::string& key, const std::string& value) {
    std::visit(
        [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) *p = value;
            else if constexpr (std::is_same_v<T, bool>) *p = parse_bool(key, value);
            else if constexpr (std::is_same_v<T, std::vector<int>>) *p = parse_int_list(key, value);
            else *p = parse_number<T>(key, value);
        },
        find_slot(*this, key));
}

std::string FarConfig::get(const std::string& key) const {
    return std::visit(
        [](auto* p) -> std::string {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) return *p;
            else if constexpr (std::is_same_v<T, bool>) return *p ? "true" : "false";
            else if constexpr (std::is_same_v<T, std::vector<int>>) return join(*p);
            else if constexpr (std::is_same_v<T, double>) return format_double(*p);
            else return std::to_string(*p);
        },
        find_slot(*this, key));
}

bool FarConfig::has_key(const std::string& key) const {
    for (auto& [name, slot] : slots(*this))
        if (key == name) return true;
    return false;
}

KeyValues FarConfig::to_key_values() const {
    KeyValues kv;
    for (auto& [name, slot] : slots(*this)) kv.emplace_back(name, get(name));
    return kv;
}

void FarConfig::apply(const KeyValues& kv) {
    for (const auto& [k, v] : kv) set(k, v);
}

void DatasetSpec::validate(Index patch_size) const {
    require(kind == "shapes" || kind == "gaussian-field", "dataset_kind must be shapes or gaussian-field");
    require(side >= 1 && side % patch_size == 0, "image_side must be a positive multiple of patch_size");
    require(samples_per_class >= 1, "samples_per_class must be positive");
    if (kind == "shapes") require(num_classes >= 1 && num_classes <= 4, "shapes dataset supports 1..4 classes");
    else require(num_classes >= 1, "num_classes must be positive");
}

void TrainConfig::validate() const {
    require(epochs >= 0 && max_steps >= 0, "epochs and max_steps must be non-negative");
    require(batch_size >= 1, "batch_size must be positive");
    require(lr >= 0.0 && warmup_steps >= 0, "lr and warmup_steps must be non-negative");
    require(lr_decay == "constant" || lr_decay == "cosine", "lr_decay must be constant or cosine");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
    require(ema_rate >= 0.0 && ema_rate < 1.0, "ema_rate must lie in [0, 1)");
    require(grad_clip >= 0.0, "grad_clip must be non-negative");
    require(class_drop_prob >= 0.0 && class_drop_prob <= 1.0, "class_drop_prob must lie in [0, 1]");
    require(diffusion_batch_mul >= 1, "diffusion_batch_mul must be positive");
    require(checkpoint_every >= 0 && log_every >= 0, "checkpoint_every and log_every must be non-negative");
}

void SampleConfig::validate(int levels, int noise_steps) const {
    require(ar_steps >= 2 && ar_steps <= levels,
            "ar_steps " + std::to_string(ar_steps) + " outside [2, " + std::to_string(levels) + "]");
    if (!level_path.empty()) {
        require(static_cast<int>(level_path.size()) == ar_steps, "level_path length must equal ar_steps");
        require(level_path.back() == levels, "level_path must end at the last level");
        require(level_path.front() >= 1, "level_path entries must be >= 1");
        for (std::size_t i = 1; i < level_path.size(); ++i)
            require(level_path[i] > level_path[i - 1], "level_path must be strictly increasing");
    }
    if (!diffusion_steps.empty()) {
        require(static_cast<int>(diffusion_steps.size()) == ar_steps, "diffusion_steps length must equal ar_steps");
        for (int s : diffusion_steps)
            require(s >= 1 && s <= noise_steps, "diffusion steps must lie in [1, noise_steps]");
    }
    require(fixed_diffusion_steps >= 0 && fixed_diffusion_steps <= noise_steps,
            "fixed_diffusion_steps must lie in [0, noise_steps]");
    require(t_min >= 1 && t_max >= t_min && t_max <= noise_steps, "need 1 <= t_min <= t_max <= noise_steps");
    require(temperature >= 0.0, "temperature must be non-negative");
    require(inference_mask_ratio >= 0.0 && inference_mask_ratio <= 1.0, "inference_mask_ratio must lie in [0, 1]");
}

void FarConfig::validate() const {
    require(patch_size >= 1, "patch_size must be positive");
    dataset.validate(patch_size);
    (void)filter_kind();
    model_config().validate();
    denoiser_config().validate();
    require(noise_steps >= 2, "noise_steps must be >= 2");
    train.validate();
    MaskSchedule{train.mask_r_lo, train.mask_r_hi}.validate();
    sample.validate(levels, noise_steps);
    require(sample.class_id >= 0 && sample.class_id <= dataset.num_classes, "class_id out of range");
}

ModelConfig FarConfig::model_config() const {
    ModelConfig m;
    m.grid_h = m.grid_w = grid_side();
    m.token_dim = token_dim();
    m.width = width;
    m.depth = depth;
    m.heads = heads;
    m.num_classes = dataset.num_classes;
    m.levels = levels;
    return m;
}

DenoiserConfig FarConfig::denoiser_config() const {
    DenoiserConfig d;
    d.token_dim = token_dim();
    d.cond_dim = width;
    d.width = mlp_width;
    d.depth = mlp_depth;
    d.time_dim = time_dim;
    return d;
}

FrequencySchedule FarConfig::frequency_schedule() const {
    return FrequencySchedule::linear(levels, filter_kind(), grid_side());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

FarConfig load_config_file(const std::filesystem::path& path) {
    FarConfig cfg;
    cfg.apply(parse_key_values(read_text_file(path)));
    return cfg;
}

} // namespace far
