#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "far/checkpoint.hpp"
#include "far/config.hpp"
#include "far/dataset.hpp"
#include "far/generator.hpp"
#include "far/image_io.hpp"
#include "far/spectral.hpp"
#include "far/trainer.hpp"

namespace fs = std::filesystem;
using namespace far;

namespace {

struct Options {
    int threads = 0;
    std::string config;
    std::string out_dir = ".";
    std::string checkpoint;
    std::string resume;
    std::string log;
    bool dump_trace = false;
    int samples = 16;
    std::optional<std::uint64_t> seed;
    std::optional<Index> class_id;
    std::optional<int> steps;
    std::optional<double> codebook, channels, factor;
    std::vector<std::string> overrides;
};

// Turns leftover "--key=value" / "--key value" arguments into config entries.
KeyValues parse_overrides(const std::vector<std::string>& extras) {
    KeyValues kv;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string a = extras[i];
        if (a.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + a + "'");
        a = a.substr(2);
        std::string key, value;
        if (const auto eq = a.find('='); eq != std::string::npos) {
            key = a.substr(0, eq);
            value = a.substr(eq + 1);
        } else {
            if (i + 1 >= extras.size()) throw UsageError("option --" + a + " needs a value");
            key = a;
            value = extras[++i];
        }
        std::replace(key.begin(), key.end(), '-', '_');
        kv.emplace_back(key, value);
    }
    return kv;
}

int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("FAR_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

FarConfig base_config(const Options& o) {
    FarConfig cfg;
    if (!o.config.empty()) cfg = load_config_file(o.config);
    return cfg;
}

void apply_overrides(FarConfig& cfg, const Options& o) {
    cfg.apply(parse_overrides(o.overrides));
    cfg.validate();
}

int run_train(const Options& o) {
    std::optional<Container> ckpt;
    FarConfig cfg;
    if (!o.resume.empty()) {
        ckpt = Container::load(o.resume);
        cfg = read_metadata(*ckpt).first;
        if (!o.config.empty()) cfg.apply(parse_key_values(read_text_file(o.config)));
    } else {
        cfg = base_config(o);
    }
    if (o.seed) cfg.train.seed = *o.seed;
    apply_overrides(cfg, o);

    const Dataset data = generate_dataset(cfg.dataset);
    Trainer trainer = ckpt ? Trainer(cfg, data, *ckpt) : Trainer(cfg, data);
    trainer.set_threads(resolve_threads(o.threads));

    fs::create_directories(o.out_dir);
    const fs::path ckpt_path = o.checkpoint.empty() ? fs::path(o.out_dir) / "far.ckpt" : fs::path(o.checkpoint);
    const fs::path log_path = o.log.empty() ? fs::path(o.out_dir) / "loss.log" : fs::path(o.log);
    std::ofstream log(log_path, std::ios::app);
    if (!log) throw FormatError("cannot open log file '" + log_path.string() + "'");

    std::cerr << "training " << trainer.total_steps() << " steps (" << trainer.steps_per_epoch()
              << " per epoch), dataset " << data.size() << " images\n";
    double avg = 0.0;
    while (!trainer.finished()) {
        const StepReport rep = trainer.step();
        for (const auto& s : rep.samples)
            log << rep.step << ' ' << s.level << ' ' << format_double(s.loss) << ' ' << format_double(s.weighted) << '\n';
        avg = rep.step == 1 ? rep.weighted : 0.98 * avg + 0.02 * rep.weighted;
        const int every = cfg.train.log_every;
        if (every > 0 && rep.step % every == 0)
            std::cerr << "step " << rep.step << " loss " << rep.loss << " weighted " << rep.weighted << " avg " << avg
                      << " grad_norm " << rep.grad_norm << " lr " << rep.lr << '\n';
        if (cfg.train.checkpoint_every > 0 && rep.step % cfg.train.checkpoint_every == 0)
            trainer.checkpoint().save(ckpt_path);
    }
    trainer.checkpoint().save(ckpt_path);
    std::cerr << "wrote " << ckpt_path.string() << '\n';
    return 0;
}

FarConfig sampling_config(const Options& o, const Container& ckpt) {
    FarConfig cfg = read_metadata(ckpt).first;
    if (!o.config.empty()) cfg.apply(parse_key_values(read_text_file(o.config)));
    if (o.seed) cfg.sample.seed = *o.seed;
    if (o.class_id) cfg.sample.class_id = *o.class_id;
    if (o.steps) {
        if (*o.steps < 2 || *o.steps > cfg.levels)
            throw UsageError("--steps " + std::to_string(*o.steps) + " outside [2, " + std::to_string(cfg.levels) + "]");
        cfg.sample.ar_steps = *o.steps;
        cfg.sample.level_path.clear();
        cfg.sample.diffusion_steps.clear();
    }
    apply_overrides(cfg, o);
    return cfg;
}

Pipeline load_pipeline(const Container& ckpt, const FarConfig& cfg) {
    Pipeline pipe = Pipeline::from_checkpoint(ckpt, cfg.sample.use_ema);
    pipe.config.sample = cfg.sample;
    return pipe;
}

int run_generate(const Options& o) {
    if (o.checkpoint.empty()) throw UsageError("generate: --checkpoint is required");
    const Container ckpt = Container::load(o.checkpoint);
    const FarConfig cfg = sampling_config(o, ckpt);
    const Pipeline pipe = load_pipeline(ckpt, cfg);
    const GenerationResult res = generate(pipe, cfg.sample);

    fs::create_directories(o.out_dir);
    const std::string stem =
        "sample_" + std::to_string(cfg.sample.class_id) + "_" + std::to_string(cfg.sample.seed);
    const fs::path out = fs::path(o.out_dir) / (stem + ".pgm");
    write_pnm(out, res.image);
    for (std::size_t k = 0; k < res.trace.steps.size(); ++k) {
        const auto& st = res.trace.steps[k];
        std::printf("step %zu level %d diffusion_steps %d seconds %.6f\n", k + 1, st.level, st.diffusion_steps,
                    st.seconds);
    }
    if (o.dump_trace) {
        Container trace;
        KeyValues meta{{"class_id", std::to_string(cfg.sample.class_id)},
                       {"seed", std::to_string(cfg.sample.seed)},
                       {"steps", std::to_string(res.trace.steps.size())}};
        std::string levels;
        for (const auto& st : res.trace.steps) levels += (levels.empty() ? "" : ",") + std::to_string(st.level);
        meta.emplace_back("level_path", levels);
        trace.metadata = format_key_values(meta);
        for (std::size_t k = 0; k < res.trace.steps.size(); ++k) {
            const auto& st = res.trace.steps[k];
            const std::string p = "step" + std::to_string(k + 1) + ".";
            trace.add(NamedTensor::from(p + "input", st.input.data()));
            trace.add(NamedTensor::from(p + "estimate", st.estimate.data()));
            trace.add(NamedTensor::from(p + "filtered", st.filtered.data()));
            write_pnm(fs::path(o.out_dir) / (stem + "_step" + std::to_string(k + 1) + ".pgm"), st.decoded);
        }
        trace.save(fs::path(o.out_dir) / (stem + ".trace"));
    }
    std::printf("wrote %s\n", out.string().c_str());
    return 0;
}

int run_eval(const Options& o) {
    if (o.checkpoint.empty()) throw UsageError("eval: --checkpoint is required");
    if (o.samples < 2) throw UsageError("eval: --samples must be at least 2");
    const Container ckpt = Container::load(o.checkpoint);
    const FarConfig cfg = sampling_config(o, ckpt);
    const Pipeline pipe = load_pipeline(ckpt, cfg);
    const Dataset data = generate_dataset(cfg.dataset);
    const NearestMeanClassifier classifier(data, cfg.dataset.num_classes);
    const int threads = resolve_threads(o.threads);

    KeyValues report;
    std::vector<Image> all;
    std::vector<Index> labels;
    double diversity = 0.0;
    for (Index c = 0; c < cfg.dataset.num_classes; ++c) {
        const auto imgs = generate_batch(pipe, cfg.sample, c, o.samples, cfg.sample.seed + std::uint64_t(c) * 1000003u,
                                         threads);
        const std::vector<Index> lab(imgs.size(), c);
        const std::string p = "class" + std::to_string(c) + ".";
        const double div = eval_diversity(imgs);
        report.emplace_back(p + "spectrum_match", format_double(eval_spectrum_match(imgs, data.class_images(c))));
        report.emplace_back(p + "diversity", format_double(div));
        report.emplace_back(p + "accuracy", format_double(classifier.accuracy(imgs, lab)));
        diversity += div / double(cfg.dataset.num_classes);
        all.insert(all.end(), imgs.begin(), imgs.end());
        labels.insert(labels.end(), lab.begin(), lab.end());
    }
    report.emplace_back("spectrum_match", format_double(eval_spectrum_match(all, data.images)));
    report.emplace_back("diversity", format_double(diversity));
    report.emplace_back("accuracy", format_double(classifier.accuracy(all, labels)));
    report.emplace_back("samples_per_class", std::to_string(o.samples));
    report.emplace_back("ar_steps", std::to_string(cfg.sample.ar_steps));
    std::cout << format_key_values(report);
    return 0;
}

int run_dataset(const Options& o) {
    FarConfig cfg = base_config(o);
    if (o.seed) cfg.dataset.seed = *o.seed;
    apply_overrides(cfg, o);
    const Dataset data = generate_dataset(cfg.dataset);
    fs::create_directories(o.out_dir);
    std::ofstream labels(fs::path(o.out_dir) / "labels.txt");
    for (std::size_t i = 0; i < data.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
        write_pnm(fs::path(o.out_dir) / name, data.images[i]);
        labels << name << ' ' << data.labels[i] << '\n';
    }
    if (!labels) throw FormatError("failed writing labels.txt");
    std::printf("wrote %zu images to %s\n", data.size(), o.out_dir.c_str());
    return 0;
}

int run_icr(const Options& o) {
    if (!o.overrides.empty()) throw UsageError("icr: unexpected argument '" + o.overrides.front() + "'");
    if (!o.codebook && !o.channels) {
        std::printf("icr_discrete.N16384.f16=%s\n", format_double(icr_discrete(16384, 16)).c_str());
        std::printf("icr_continuous.C16.f16=%s\n", format_double(icr_continuous(16, 16)).c_str());
        return 0;
    }
    const double f = o.factor.value_or(1.0);
    if (o.codebook) std::printf("icr_discrete=%s\n", format_double(icr_discrete(*o.codebook, f)).c_str());
    if (o.channels) std::printf("icr_continuous=%s\n", format_double(icr_continuous(*o.channels, f)).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frequency-progressive autoregressive image generation"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--threads", o.threads, "worker threads (1 = deterministic single-threaded; env FAR_THREADS)");

    const auto common = [&](CLI::App* sub) {
        sub->allow_extras();
        sub->add_option("--config", o.config, "key=value config file");
        sub->add_option("--out-dir", o.out_dir, "output directory");
    };
    CLI::App* train = app.add_subcommand("train", "train a model; extra --key=value flags override the config");
    common(train);
    train->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out-dir>/far.ckpt)");
    train->add_option("--resume", o.resume, "checkpoint to resume from");
    train->add_option("--log", o.log, "loss log path (default <out-dir>/loss.log)");
    train->add_option("--seed", o.seed, "training seed");

    CLI::App* gen = app.add_subcommand("generate", "sample one image from a checkpoint");
    common(gen);
    gen->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
    gen->add_option("--class", o.class_id, "class id (num_classes = unconditional)");
    gen->add_option("--steps,-K", o.steps, "autoregressive steps K");
    gen->add_option("--seed", o.seed, "sampling seed");
    gen->add_flag("--dump-trace", o.dump_trace, "write per-step token grids and decoded images");

    CLI::App* eval = app.add_subcommand("eval", "score generated samples against the dataset");
    common(eval);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
    eval->add_option("--samples,-n", o.samples, "samples per class (>= 2)");
    eval->add_option("--steps,-K", o.steps, "autoregressive steps K");
    eval->add_option("--seed", o.seed, "sampling seed");

    CLI::App* dataset = app.add_subcommand("dataset", "write the synthetic dataset as PGM files");
    common(dataset);
    dataset->add_option("--seed", o.seed, "dataset seed");

    CLI::App* icr = app.add_subcommand("icr", "information compression ratios");
    icr->allow_extras();
    icr->add_option("--codebook,-N", o.codebook, "discrete codebook size");
    icr->add_option("--channels,-C", o.channels, "continuous latent channels");
    icr->add_option("--factor,-f", o.factor, "spatial downscale factor");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        for (CLI::App* sub : app.get_subcommands()) o.overrides = sub->remaining();
        if (*train) return run_train(o);
        if (*gen) return run_generate(o);
        if (*eval) return run_eval(o);
        if (*dataset) return run_dataset(o);
        if (*icr) return run_icr(o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
