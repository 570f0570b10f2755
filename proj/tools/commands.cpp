#include "commands.hpp"

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "dsnet/checkpoint.hpp"
#include "dsnet/dataset.hpp"
#include "dsnet/errors.hpp"
#include "dsnet/gradsuite.hpp"
#include "dsnet/metrics.hpp"
#include "dsnet/srm.hpp"
#include "dsnet/training.hpp"
#include "run_config.hpp"

#ifndef DSNET_VERSION
#define DSNET_VERSION "unknown"
#endif
#ifndef DSNET_BUILD_TYPE
#define DSNET_BUILD_TYPE "unknown"
#endif

namespace dsnet::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ArgumentError("write failed for '" + path.string() + "'");
}

fs::path prepare_output_dir(const std::string& dir) {
    if (dir.empty()) throw ConfigError("paths.output_dir is empty");
    fs::path p = resolve_output_dir(dir);
    fs::create_directories(p);
    return p;
}

// Flags shared by the commands that read a RunConfig.
struct ConfigFlags {
    std::string config;
    std::vector<std::string> sets;
    std::string manifest, checkpoint, output_dir;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", config, "YAML run config");
        cmd->add_option("--set", sets, "override, e.g. --set train.epochs=5 (repeatable)");
        cmd->add_option("--manifest", manifest, "overrides paths.manifest");
        cmd->add_option("--checkpoint", checkpoint, "overrides paths.checkpoint");
        cmd->add_option("-o,--output-dir", output_dir, "overrides paths.output_dir");
    }

    RunConfig load(std::vector<std::string> extra) const {
        auto all = sets;
        all.insert(all.end(), extra.begin(), extra.end());
        auto cfg = load_run_config(config, all);
        if (!manifest.empty()) cfg.paths.manifest = manifest;
        if (!checkpoint.empty()) cfg.paths.checkpoint = checkpoint;
        if (!output_dir.empty()) cfg.paths.output_dir = output_dir;
        return cfg;
    }
};

DatasetManifest manifest_for_run(const RunConfig& cfg) {
    if (cfg.paths.manifest.empty()) throw ConfigError("paths.manifest is not set");
    auto manifest = load_manifest(cfg.paths.manifest);
    for (auto& r : manifest.records) r.path = fs::absolute(r.path).lexically_normal().string();
    const auto unassigned = manifest.count(Split::unassigned);
    if (unassigned == manifest.records.size()) {
        manifest = make_split(manifest.records, cfg.data.split_ratios, cfg.data.split_seed);
    } else if (unassigned > 0) {
        throw ManifestError(cfg.paths.manifest + ": " + std::to_string(unassigned) +
                            " records have no split while others do");
    }
    return manifest;
}

std::string epoch_line(const EpochRecord& r, std::size_t total) {
    std::ostringstream s;
    s << "epoch " << r.epoch << "/" << total << "  lr " << std::setprecision(3) << r.lr << "  loss "
      << std::fixed << std::setprecision(5) << r.train_loss << "  train_acc " << format_rate(r.train_acc);
    if (r.val) s << "  val_acc " << format_rate(r.val->acc);
    return s.str();
}

template <typename T>
int train_with(const RunConfig& cfg, std::ostream& out) {
    auto manifest = manifest_for_run(cfg);
    const auto dir = prepare_output_dir(cfg.paths.output_dir);
    write_text(dir / "resolved_config.yaml", resolved_config_text(cfg));
    save_manifest(manifest, (dir / "manifest.csv").string());

    out << "split sizes: train " << manifest.count(Split::train) << ", val " << manifest.count(Split::val)
        << ", test " << manifest.count(Split::test) << "\n";

    DualStreamNet<T> net(cfg.model);
    auto state = OptimizerState<T>::create(net.parameters());
    std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
    if (!log) throw ArgumentError("cannot write train_log.jsonl in " + dir.string());

    TrainCallbacks<T> cb;
    cb.on_start = [&](const EpochRecord& r) {
        log << epoch_record_json(r) << "\n";
        out << epoch_line(r, cfg.train.epochs) << "\n";
    };
    cb.on_epoch = [&](const EpochRecord& r) {
        log << epoch_record_json(r) << "\n";
        log.flush();
        out << epoch_line(r, cfg.train.epochs) << "\n";
    };
    cb.on_best = [&](const EpochRecord& r, DualStreamNet<T>& model, const OptimizerState<T>& opt) {
        save_checkpoint((dir / "best.ckpt").string(), model, cfg.train, r.epoch, &opt);
    };
    auto report = fit(net, manifest, cfg.train, cb, &state);
    if (report.epochs.empty()) save_checkpoint((dir / "best.ckpt").string(), net, cfg.train, 0, &state);
    save_checkpoint((dir / "last.ckpt").string(), net, cfg.train, report.epochs.size(), &state);
    out << "best epoch " << report.best_epoch;
    if (report.best_val_acc >= 0) out << " (val_acc " << format_rate(report.best_val_acc) << ")";
    out << "\ncheckpoints written to " << dir.string() << "\n";
    return kOk;
}

struct LoadedData {
    CheckpointInfo info;
    LabeledImages split;
};

LoadedData checkpoint_and_split(const RunConfig& cfg) {
    if (cfg.paths.checkpoint.empty()) throw ConfigError("paths.checkpoint is not set");
    if (cfg.paths.manifest.empty()) throw ConfigError("paths.manifest is not set");
    LoadedData d;
    d.info = read_checkpoint_info(cfg.paths.checkpoint);
    const auto manifest = load_manifest(cfg.paths.manifest);
    const auto split = parse_split(cfg.eval.split);
    manifest.require_both_classes(split);
    d.split = load_split(manifest, split, d.info.model.input_side);
    return d;
}

// The model and training sections come from the checkpoint, so the written config describes the
// network that was actually evaluated.
RunConfig with_checkpoint_configs(RunConfig cfg, const CheckpointInfo& info) {
    cfg.model = info.model;
    cfg.train = info.train;
    return cfg;
}

template <typename T>
MetricsReport run_eval(const RunConfig& cfg, const LoadedData& d, const std::vector<TransformSpec>* transforms) {
    DualStreamNet<T> net(d.info.model);
    load_checkpoint(cfg.paths.checkpoint, net);
    if (transforms) {
        return robustness_eval(net, d.split, *transforms, cfg.eval.robustness_seed, cfg.eval.threshold,
                               cfg.eval.batch_size);
    }
    return evaluate(net, d.split, cfg.eval.threshold, cfg.eval.batch_size);
}

int report_command(const RunConfig& cfg, const std::vector<TransformSpec>* transforms, const std::string& stem,
                   std::ostream& out) {
    const auto d = checkpoint_and_split(cfg);
    const auto report = d.info.precision == Precision::f64 ? run_eval<double>(cfg, d, transforms)
                                                           : run_eval<float>(cfg, d, transforms);
    const auto dir = prepare_output_dir(cfg.paths.output_dir);
    write_text(dir / "resolved_config.yaml", resolved_config_text(with_checkpoint_configs(cfg, d.info)));
    const auto table = format_report_table(report);
    write_text(dir / (stem + ".txt"), table);
    write_text(dir / (stem + ".kv"), format_report_kv(report));
    out << table;
    return kOk;
}

TransformSpec parse_transform_flag(const std::string& text) {
    TransformSpec spec;
    const auto eq = text.find('=');
    try {
        spec.kind = parse_transform_kind(text.substr(0, eq));
    } catch (const Error& e) {
        throw ConfigError(std::string("--transform: ") + e.what());
    }
    if (eq != std::string::npos) {
        const auto value = text.substr(eq + 1);
        std::size_t used = 0;
        try {
            spec.parameter = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != value.size()) throw ConfigError("--transform: bad parameter in '" + text + "'");
    }
    return spec;
}

std::vector<std::size_t> parse_map_list(const std::string& text) {
    std::vector<std::size_t> maps;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || v >= kResidualChannels) {
            throw ConfigError("--maps: '" + item + "' is not a map index in [0, " +
                              std::to_string(kResidualChannels - 1) + "]");
        }
        maps.push_back(v);
    }
    if (maps.empty()) throw ConfigError("--maps: empty selection");
    return maps;
}

// Min-max normalisation to [0, 1]; a constant map becomes mid-gray.
std::vector<double> normalize_map(std::vector<double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double a = *lo, b = *hi;
    for (auto& x : v) x = b > a ? (x - a) / (b - a) : 0.5;
    return v;
}

struct DumpOptions {
    std::string input;
    std::string output_dir = "residuals";
    std::size_t side = 0;
    std::string maps;
    bool full = false;
};

int dump_residuals(const DumpOptions& o, std::ostream& out) {
    auto image = decode_image(o.input);
    if (o.side) image = resize_bilinear(image, o.side);
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    // The outer two pixels mix in the zero padding; by default only the interior is written.
    const std::size_t border = o.full ? 0 : 2;
    if (h <= 2 * border || w <= 2 * border) {
        throw ArgumentError("image of " + std::to_string(h) + "x" + std::to_string(w) +
                            " has no interior; pass --full");
    }
    std::vector<std::size_t> maps(kResidualChannels);
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = i;
    if (!o.maps.empty()) maps = parse_map_list(o.maps);

    const auto bank = build_filter_bank();
    const auto residuals = extract_residuals(reshape(image, {1, 3, h, w}), bank);
    const auto values = residuals.data();
    const auto dir = prepare_output_dir(o.output_dir);

    YAML::Emitter cfg;
    cfg << YAML::BeginMap << YAML::Key << "dump_residuals" << YAML::Value << YAML::BeginMap;
    cfg << YAML::Key << "input" << YAML::Value << YAML::DoubleQuoted << o.input;
    cfg << YAML::Key << "side" << YAML::Value << (o.side ? o.side : h);
    cfg << YAML::Key << "maps" << YAML::Value << YAML::Flow << maps;
    cfg << YAML::Key << "full" << YAML::Value << o.full;
    cfg << YAML::EndMap << YAML::EndMap;
    write_text(dir / "resolved_config.yaml", std::string(cfg.c_str()) + "\n");

    const char* colours = "RGB";
    const std::size_t oh = h - 2 * border, ow = w - 2 * border;
    for (auto m : maps) {
        std::vector<double> plane;
        plane.reserve(oh * ow);
        for (std::size_t y = border; y < h - border; ++y) {
            for (std::size_t x = border; x < w - border; ++x) plane.push_back(values[(m * h + y) * w + x]);
        }
        char name[96];
        std::snprintf(name, sizeof name, "%02zu_%c_%s.pgm", m, colours[m / kSrmKernelCount],
                      bank.kernels[m % kSrmKernelCount].name.c_str());
        write_pgm((dir / name).string(), normalize_map(std::move(plane)), oh, ow);
    }
    out << "wrote " << maps.size() << " residual maps (" << oh << "x" << ow << ") to " << dir.string() << "\n";
    return kOk;
}

struct SynthOptions {
    std::string output_dir = "synthetic";
    std::size_t per_class = 8;
    std::size_t side = 32;
    std::uint64_t seed = 0;
};

int synth(const SynthOptions& o, std::ostream& out) {
    if (o.per_class == 0) throw ConfigError("--per-class must be positive");
    if (o.side < 2) throw ConfigError("--side must be at least 2");
    const auto corpus = make_synthetic_corpus(o.per_class, o.side, o.seed);
    const auto dir = prepare_output_dir(o.output_dir);
    fs::create_directories(dir / "images");
    DatasetManifest manifest;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "images/%04zu.ppm", i);
        write_ppm((dir / name).string(), corpus.images[i]);
        manifest.records.push_back({name, corpus.labels[i], Split::unassigned});
    }
    save_manifest(manifest, (dir / "manifest.csv").string());
    YAML::Emitter cfg;
    cfg << YAML::BeginMap << YAML::Key << "synth" << YAML::Value << YAML::BeginMap;
    cfg << YAML::Key << "per_class" << YAML::Value << o.per_class;
    cfg << YAML::Key << "side" << YAML::Value << o.side;
    cfg << YAML::Key << "seed" << YAML::Value << o.seed;
    cfg << YAML::EndMap << YAML::EndMap;
    write_text(dir / "resolved_config.yaml", std::string(cfg.c_str()) + "\n");
    out << "wrote " << corpus.size() << " images and manifest.csv to " << dir.string() << "\n";
    return kOk;
}

int gradcheck(const GradSuiteOptions& o, std::ostream& out) {
    if (o.input_side == 0 || o.input_side % 32 != 0) throw ConfigError("--side must be a positive multiple of 32");
    const auto results = run_gradcheck_suite(o);
    bool ok = true;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %14s %8s %8s\n", "family", "max_rel_error", "coords", "kinks");
    out << line;
    for (const auto& r : results) {
        const std::size_t wanted = r.family == "full_model" ? o.model_samples : 1;
        const bool pass = r.max_rel_error < kGradTolerance && r.coords_checked >= wanted;
        ok = ok && pass;
        std::snprintf(line, sizeof line, "%-20s %14.3e %8zu %8zu%s\n", r.family.c_str(), r.max_rel_error,
                      r.coords_checked, r.kinks_skipped, pass ? "" : "  FAIL");
        out << line;
    }
    out << (ok ? "all families below 1e-4\n" : "gradient check failed\n");
    return ok ? kOk : kNumericFailure;
}

void print_version(std::ostream& out) {
    out << "dsnet " << DSNET_VERSION << "\n"
        << "build: " << DSNET_BUILD_TYPE << ", " << "g++ " << __VERSION__ << ", C++" << (__cplusplus / 100 % 100)
        << "\n"
        << "numeric modes: f32 (training), f64 (verification)\n"
        << "checkpoint format: " << kCheckpointVersion << "\n";
}

} // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dual-stream detector of generated images: training, evaluation and diagnostics", "dsnet"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every command");

    std::string init_path = "dsnet.yaml";
    bool force = false;
    auto* init = app.add_subcommand("init-config", "write a commented default config");
    init->add_option("path", init_path, "destination (default dsnet.yaml)");
    init->add_flag("--force", force, "overwrite an existing file");

    ConfigFlags train_flags;
    std::optional<std::size_t> epochs, batch, side;
    std::optional<std::string> precision;
    auto* train = app.add_subcommand("train", "train from a manifest and save checkpoints");
    train_flags.attach(train);
    train->add_option("--epochs", epochs, "overrides train.epochs");
    train->add_option("--batch-size", batch, "overrides train.batch_size");
    train->add_option("--side", side, "overrides model.input_side");
    train->add_option("--precision", precision, "overrides train.precision (f32 or f64)");

    ConfigFlags eval_flags;
    std::optional<std::string> eval_split;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
    eval_flags.attach(eval);
    eval->add_option("--split", eval_split, "overrides eval.split");

    ConfigFlags rob_flags;
    std::optional<std::string> rob_split;
    std::vector<std::string> transform_flags;
    auto* robust = app.add_subcommand("robustness", "evaluate a checkpoint under post-processing transforms");
    rob_flags.attach(robust);
    robust->add_option("--split", rob_split, "overrides eval.split");
    robust->add_option("--transform", transform_flags,
                       "kind or kind=parameter (repeatable); default: all seven kinds, parameters sampled");

    GradSuiteOptions grad_opts;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer family and the model");
    grad->add_option("--side", grad_opts.input_side, "model input side for the end-to-end row");
    grad->add_option("--samples", grad_opts.samples, "coordinates per layer family");
    grad->add_option("--model-samples", grad_opts.model_samples, "model parameters probed end to end");
    grad->add_option("--seed", grad_opts.seed);

    DumpOptions dump_opts;
    auto* dump = app.add_subcommand("dump-residuals", "write the 90 residual maps of an image as PGM files");
    dump->add_option("-i,--input", dump_opts.input, "binary PPM image")->required();
    dump->add_option("-o,--output-dir", dump_opts.output_dir);
    dump->add_option("--side", dump_opts.side, "resize to side x side first (default: keep size)");
    dump->add_option("--maps", dump_opts.maps, "comma-separated map indices 0..89 (default: all)");
    dump->add_flag("--full", dump_opts.full, "include the zero-padded 2-pixel frame");

    SynthOptions synth_opts;
    auto* syn = app.add_subcommand("synth", "write a small synthetic two-class corpus with a manifest");
    syn->add_option("-o,--output-dir", synth_opts.output_dir);
    syn->add_option("--per-class", synth_opts.per_class);
    syn->add_option("--side", synth_opts.side);
    syn->add_option("--seed", synth_opts.seed);

    auto* version = app.add_subcommand("version", "print build metadata");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            app.exit(e, out, err);
            return kOk;
        }
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (*init) {
            if (fs::exists(init_path) && !force) {
                err << "error: " << init_path << " exists; pass --force to overwrite\n";
                return kDataError;
            }
            write_text(init_path, default_config_text());
            out << "wrote " << init_path << "\n";
            return kOk;
        }
        if (*train) {
            std::vector<std::string> extra;
            if (epochs) extra.push_back("train.epochs=" + std::to_string(*epochs));
            if (batch) extra.push_back("train.batch_size=" + std::to_string(*batch));
            if (side) extra.push_back("model.input_side=" + std::to_string(*side));
            if (precision) extra.push_back("train.precision=" + *precision);
            const auto cfg = train_flags.load(extra);
            return cfg.train.precision == Precision::f64 ? train_with<double>(cfg, out) : train_with<float>(cfg, out);
        }
        if (*eval) {
            std::vector<std::string> extra;
            if (eval_split) extra.push_back("eval.split=" + *eval_split);
            return report_command(eval_flags.load(extra), nullptr, "eval", out);
        }
        if (*robust) {
            std::vector<std::string> extra;
            if (rob_split) extra.push_back("eval.split=" + *rob_split);
            const auto cfg = rob_flags.load(extra);
            auto transforms = default_robustness_transforms();
            if (!transform_flags.empty()) {
                transforms.clear();
                for (const auto& t : transform_flags) transforms.push_back(parse_transform_flag(t));
            }
            return report_command(cfg, &transforms, "robustness", out);
        }
        if (*grad) return gradcheck(grad_opts, out);
        if (*dump) return dump_residuals(dump_opts, out);
        if (*syn) return synth(synth_opts, out);
        if (*version) {
            print_version(out);
            return kOk;
        }
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumericFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsage;
}

} // namespace dsnet::cli
