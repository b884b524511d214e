// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "semsplat/edit.hpp"
#include "semsplat/ingest.hpp"
#include "semsplat/raster.hpp"
#include "semsplat/toy.hpp"

namespace semsplat::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage:
        case ErrorKind::InvalidParameter: return kExitUsage;
        case ErrorKind::Numerical: return kExitNumerical;
        default: return kExitData;
    }
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw Error(ErrorKind::Usage, "invalid value '" + text + "' for " + key);
    return v;
}

struct ConfigKey {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
ConfigKey number_key(const std::string& key, T TrainConfig::*member) {
    return {[key, member](RunConfig& c, const std::string& v) { c.train.*member = parse_number<T>(key, v); },
            [member](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>)
                    return format_double(c.train.*member);
                else
                    return std::to_string(c.train.*member);
            }};
}

ConfigKey rate_key(const std::string& key, double LearningRates::*member) {
    return {[key, member](RunConfig& c, const std::string& v) { c.train.lr.*member = parse_number<double>(key, v); },
            [member](const RunConfig& c) { return format_double(c.train.lr.*member); }};
}

const std::map<std::string, ConfigKey>& config_keys() {
    static const std::map<std::string, ConfigKey> keys = [] {
        std::map<std::string, ConfigKey> k;
        k["data"] = {[](RunConfig& c, const std::string& v) { c.data = v; },
                     [](const RunConfig& c) { return c.data.string(); }};
        k["out"] = {[](RunConfig& c, const std::string& v) { c.out = v; },
                    [](const RunConfig& c) { return c.out.string(); }};
        k["classes"] = {[](RunConfig& c, const std::string& v) { c.classes = fs::path(v); },
                        [](const RunConfig& c) { return c.classes ? c.classes->string() : std::string{}; }};
        k["holdout_every"] = {
            [](RunConfig& c, const std::string& v) { c.holdout_every = parse_number<int>("holdout_every", v); },
            [](const RunConfig& c) { return std::to_string(c.holdout_every); }};
        k["background"] = {[](RunConfig& c, const std::string& v) { c.train.background = parse_color(v); },
                           [](const RunConfig& c) {
                               const auto& b = c.train.background;
                               return format_double(b[0]) + "," + format_double(b[1]) + "," + format_double(b[2]);
                           }};
        k["iterations"] = number_key("iterations", &TrainConfig::iterations);
        k["seed"] = number_key("seed", &TrainConfig::seed);
        k["sh_degree"] = number_key("sh_degree", &TrainConfig::sh_degree);
        k["sh_degree_interval"] = number_key("sh_degree_interval", &TrainConfig::sh_degree_interval);
        k["lambda_ssim"] = number_key("lambda_ssim", &TrainConfig::lambda_ssim);
        k["lambda_sem"] = number_key("lambda_sem", &TrainConfig::lambda_sem);
        k["densify_interval"] = number_key("densify_interval", &TrainConfig::densify_interval);
        k["densify_start"] = number_key("densify_start", &TrainConfig::densify_start);
        k["densify_stop"] = number_key("densify_stop", &TrainConfig::densify_stop);
        k["densify_grad_threshold"] = number_key("densify_grad_threshold", &TrainConfig::densify_grad_threshold);
        k["densify_scale_fraction"] = number_key("densify_scale_fraction", &TrainConfig::densify_scale_fraction);
        k["split_scale_divisor"] = number_key("split_scale_divisor", &TrainConfig::split_scale_divisor);
        k["prune_opacity"] = number_key("prune_opacity", &TrainConfig::prune_opacity);
        k["prune_scale_fraction"] = number_key("prune_scale_fraction", &TrainConfig::prune_scale_fraction);
        k["opacity_reset_interval"] = number_key("opacity_reset_interval", &TrainConfig::opacity_reset_interval);
        k["opacity_reset_value"] = number_key("opacity_reset_value", &TrainConfig::opacity_reset_value);
        k["checkpoint_interval"] = number_key("checkpoint_interval", &TrainConfig::checkpoint_interval);
        k["lr_position_init"] = rate_key("lr_position_init", &LearningRates::position_init);
        k["lr_position_final"] = rate_key("lr_position_final", &LearningRates::position_final);
        k["lr_sh_dc"] = rate_key("lr_sh_dc", &LearningRates::sh_dc);
        k["lr_sh_rest"] = rate_key("lr_sh_rest", &LearningRates::sh_rest);
        k["lr_opacity"] = rate_key("lr_opacity", &LearningRates::opacity);
        k["lr_scaling"] = rate_key("lr_scaling", &LearningRates::scaling);
        k["lr_rotation"] = rate_key("lr_rotation", &LearningRates::rotation);
        k["lr_semantic"] = rate_key("lr_semantic", &LearningRates::semantic);
        return k;
    }();
    return keys;
}

}  // namespace

std::array<double, 3> parse_color(const std::string& text) {
    std::array<double, 3> rgb{};
    std::stringstream ss(text);
    std::string part;
    int n = 0;
    while (std::getline(ss, part, ',')) {
        if (n == 3) throw Error(ErrorKind::Usage, "colour '" + text + "' needs exactly three components");
        const double v = parse_number<double>("colour", trim(part));
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::Usage, "colour components must lie in [0, 1]");
        rgb[static_cast<std::size_t>(n++)] = v;
    }
    if (n != 3) throw Error(ErrorKind::Usage, "colour '" + text + "' needs exactly three components");
    return rgb;
}

KeyValues read_config_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::Usage, "cannot read config file " + path.string());
    KeyValues values;
    std::string line;
    for (int number = 1; std::getline(is, line); ++number) {
        const auto hash = line.find('#');
        const std::string content = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (content.empty()) continue;
        const auto eq = content.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::Usage,
                        path.string() + ":" + std::to_string(number) + ": expected `key = value`, got '" + content + "'");
        const std::string key = trim(content.substr(0, eq));
        const std::string value = trim(content.substr(eq + 1));
        if (key.empty()) throw Error(ErrorKind::Usage, path.string() + ":" + std::to_string(number) + ": empty key");
        values[key] = value;
    }
    return values;
}

void apply_config(const KeyValues& values, RunConfig& config) {
    const auto& keys = config_keys();
    for (const auto& [key, value] : values) {
        const auto it = keys.find(key);
        if (it == keys.end()) {
            std::string known;
            for (const auto& [k, _] : keys) known += (known.empty() ? "" : ", ") + k;
            throw Error(ErrorKind::Usage, "unknown config key '" + key + "'; known keys: " + known);
        }
        it->second.set(config, value);
    }
}

KeyValues describe_config(const RunConfig& config) {
    KeyValues out;
    for (const auto& [key, entry] : config_keys()) out[key] = entry.get(config);
    return out;
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / kLockFileName) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr)
        throw Error(ErrorKind::Io, "output directory " + dir.string() + " is locked by another run (" +
                                       path_.string() + "); remove the file if no run is active");
    std::fclose(f);
}

OutputLock::~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

PlyAsset load_checkpoint(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw Error(ErrorKind::Io, "missing checkpoint: expected " + path.string());
    return import_ply_asset(path);
}

EvalReport evaluate(const GaussianSet& set, std::span<const Frame> frames, const ClassTable& classes,
                    const std::array<double, 3>& background, MiouMode mode) {
    EvalReport report;
    report.class_names = classes.names();
    ConfusionMatrix confusion(classes.size());
    for (const Frame& frame : frames) {
        const RenderOutput out = rasterize_forward(set, frame.camera, background);
        ImageF rgb = out.rgb;
        for (double& v : rgb.data()) v = std::clamp(v, 0.0, 1.0);
        report.frames.push_back({frame.name, psnr(rgb, frame.rgb), ssim(rgb, frame.rgb)});
        confusion.add(render_label_map(out), frame.mask, kIgnoreLabel);
    }
    report.segmentation = confusion.result(mode);
    report.finalize_means();
    return report;
}

fs::path resolve_model_dir(const fs::path& path) {
    const DatasetLayout layout{path, {}};
    if (fs::is_directory(layout.sparse())) return layout.sparse();
    if (fs::exists(path / "cameras.txt") || fs::exists(path / "cameras.bin")) return path;
    throw Error(ErrorKind::Io, "no COLMAP model found: expected " + layout.sparse().string() + " or " +
                                   (path / "cameras.txt").string());
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
    os << text;
    if (!os) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

std::string loss_table(const std::vector<IterationLog>& log) {
    std::string out = "iteration\tframe\tl1\tdssim\tce\ttotal\tgaussians\n";
    for (const auto& e : log) {
        out += std::to_string(e.iteration) + "\t" + e.frame + "\t" + format_double(e.l1) + "\t" +
               format_double(e.dssim) + "\t" + format_double(e.ce) + "\t" + format_double(e.total) + "\t" +
               std::to_string(e.gaussians) + "\n";
    }
    return out;
}

void write_checkpoint(const fs::path& stem, const GaussianSet& set, const OptimState& state, const ClassTable& classes) {
    export_ply(fs::path(stem).concat(".ply"), set, classes);
    write_optimizer_state(fs::path(stem).concat(".optim"), state);
}

}  // namespace

std::vector<int> resolve_classes(const ClassTable& classes, const std::vector<std::string>& names) {
    std::set<int> ids;
    for (const auto& entry : names) {
        std::stringstream ss(entry);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const std::string name = trim(part);
            if (!name.empty()) ids.insert(classes.resolve(name));
        }
    }
    return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// Commands

TrainSummary cmd_train(const RunConfig& config) {
    config.train.validate();
    if (config.holdout_every < 2) throw Error(ErrorKind::Usage, "holdout_every must be at least 2");
    if (config.data.empty()) throw Error(ErrorKind::Usage, "train needs a dataset (--data)");
    if (config.out.empty()) throw Error(ErrorKind::Usage, "train needs an output directory (--out)");

    Dataset dataset = load_dataset(DatasetLayout{config.data, config.classes.value_or(fs::path{})});
    const ClassTable classes = dataset.classes;
    DatasetSplit split = split_train_test(std::move(dataset.frames), config.holdout_every);
    if (split.train.empty()) throw Error(ErrorKind::InsufficientData, "dataset has no training frames");
    const GaussianSet init =
        init_from_points(dataset.model.colored_points(), classes.size(), config.train.sh_degree);

    fs::create_directories(config.out);
    const OutputLock lock(config.out);
    const fs::path checkpoints = config.out / "checkpoints";
    if (config.train.checkpoint_interval > 0) fs::create_directories(checkpoints);

    std::string resolved;
    for (const auto& [key, value] : describe_config(config)) resolved += key + " = " + value + "\n";
    write_text_file(config.out / "config.txt", resolved);

    auto on_checkpoint = [&](int iteration, const GaussianSet& set, const OptimState& state) {
        char name[32];
        std::snprintf(name, sizeof(name), "iter_%06d", iteration);
        write_checkpoint(checkpoints / name, set, state, classes);
    };

    TrainResult result;
    try {
        result = train(split.train, init, config.train, on_checkpoint);
    } catch (const TrainingDiverged& e) {
        write_checkpoint(config.out / "last_good", e.last_good, e.last_good_state, classes);
        throw;
    }

    write_checkpoint(config.out / "point_cloud", result.set, result.state, classes);
    write_text_file(config.out / "loss.tsv", loss_table(result.log));

    TrainSummary summary;
    summary.gaussians = result.set.size();
    summary.train_frames = split.train.size();
    if (!split.test.empty()) {
        summary.held_out =
            evaluate(result.set, split.test, classes, config.train.background, MiouMode::PresentClasses);
        summary.held_out->save(config.out / "eval.txt", config.out / "eval.kv");
    } else {
        log::warn("test split is empty; skipping held-out evaluation");
    }
    return summary;
}

void cmd_render(const RenderRequest& request) {
    const PlyAsset asset = load_checkpoint(request.checkpoint);
    const auto removed = resolve_classes(asset.classes, request.remove);
    const auto extracted = resolve_classes(asset.classes, request.extract);
    const SparseModel model = parse_colmap(resolve_model_dir(request.cameras));
    std::vector<std::pair<std::string, Camera>> views;
    for (const auto& [id, image] : model.images) {
        Camera cam = model.camera_for(image);
        cam.validate();
        views.emplace_back(image.name, cam);
    }
    if (views.empty()) throw Error(ErrorKind::InsufficientData, "camera model has no registered images");

    GaussianSet set = asset.set;
    if (!removed.empty()) set = remove_classes(set, removed);
    if (!extracted.empty()) set = extract_classes(set, extracted, request.min_confidence);

    fs::create_directories(request.out);
    const OutputLock lock(request.out);
    if (request.labels) fs::create_directories(request.out / "labels");
    for (const auto& [name, camera] : views) {
        const RenderOutput out = rasterize_forward(set, camera, request.background);
        const fs::path file = fs::path(name).filename().replace_extension(".png");
        write_png_rgb(request.out / file, out.rgb);
        if (request.labels) write_png_gray(request.out / "labels" / file, render_label_map(out));
    }
}

EvalReport cmd_eval(const EvalRequest& request) {
    if (request.holdout_every < 2) throw Error(ErrorKind::Usage, "holdout_every must be at least 2");
    const PlyAsset asset = load_checkpoint(request.checkpoint);
    Dataset dataset = load_dataset(request.data);
    if (dataset.classes.size() != asset.set.num_classes)
        throw Error(ErrorKind::SizeMismatch, "checkpoint has " + std::to_string(asset.set.num_classes) +
                                                 " classes but the dataset defines " +
                                                 std::to_string(dataset.classes.size()));
    std::vector<Frame> frames;
    if (request.split == EvalSplit::All) {
        frames = std::move(dataset.frames);
    } else {
        DatasetSplit split = split_train_test(std::move(dataset.frames), request.holdout_every);
        frames = request.split == EvalSplit::Test ? std::move(split.test) : std::move(split.train);
    }
    if (frames.empty())
        throw Error(ErrorKind::InsufficientData,
                    "the selected split is empty; use a smaller --holdout-every or --split all");
    EvalReport report = evaluate(asset.set, frames, dataset.classes, request.background, request.miou_mode);
    if (request.out) {
        fs::create_directories(*request.out);
        const OutputLock lock(*request.out);
        report.save(*request.out / "eval.txt", *request.out / "eval.kv");
    }
    return report;
}

namespace {

std::size_t edit_command(const EditRequest& request, bool extract) {
    const PlyAsset asset = load_checkpoint(request.input);
    const auto ids = resolve_classes(asset.classes, request.classes);
    if (ids.empty()) throw Error(ErrorKind::Usage, "no classes given (--class)");
    if (request.output.empty()) throw Error(ErrorKind::Usage, "no output file given (--out)");
    const GaussianSet result =
        extract ? extract_classes(asset.set, ids, request.min_confidence) : remove_classes(asset.set, ids);
    if (request.output.has_parent_path()) fs::create_directories(request.output.parent_path());
    export_ply(request.output, result, asset.classes, PlyExportOptions{!request.plain});
    return result.size();
}

}  // namespace

std::size_t cmd_remove(const EditRequest& request) { return edit_command(request, false); }
std::size_t cmd_extract(const EditRequest& request) { return edit_command(request, true); }

void cmd_info(const fs::path& checkpoint, std::ostream& os) {
    const PlyAsset asset = load_checkpoint(checkpoint);
    const GaussianSet& set = asset.set;
    os << "gaussians         " << set.size() << "\n";
    os << "sh degree         " << set.sh_degree << " (active " << set.active_sh_degree << ")\n";
    os << "classes           " << set.num_classes << "\n";
    if (!set.empty()) {
        Vec3 lo = set.positions[0], hi = set.positions[0];
        for (const Vec3& p : set.positions)
            for (int k = 0; k < 3; ++k) {
                lo[k] = std::min(lo[k], p[k]);
                hi[k] = std::max(hi[k], p[k]);
            }
        os << std::setprecision(6) << "bounds            [" << lo.x << ", " << lo.y << ", " << lo.z << "] .. ["
           << hi.x << ", " << hi.y << ", " << hi.z << "]\n";
    }
    const ClassAssignment assigned = assign_classes(set);
    std::vector<std::size_t> counts(set.class_stride(), 0);
    std::vector<double> confidence(set.class_stride(), 0.0);
    for (std::size_t i = 0; i < assigned.size(); ++i) {
        const auto c = static_cast<std::size_t>(assigned.class_ids[i]);
        ++counts[c];
        confidence[c] += assigned.confidence[i];
    }
    os << "\n  id  name                 gaussians  mean confidence\n";
    for (int c = 0; c < set.num_classes; ++c) {
        const auto k = static_cast<std::size_t>(c);
        os << std::setw(4) << c << "  " << std::left << std::setw(20) << asset.classes.name(c) << std::right
           << std::setw(10) << counts[k] << "  " << std::fixed << std::setprecision(4)
           << (counts[k] ? confidence[k] / counts[k] : 0.0) << std::defaultfloat << "\n";
    }
}

void cmd_make_toy(const fs::path& out, std::uint64_t seed) {
    ToyOptions options;
    options.seed = seed;
    const ToyScene scene = make_toy_scene(options);
    fs::create_directories(out);
    const OutputLock lock(out);
    write_toy_dataset(scene, out);
}

// ---------------------------------------------------------------------------
// Entry point

namespace {

constexpr const char* kFooter =
    "Configuration precedence: built-in defaults < --config file (`key = value` lines) < flags.\n"
    "SPLAT_THREADS caps the number of worker threads.\n"
    "Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.";

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Semantic Gaussian splatting: train, render, evaluate and edit class-labelled scenes"};
    app.footer(kFooter);
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress warnings and progress output");

    // train
    auto* train_cmd = app.add_subcommand("train", "Fit a Gaussian scene to a dataset");
    std::string config_file;
    std::map<std::string, std::string> train_flags;
    std::vector<std::string> overrides;
    train_cmd->add_option("--config", config_file, "Config file with `key = value` lines");
    struct FlagSpec {
        const char* flag;
        const char* key;
        const char* help;
    };
    const std::vector<FlagSpec> train_specs = {
        {"--data", "data", "Dataset directory (images/, masks/, sparse/0/, classes.tsv)"},
        {"--out", "out", "Output directory"},
        {"--classes", "classes", "Class table overriding <data>/classes.tsv"},
        {"--iters", "iterations", "Training iterations"},
        {"--seed", "seed", "Random seed"},
        {"--holdout-every", "holdout_every", "Every n-th frame (sorted by name) is held out for evaluation"},
        {"--sh-degree", "sh_degree", "Maximum spherical-harmonics degree"},
        {"--lambda-ssim", "lambda_ssim", "Weight of the D-SSIM term"},
        {"--lambda-sem", "lambda_sem", "Weight of the semantic cross-entropy term"},
        {"--background", "background", "Background colour r,g,b in [0, 1]"},
        {"--checkpoint-every", "checkpoint_interval", "Write a checkpoint every n iterations (0 disables)"},
    };
    for (const auto& spec : train_specs) train_cmd->add_option(spec.flag, train_flags[spec.key], spec.help);
    train_cmd->add_option("--set", overrides, "Override any config key: --set key=value (repeatable)");

    // render
    auto* render_cmd = app.add_subcommand("render", "Render a checkpoint from COLMAP cameras");
    RenderRequest render_req;
    std::string render_bg = "0,0,0";
    render_cmd->add_option("--checkpoint", render_req.checkpoint, "Checkpoint PLY")->required();
    render_cmd->add_option("--cameras", render_req.cameras, "Dataset directory or COLMAP model directory")->required();
    render_cmd->add_option("--out", render_req.out, "Output directory")->required();
    render_cmd->add_option("--remove", render_req.remove, "Classes to remove before rendering (name or id)");
    render_cmd->add_option("--extract", render_req.extract, "Classes to keep exclusively (name or id)");
    render_cmd->add_option("--min-confidence", render_req.min_confidence,
                           "With --extract, drop Gaussians below this class probability");
    render_cmd->add_flag("--labels", render_req.labels, "Also write label maps to <out>/labels");
    render_cmd->add_option("--background", render_bg, "Background colour r,g,b in [0, 1]");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint against a dataset");
    EvalRequest eval_req;
    std::string eval_out, eval_split = "test", eval_mode = "present", eval_bg = "0,0,0";
    eval_cmd->add_option("--checkpoint", eval_req.checkpoint, "Checkpoint PLY")->required();
    eval_cmd->add_option("--data", eval_req.data, "Dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "Directory for eval.txt and eval.kv");
    eval_cmd->add_option("--holdout-every", eval_req.holdout_every, "Every n-th frame is a test frame");
    eval_cmd->add_option("--split", eval_split, "Frames to score: test, train or all")
        ->check(CLI::IsMember({"test", "train", "all"}));
    eval_cmd->add_option("--miou-mode", eval_mode, "present: skip classes absent from both; all: average every class")
        ->check(CLI::IsMember({"present", "all"}));
    eval_cmd->add_option("--background", eval_bg, "Background colour r,g,b in [0, 1]");

    // remove / extract
    EditRequest remove_req, extract_req;
    auto add_edit = [&](const char* name, const char* help, EditRequest& req) {
        auto* cmd = app.add_subcommand(name, help);
        cmd->add_option("--in", req.input, "Input checkpoint PLY")->required();
        cmd->add_option("--out", req.output, "Output PLY")->required();
        cmd->add_option("--class", req.classes, "Class name or id (repeatable, comma lists allowed)")->required();
        cmd->add_flag("--plain", req.plain, "Write a plain splatting PLY without semantic properties");
        return cmd;
    };
    auto* remove_cmd = add_edit("remove", "Drop every Gaussian assigned to the given classes", remove_req);
    auto* extract_cmd = add_edit("extract", "Keep only Gaussians assigned to the given classes", extract_req);
    extract_cmd->add_option("--min-confidence", extract_req.min_confidence,
                            "Also drop kept Gaussians below this class probability");

    // info
    auto* info_cmd = app.add_subcommand("info", "Summarise a checkpoint");
    fs::path info_path;
    info_cmd->add_option("checkpoint", info_path, "Checkpoint PLY")->required();

    // make-toy
    auto* toy_cmd = app.add_subcommand("make-toy", "Write a synthetic three-class dataset");
    fs::path toy_out;
    std::uint64_t toy_seed = 1;
    toy_cmd->add_option("--out", toy_out, "Output dataset directory")->required();
    toy_cmd->add_option("--seed", toy_seed, "Random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    log::set_quiet(quiet);

    try {
        if (train_cmd->parsed()) {
            RunConfig config;
            if (!config_file.empty()) apply_config(read_config_file(config_file), config);
            KeyValues flags;
            for (const auto& spec : train_specs)
                if (train_cmd->count(spec.flag) > 0) flags[spec.key] = train_flags[spec.key];
            for (const auto& o : overrides) {
                const auto eq = o.find('=');
                if (eq == std::string::npos) throw Error(ErrorKind::Usage, "--set expects key=value, got '" + o + "'");
                flags[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
            }
            apply_config(flags, config);
            const TrainSummary summary = cmd_train(config);
            if (!quiet) {
                std::cout << "trained " << summary.gaussians << " Gaussians on " << summary.train_frames
                          << " frames; wrote " << (config.out / "point_cloud.ply").string() << "\n";
                if (summary.held_out) summary.held_out->write_table(std::cout);
            }
        } else if (render_cmd->parsed()) {
            render_req.background = parse_color(render_bg);
            cmd_render(render_req);
        } else if (eval_cmd->parsed()) {
            if (!eval_out.empty()) eval_req.out = fs::path(eval_out);
            eval_req.split = eval_split == "train" ? EvalSplit::Train
                                                   : (eval_split == "all" ? EvalSplit::All : EvalSplit::Test);
            eval_req.miou_mode = eval_mode == "all" ? MiouMode::AllClasses : MiouMode::PresentClasses;
            eval_req.background = parse_color(eval_bg);
            cmd_eval(eval_req).write_table(std::cout);
        } else if (remove_cmd->parsed()) {
            const std::size_t n = cmd_remove(remove_req);
            if (!quiet) std::cout << "wrote " << n << " Gaussians to " << remove_req.output.string() << "\n";
        } else if (extract_cmd->parsed()) {
            const std::size_t n = cmd_extract(extract_req);
            if (!quiet) std::cout << "wrote " << n << " Gaussians to " << extract_req.output.string() << "\n";
        } else if (info_cmd->parsed()) {
            cmd_info(info_path, std::cout);
        } else if (toy_cmd->parsed()) {
            cmd_make_toy(toy_out, toy_seed);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace semsplat::cli
