// Command-line front end: data generation and import, training, synthesis,
// evaluation, feature visualization, and the modality-encoding ablation.
//
// Exit codes: 0 success, 64 usage, 2 invalid spec/config/file format,
// 3 training aborted on a non-finite loss, 4 modality mismatch, 5 empty
// pack, 6 too few feature rows for PCA. Diagnostics go to stderr; stdout
// carries data only.

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "modfuser/binio.hpp"
#include "modfuser/config.hpp"
#include "modfuser/data.hpp"
#include "modfuser/features.hpp"
#include "modfuser/metrics.hpp"
#include "modfuser/model.hpp"
#include "modfuser/png_io.hpp"
#include "modfuser/train.hpp"

namespace {

using namespace modfuser;

// Carries a resolved exit code out of a command handler.
struct ExitWith {
    int code;
    std::string msg;
};

[[noreturn]] void usage_error(const std::string& msg) { throw ExitWith{64, msg}; }

std::vector<std::string> split_names(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(csv);
    while (std::getline(ss, item, ',')) {
        while (!item.empty() && (item.front() == ' ' || item.front() == '\t')) item.erase(0, 1);
        while (!item.empty() && (item.back() == ' ' || item.back() == '\t')) item.pop_back();
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// "name=v0,v1,..." from a repeatable --table flag.
std::pair<std::string, std::vector<double>> parse_table_flag(const std::string& arg) {
    const std::size_t eq = arg.find('=');
    if (eq == std::string::npos || eq == 0) usage_error("--table needs name=v0,v1,...");
    std::vector<double> values;
    for (const std::string& item : split_names(arg.substr(eq + 1))) {
        errno = 0;
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (end != item.c_str() + item.size() || errno == ERANGE)
            usage_error("--table value '" + item + "' is not a number");
        values.push_back(v);
    }
    if (values.empty()) usage_error("--table needs at least one value");
    return {arg.substr(0, eq), values};
}

// Modality argument: a pack name, or a 0-based index when names are absent.
int resolve_modality(const std::string& arg, const std::vector<std::string>& names,
                     int modalities, const std::string& flag) {
    for (int i = 0; i < static_cast<int>(names.size()); ++i)
        if (names[static_cast<std::size_t>(i)] == arg) return i;
    errno = 0;
    char* end = nullptr;
    const long v = std::strtol(arg.c_str(), &end, 10);
    if (arg.empty() || end != arg.c_str() + arg.size() || errno == ERANGE)
        throw ExitWith{4, flag + ": unknown modality '" + arg + "'"};
    if (v < 0 || v >= modalities)
        throw ExitWith{4, flag + ": modality index " + arg + " out of range [0," +
                              std::to_string(modalities) + ")"};
    return static_cast<int>(v);
}

std::uint8_t quantize(double v) {
    const double q = std::round((v + 1.0) / 2.0 * 255.0);
    if (q < 0.0) return 0;
    if (q > 255.0) return 255;
    return static_cast<std::uint8_t>(q);
}

void write_image_png(const std::string& path, const Tensor& img, int height, int width) {
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) *
                                     static_cast<std::size_t>(width));
    const auto& d = img.data();
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = quantize(d[i]);
    write_gray_png8(path, width, height, pixels);
}

SlicePack load_pack_checked(const std::string& path) {
    if (path.empty()) usage_error("missing --data");
    return load_slicepack(path);
}

Model load_model_checked(const std::string& path) {
    if (path.empty()) usage_error("missing --ckpt");
    return load_checkpoint(path);
}

void check_pack_matches_model(const SlicePack& pack, const ModelConfig& cfg) {
    if (pack.modalities() != cfg.modalities)
        throw ExitWith{4, "pack has " + std::to_string(pack.modalities()) +
                              " modalities but the checkpoint expects " +
                              std::to_string(cfg.modalities)};
    if (pack.slices.empty()) throw ExitWith{5, "pack is empty"};
}

// Options shared by commands that read a pack and cut it by subject.
struct SplitChoice {
    std::string which = "none";  // none | train | val | test
};

SlicePack apply_split(const SlicePack& pack, const SplitConfig& split, const SplitChoice& choice) {
    if (choice.which == "none") return pack;
    const SplitPacks parts =
        split_subjects(pack, split.train_frac, split.val_frac, split.test_frac, split.seed);
    if (choice.which == "train") return parts.train;
    if (choice.which == "val") return parts.val;
    if (choice.which == "test") return parts.test;
    usage_error("--split must be none, train, val, or test");
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string config, out;
    std::uint64_t seed = 0;
    int size = 0, subjects = 0, slices = 0, min_ellipses = 0, max_ellipses = 0;
    double lesion_prob = 0.0, noise_sigma = 0.0;
    std::string modalities;
    std::vector<std::string> tables;
    CLI::App* cmd = nullptr;
};

void add_gen_data(CLI::App& app, GenDataArgs& a) {
    a.cmd = app.add_subcommand("gen-data", "Render a synthetic multimodal phantom pack");
    a.cmd->add_option("--config", a.config, "Config file");
    a.cmd->add_option("--out", a.out, "Output pack file");
    a.cmd->add_option("--seed", a.seed, "Generator seed");
    a.cmd->add_option("--size", a.size, "Square image size, multiple of 16");
    a.cmd->add_option("--subjects", a.subjects, "Subjects to render");
    a.cmd->add_option("--slices", a.slices, "Slices per subject");
    a.cmd->add_option("--min-ellipses", a.min_ellipses, "Fewest nested shells");
    a.cmd->add_option("--max-ellipses", a.max_ellipses, "Most nested shells");
    a.cmd->add_option("--lesion-prob", a.lesion_prob, "Lesion probability");
    a.cmd->add_option("--noise-sigma", a.noise_sigma, "Additive noise sigma");
    a.cmd->add_option("--modalities", a.modalities, "Comma-separated modality names");
    a.cmd->add_option("--table", a.tables, "Transfer table override, name=v0,v1,... (repeatable)");
}

int run_gen_data(const GenDataArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
    if (a.cmd->count("--out")) cfg.paths.out = a.out;
    if (a.cmd->count("--seed")) cfg.phantom.seed = a.seed;
    if (a.cmd->count("--size")) cfg.phantom.size = a.size;
    if (a.cmd->count("--subjects")) cfg.gen.subjects = a.subjects;
    if (a.cmd->count("--slices")) cfg.gen.slices = a.slices;
    if (a.cmd->count("--min-ellipses")) cfg.phantom.min_ellipses = a.min_ellipses;
    if (a.cmd->count("--max-ellipses")) cfg.phantom.max_ellipses = a.max_ellipses;
    if (a.cmd->count("--lesion-prob")) cfg.phantom.lesion_prob = a.lesion_prob;
    if (a.cmd->count("--noise-sigma")) cfg.phantom.noise_sigma = a.noise_sigma;
    if (a.cmd->count("--modalities") || a.cmd->count("--table")) {
        if (a.cmd->count("--modalities")) {
            cfg.phantom.modality_names = split_names(a.modalities);
            if (cfg.phantom.modality_names.empty()) usage_error("--modalities names no modality");
        }
        std::map<std::string, std::vector<double>> explicit_tables;
        if (!a.config.empty())  // keep tables the config file already resolved, by position
            for (std::size_t i = 0; i < cfg.phantom.modality_names.size() &&
                                    i < cfg.phantom.transfer_tables.size();
                 ++i)
                explicit_tables[cfg.phantom.modality_names[i]] = cfg.phantom.transfer_tables[i];
        for (const std::string& t : a.tables) {
            auto [name, values] = parse_table_flag(t);
            explicit_tables[name] = std::move(values);
        }
        cfg.phantom.transfer_tables =
            resolve_transfer_tables(cfg.phantom.modality_names, explicit_tables);
    }
    if (cfg.paths.out.empty()) usage_error("missing --out");

    validate(cfg.phantom);
    const SlicePack pack = generate_phantom(cfg.phantom, cfg.gen.subjects, cfg.gen.slices);
    save_slicepack(cfg.paths.out, pack);
    write_manifest_csv(cfg.paths.out + ".manifest.csv", pack);
    std::cerr << "wrote " << pack.slices.size() << " slices to " << cfg.paths.out << "\n";
    std::cout << "slices=" << pack.slices.size() << " modalities=" << pack.modalities()
              << " size=" << pack.height << " file=" << cfg.paths.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// import

struct ImportArgs {
    std::string root, out, modalities;
    double lo = 0.0, hi = 0.0, clip_percent = 0.0;
    CLI::App* cmd = nullptr;
};

void add_import(CLI::App& app, ImportArgs& a) {
    a.cmd = app.add_subcommand("import", "Build a pack from <root>/<subject>/<slice>_<mod>.png");
    a.cmd->add_option("--root", a.root, "Directory of subject subdirectories");
    a.cmd->add_option("--out", a.out, "Output pack file");
    a.cmd->add_option("--modalities", a.modalities, "Comma-separated modality names");
    a.cmd->add_option("--lo", a.lo, "Shared lower scaling bound");
    a.cmd->add_option("--hi", a.hi, "Shared upper scaling bound");
    a.cmd->add_option("--clip-percent", a.clip_percent, "Percentile clipping, [0,50)");
}

int run_import(const ImportArgs& a) {
    if (a.root.empty()) usage_error("missing --root");
    if (a.out.empty()) usage_error("missing --out");
    const std::vector<std::string> names = split_names(a.modalities);
    if (names.empty()) usage_error("missing --modalities");
    ImportOptions options;
    if (a.cmd->count("--lo")) options.lo = a.lo;
    if (a.cmd->count("--hi")) options.hi = a.hi;
    options.clip_percent = a.clip_percent;
    const SlicePack pack = import_pngs(a.root, names, options);
    save_slicepack(a.out, pack);
    write_manifest_csv(a.out + ".manifest.csv", pack);
    std::cerr << "imported " << pack.slices.size() << " slices from " << a.root << "\n";
    std::cout << "slices=" << pack.slices.size() << " modalities=" << pack.modalities()
              << " file=" << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config, data, out, resume, me_mode;
    int epochs = 0, batch = 0, channels = 0, depth = 0, heads = 0;
    int checkpoint_every = 0, max_steps = 0, val_max_slices = 0, min_foreground = 0;
    double lr_g = 0.0, lr_d = 0.0, alpha = 0.0, beta = 0.0, gamma = 0.0;
    double lambda1 = 0.0, lambda2 = 0.0, clip_norm = 0.0;
    double train_frac = 0.0, val_frac = 0.0, test_frac = 0.0;
    std::uint64_t seed = 0, split_seed = 0;
    bool me_classic = false, disen_detach = false, deterministic = true;
    CLI::App* cmd = nullptr;
};

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
    a.cmd = cmd;
    a.cmd->add_option("--config", a.config, "Config file");
    a.cmd->add_option("--data", a.data, "Training pack");
    a.cmd->add_option("--out", a.out, "Run directory");
    a.cmd->add_option("--resume", a.resume, "Checkpoint to continue from");
    a.cmd->add_option("--me-mode", a.me_mode,
                      "single, consecutive, learnable, or learnable-high-rec");
    a.cmd->add_option("--epochs", a.epochs, "Training epochs");
    a.cmd->add_option("--batch", a.batch, "Batch size");
    a.cmd->add_option("--lr-g", a.lr_g, "Generator learning rate");
    a.cmd->add_option("--lr-d", a.lr_d, "Discriminator learning rate");
    a.cmd->add_option("--alpha", a.alpha, "Reconstruction weight");
    a.cmd->add_option("--beta", a.beta, "Disentanglement weight");
    a.cmd->add_option("--gamma", a.gamma, "Cycle weight");
    a.cmd->add_option("--lambda1", a.lambda1, "Adversarial weight");
    a.cmd->add_option("--lambda2", a.lambda2, "Auxiliary classification weight");
    a.cmd->add_option("--me-classic", a.me_classic, "Classic cosine exponent (true/false)");
    a.cmd->add_option("--channels", a.channels, "Feature channels");
    a.cmd->add_option("--depth", a.depth, "Transformer layers");
    a.cmd->add_option("--heads", a.heads, "Attention heads");
    a.cmd->add_option("--seed", a.seed, "Training seed");
    a.cmd->add_option("--checkpoint-every", a.checkpoint_every, "Epochs between checkpoints");
    a.cmd->add_option("--clip-norm", a.clip_norm, "Gradient clipping norm, 0 disables");
    a.cmd->add_option("--disen-detach", a.disen_detach,
                      "Stop gradients on the reference feature branch (true/false)");
    a.cmd->add_option("--max-steps-per-epoch", a.max_steps, "Step cap per epoch, 0 = full pass");
    a.cmd->add_option("--val-max-slices", a.val_max_slices, "Validation slice cap, 0 = all");
    a.cmd->add_option("--deterministic", a.deterministic,
                      "Log wall_ms as 0 for byte-comparable runs (true/false)");
    a.cmd->add_option("--min-foreground", a.min_foreground, "Usable-slice filter threshold");
    a.cmd->add_option("--train-frac", a.train_frac, "Subject fraction for training");
    a.cmd->add_option("--val-frac", a.val_frac, "Subject fraction for validation");
    a.cmd->add_option("--test-frac", a.test_frac, "Subject fraction held out");
    a.cmd->add_option("--split-seed", a.split_seed, "Subject split seed");
}

RunConfig effective_train_config(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
    if (a.cmd->count("--data")) cfg.paths.data = a.data;
    if (a.cmd->count("--out")) cfg.paths.out = a.out;
    if (a.cmd->count("--resume")) cfg.paths.resume = a.resume;
    if (a.cmd->count("--me-mode")) {
        const auto mode = parse_me_mode(a.me_mode);
        if (!mode) usage_error("--me-mode: unknown mode '" + a.me_mode + "'");
        cfg.train.mode = *mode;
    }
    if (a.cmd->count("--epochs")) cfg.train.epochs = a.epochs;
    if (a.cmd->count("--batch")) cfg.train.batch = a.batch;
    if (a.cmd->count("--lr-g")) cfg.train.lr_g = a.lr_g;
    if (a.cmd->count("--lr-d")) cfg.train.lr_d = a.lr_d;
    if (a.cmd->count("--alpha")) cfg.train.weights.alpha = a.alpha;
    if (a.cmd->count("--beta")) cfg.train.weights.beta = a.beta;
    if (a.cmd->count("--gamma")) cfg.train.weights.gamma = a.gamma;
    if (a.cmd->count("--lambda1")) cfg.train.weights.lambda1 = a.lambda1;
    if (a.cmd->count("--lambda2")) cfg.train.weights.lambda2 = a.lambda2;
    if (a.cmd->count("--me-classic")) cfg.train.me_classic = a.me_classic;
    if (a.cmd->count("--channels")) cfg.train.channels = a.channels;
    if (a.cmd->count("--depth")) cfg.train.depth = a.depth;
    if (a.cmd->count("--heads")) cfg.train.heads = a.heads;
    if (a.cmd->count("--seed")) cfg.train.seed = a.seed;
    if (a.cmd->count("--checkpoint-every")) cfg.train.checkpoint_every = a.checkpoint_every;
    if (a.cmd->count("--clip-norm")) cfg.train.clip_norm = a.clip_norm;
    if (a.cmd->count("--disen-detach")) cfg.train.disen_detach = a.disen_detach;
    if (a.cmd->count("--max-steps-per-epoch")) cfg.train.max_steps_per_epoch = a.max_steps;
    if (a.cmd->count("--val-max-slices")) cfg.train.val_max_slices = a.val_max_slices;
    if (a.cmd->count("--deterministic")) cfg.train.deterministic = a.deterministic;
    if (a.cmd->count("--min-foreground")) cfg.gen.min_foreground = a.min_foreground;
    if (a.cmd->count("--train-frac")) cfg.split.train_frac = a.train_frac;
    if (a.cmd->count("--val-frac")) cfg.split.val_frac = a.val_frac;
    if (a.cmd->count("--test-frac")) cfg.split.test_frac = a.test_frac;
    if (a.cmd->count("--split-seed")) cfg.split.seed = a.split_seed;
    return cfg;
}

int run_train(const TrainArgs& a) {
    RunConfig cfg = effective_train_config(a);
    if (cfg.paths.out.empty()) usage_error("missing --out");
    const SlicePack raw = load_pack_checked(cfg.paths.data);
    const SlicePack usable = filter_slices(raw, cfg.gen.min_foreground);
    if (usable.slices.empty()) throw ExitWith{5, "no usable slices after filtering"};
    const SplitPacks parts = split_subjects(usable, cfg.split.train_frac, cfg.split.val_frac,
                                            cfg.split.test_frac, cfg.split.seed);
    cfg.train.out_dir = cfg.paths.out;
    cfg.train.resume = cfg.paths.resume;
    std::cerr << "training on " << parts.train.slices.size() << " slices, validating on "
              << parts.val.slices.size() << ", holding out " << parts.test.slices.size() << "\n";
    const FitResult result = fit(parts.train, parts.val, cfg.train);
    {
        // The effective config rides along in the run manifest.
        std::ofstream manifest(cfg.paths.out + "/run_manifest.txt", std::ios::app);
        manifest << "\n" << render_config(cfg);
    }
    std::cout << "epochs_run=" << result.epochs_run << " best_epoch=" << result.best_epoch
              << " best_val=" << std::setprecision(17) << result.best_val
              << " final_val=" << result.final_val << " ckpt=" << result.best_checkpoint << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeArgs {
    std::string ckpt, input, out, source, target;
    CLI::App* cmd = nullptr;
};

void add_synthesize(CLI::App& app, SynthesizeArgs& a) {
    a.cmd = app.add_subcommand("synthesize", "Translate slices into other modalities as PNGs");
    a.cmd->add_option("--ckpt", a.ckpt, "Model checkpoint");
    a.cmd->add_option("--input", a.input, "Slice pack or a single grayscale PNG");
    a.cmd->add_option("--source", a.source, "Source modality (name or index)");
    a.cmd->add_option("--target", a.target, "Target modality (name, index, or all)");
    a.cmd->add_option("--out", a.out, "Output directory");
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int run_synthesize(const SynthesizeArgs& a) {
    if (a.input.empty()) usage_error("missing --input");
    if (a.out.empty()) usage_error("missing --out");
    if (a.source.empty()) usage_error("missing --source");
    if (a.target.empty()) usage_error("missing --target");
    const Model model = load_model_checked(a.ckpt);
    const int m_count = model.g.cfg.modalities;
    std::filesystem::create_directories(a.out);

    std::vector<std::string> names;  // empty for PNG input: indices only
    SlicePack pack;
    if (ends_with(a.input, ".png")) {
        const GrayImage img = read_gray_png(a.input);
        const double peak = img.bit_depth == 16 ? 65535.0 : 255.0;
        Slice s;
        s.planes.assign(static_cast<std::size_t>(m_count), {});
        std::vector<double> plane(img.pixels.size());
        for (std::size_t i = 0; i < plane.size(); ++i)
            plane[i] = rescale_value(img.pixels[i], 0.0, peak);
        const int src = resolve_modality(a.source, names, m_count, "--source");
        s.planes[static_cast<std::size_t>(src)] = std::move(plane);
        pack.height = img.height;
        pack.width = img.width;
        pack.slices.push_back(std::move(s));
    } else {
        pack = load_pack_checked(a.input);
        check_pack_matches_model(pack, model.g.cfg);
        names = pack.modality_names;
    }

    const int src = resolve_modality(a.source, names, m_count, "--source");
    std::vector<int> targets;
    if (a.target == "all") {
        for (int m = 0; m < m_count; ++m)
            if (m != src) targets.push_back(m);
    } else {
        targets.push_back(resolve_modality(a.target, names, m_count, "--target"));
    }

    const auto label = [&](int m) {
        return names.empty() ? "m" + std::to_string(m) : names[static_cast<std::size_t>(m)];
    };
    int written = 0;
    for (const Slice& s : pack.slices) {
        const auto& plane = s.planes[static_cast<std::size_t>(src)];
        if (plane.empty()) continue;
        const Tensor x = Tensor::from_data({1, pack.height, pack.width}, plane);
        for (int m_y : targets) {
            const Tensor out = translate(x, m_y, model.g);
            const std::string path = a.out + "/s" + std::to_string(s.subject) + "_i" +
                                     std::to_string(s.slice_index) + "_" + label(src) + "_to_" +
                                     label(m_y) + ".png";
            write_image_png(path, out, pack.height, pack.width);
            ++written;
        }
    }
    std::cerr << "wrote " << written << " images to " << a.out << "\n";
    std::cout << "written=" << written << " dir=" << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string config, ckpt, data, out, slice_csv;
    SplitChoice split;
    bool identity = false;
    CLI::App* cmd = nullptr;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
    a.cmd = app.add_subcommand("evaluate", "Score every directed modality pair of a pack");
    a.cmd->add_option("--config", a.config, "Config file (split fractions)");
    a.cmd->add_option("--ckpt", a.ckpt, "Model checkpoint");
    a.cmd->add_option("--data", a.data, "Evaluation pack");
    a.cmd->add_option("--out", a.out, "Report CSV path");
    a.cmd->add_option("--slice-csv", a.slice_csv, "Optional per-slice CSV path");
    a.cmd->add_option("--split", a.split.which, "Evaluate one subject split: train, val, or test");
    a.cmd->add_flag("--identity", a.identity, "Score the copy-input baseline instead of a model");
}

int run_evaluate(const EvaluateArgs& a) {
    if (a.out.empty()) usage_error("missing --out");
    const RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
    SlicePack pack = apply_split(load_pack_checked(a.data), cfg.split, a.split);
    if (pack.slices.empty()) throw ExitWith{5, "pack is empty"};

    MetricsReport report;
    if (a.identity) {
        report = evaluate_pack_fn([](const Tensor& x, int) { return x; }, pack);
    } else {
        const Model model = load_model_checked(a.ckpt);
        check_pack_matches_model(pack, model.g.cfg);
        report = evaluate_pack(model.g, pack);
    }
    write_metrics_csv(a.out, report);
    if (!a.slice_csv.empty())
        write_slice_metrics_csv(a.slice_csv, report, pack.modality_names);
    std::cerr << "wrote " << report.pairs.size() << " pair rows to " << a.out << "\n";
    std::cout << "pairs=" << report.pairs.size() << " samples=" << report.samples.size()
              << " l1x1000=" << std::setprecision(17) << report.grand.l1_mean
              << " psnr=" << report.grand.psnr_mean << " ssim=" << report.grand.ssim_mean
              << " msssim=" << report.grand.ms_mean << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// visualize-features

struct VisualizeArgs {
    std::string ckpt, data, out, png;
    int max_slices = 0;
    int pca_dims = 50;
    CLI::App* cmd = nullptr;
};

void add_visualize(CLI::App& app, VisualizeArgs& a) {
    a.cmd = app.add_subcommand("visualize-features",
                               "Project encoder and infuser features to 2D by PCA");
    a.cmd->add_option("--ckpt", a.ckpt, "Model checkpoint");
    a.cmd->add_option("--data", a.data, "Slice pack");
    a.cmd->add_option("--out", a.out, "Feature CSV path");
    a.cmd->add_option("--png", a.png, "Optional scatter PNG path");
    a.cmd->add_option("--max-slices", a.max_slices, "Slice cap, 0 = all");
    a.cmd->add_option("--pca-dims", a.pca_dims, "Projection dimensions kept before plotting");
}

// Gray levels per label: agnostic darkest, conditioned clusters spread apart.
void write_scatter_png(const std::string& path, const FeatureCloud& cloud) {
    const int side = 512, margin = 24, radius = 2;
    std::vector<std::uint8_t> canvas(static_cast<std::size_t>(side) * side, 255);
    double lo_x = cloud.x[0], hi_x = cloud.x[0], lo_y = cloud.y[0], hi_y = cloud.y[0];
    for (std::size_t i = 0; i < cloud.x.size(); ++i) {
        lo_x = std::min(lo_x, cloud.x[i]);
        hi_x = std::max(hi_x, cloud.x[i]);
        lo_y = std::min(lo_y, cloud.y[i]);
        hi_y = std::max(hi_y, cloud.y[i]);
    }
    if (hi_x == lo_x) hi_x = lo_x + 1.0;
    if (hi_y == lo_y) hi_y = lo_y + 1.0;
    std::map<std::string, int> level;
    for (const std::string& label : cloud.labels)
        if (!level.count(label)) level[label] = 0;
    int next = 0;
    for (auto& [label, value] : level)
        value = level.size() == 1 ? 0 : (next++ * 180) / static_cast<int>(level.size() - 1);
    const auto place = [&](double v, double lo, double hi) {
        return margin +
               static_cast<int>(std::lround((v - lo) / (hi - lo) * (side - 2 * margin)));
    };
    for (std::size_t i = 0; i < cloud.x.size(); ++i) {
        const int cx = place(cloud.x[i], lo_x, hi_x);
        const int cy = side - 1 - place(cloud.y[i], lo_y, hi_y);
        const auto shade = static_cast<std::uint8_t>(level[cloud.labels[i]]);
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx) {
                const int px = cx + dx, py = cy + dy;
                if (px >= 0 && px < side && py >= 0 && py < side)
                    canvas[static_cast<std::size_t>(py) * side + px] = shade;
            }
    }
    write_gray_png8(path, side, side, canvas);
}

int run_visualize(const VisualizeArgs& a) {
    if (a.out.empty()) usage_error("missing --out");
    const Model model = load_model_checked(a.ckpt);
    const SlicePack pack = load_pack_checked(a.data);
    check_pack_matches_model(pack, model.g.cfg);
    const std::size_t cap = a.max_slices > 0 ? static_cast<std::size_t>(a.max_slices)
                                             : pack.slices.size();
    const std::size_t rows = std::min(cap, pack.slices.size()) *
                             (static_cast<std::size_t>(pack.modalities()) + 1);
    if (a.pca_dims < 2) usage_error("--pca-dims must be at least 2");
    if (rows < static_cast<std::size_t>(a.pca_dims))
        throw ExitWith{6, "PCA needs at least " + std::to_string(a.pca_dims) +
                              " feature rows, got " + std::to_string(rows) +
                              "; add slices or lower --pca-dims"};
    FeatureCloud raw = collect_feature_rows(model.g, pack, cap);
    const FeatureCloud cloud = pca_project(std::move(raw.labels), std::move(raw.rows), a.pca_dims);
    write_feature_csv(a.out, cloud);
    if (!a.png.empty()) write_scatter_png(a.png, cloud);

    // Cluster score over the conditioned rows only; the agnostic cloud sits
    // between the clusters by construction.
    std::vector<double> x, y;
    std::vector<int> cluster;
    for (std::size_t i = 0; i < cloud.labels.size(); ++i) {
        if (cloud.labels[i] == "agnostic") continue;
        for (int m = 0; m < pack.modalities(); ++m)
            if (cloud.labels[i] == pack.modality_names[static_cast<std::size_t>(m)]) {
                x.push_back(cloud.x[i]);
                y.push_back(cloud.y[i]);
                cluster.push_back(m);
            }
    }
    const double score = silhouette(x, y, cluster);
    std::cerr << "projected " << cloud.labels.size() << " rows to " << a.out << "\n";
    std::cout << "rows=" << cloud.labels.size() << " silhouette=" << std::setprecision(17)
              << score << " csv=" << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
    std::string modes = "single,consecutive,learnable,learnable-high-rec";
    TrainArgs train;
};

void add_ablate(CLI::App& app, AblateArgs& a) {
    add_train_flags(app.add_subcommand("ablate", "Train once per modality-encoding mode"),
                    a.train);
    a.train.cmd->add_option("--modes", a.modes, "Comma-separated modality-encoding modes");
}

int run_ablate(const AblateArgs& a) {
    RunConfig cfg = effective_train_config(a.train);
    if (cfg.paths.out.empty()) usage_error("missing --out");
    std::vector<MEMode> grid;
    for (const std::string& name : split_names(a.modes)) {
        const auto mode = parse_me_mode(name);
        if (!mode) usage_error("--modes: unknown mode '" + name + "'");
        grid.push_back(*mode);
    }
    if (grid.empty()) usage_error("--modes names no mode");
    const SlicePack raw = load_pack_checked(cfg.paths.data);
    const SlicePack usable = filter_slices(raw, cfg.gen.min_foreground);
    if (usable.slices.empty()) throw ExitWith{5, "no usable slices after filtering"};
    const SplitPacks parts = split_subjects(usable, cfg.split.train_frac, cfg.split.val_frac,
                                            cfg.split.test_frac, cfg.split.seed);
    cfg.train.out_dir = cfg.paths.out;
    cfg.train.resume.clear();
    const std::vector<AblationRow> rows = run_ablation(parts.train, parts.val, cfg.train, grid);
    std::cerr << "ablation over " << rows.size() << " modes in " << cfg.paths.out << "\n";
    std::cout << "modes=" << rows.size() << " csv=" << cfg.paths.out << "/ablation.csv\n";
    return 0;
}

// ---------------------------------------------------------------------------

int dispatch(int argc, char** argv) {
    // All module loops are sequential; a thread cap is honored by running
    // exactly one worker, but the value must still be a positive integer.
    if (const char* cap = std::getenv("MF_THREADS")) {
        errno = 0;
        char* end = nullptr;
        const long v = std::strtol(cap, &end, 10);
        if (*cap == '\0' || *end != '\0' || errno == ERANGE || v < 1)
            usage_error("MF_THREADS must be a positive integer, got '" + std::string(cap) + "'");
    }

    CLI::App app{"Unified multimodal image translation"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    add_gen_data(app, gen_args);
    ImportArgs import_args;
    add_import(app, import_args);
    TrainArgs train_args;
    add_train_flags(app.add_subcommand("train", "Fit the translator and discriminator on a pack"),
                    train_args);
    SynthesizeArgs synth_args;
    add_synthesize(app, synth_args);
    EvaluateArgs eval_args;
    add_evaluate(app, eval_args);
    VisualizeArgs vis_args;
    add_visualize(app, vis_args);
    AblateArgs ablate_args;
    add_ablate(app, ablate_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 64;
    }

    if (gen_args.cmd->parsed()) return run_gen_data(gen_args);
    if (import_args.cmd->parsed()) return run_import(import_args);
    if (train_args.cmd->parsed()) return run_train(train_args);
    if (synth_args.cmd->parsed()) return run_synthesize(synth_args);
    if (eval_args.cmd->parsed()) return run_evaluate(eval_args);
    if (vis_args.cmd->parsed()) return run_visualize(vis_args);
    if (ablate_args.train.cmd->parsed()) return run_ablate(ablate_args);
    usage_error("no command given");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ExitWith& e) {
        std::cerr << "error: " << e.msg << "\n";
        return e.code;
    } catch (const TrainAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
