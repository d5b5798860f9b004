#pragma once

// Flat key=value run configuration with [section] grouping. One file can
// drive data generation, subject splitting, and training; the CLI overlays
// flag values on top of whatever the file set.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "modfuser/data.hpp"
#include "modfuser/train.hpp"

namespace modfuser {

// Malformed config text: unknown sections or keys, duplicates, bad values.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Subject-level fractions for carving one pack into train/val/test.
struct SplitConfig {
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    std::uint64_t seed = 5;
};

// How much the data generator renders and the usability filter it applies.
struct GenConfig {
    int subjects = 40;
    int slices = 16;          // per subject
    int min_foreground = 2000;
};

struct PathsConfig {
    std::string data;    // slice pack file
    std::string out;     // output directory or file, command-dependent
    std::string ckpt;    // model checkpoint
    std::string resume;  // checkpoint to continue training from
};

struct RunConfig {
    PhantomSpec phantom;
    GenConfig gen;
    SplitConfig split;
    TrainConfig train;
    PathsConfig paths;
};

// Sections and keys:
//   [phantom] seed size min_ellipses max_ellipses lesion_prob noise_sigma
//             modalities table_<name>
//   [gen]     subjects slices min_foreground
//   [split]   train_frac val_frac test_frac seed
//   [train]   epochs batch lr_g lr_d alpha beta gamma lambda1 lambda2 mode
//             me_classic channels depth heads seed checkpoint_every clip_norm
//             disen_detach max_steps_per_epoch val_max_slices deterministic
//   [paths]   data out ckpt resume
// TrainConfig's out_dir and resume are not keys; commands fill them from
// [paths] before running. A modality without a table_<name> key keeps the
// default table at its position; extra modalities must give one explicitly.
//
// Grammar: blank lines and whole-line # comments are ignored; a key outside
// any section, an unknown section or key, a duplicate key, or an unparsable
// value is a ConfigError naming the line.
RunConfig parse_config(const std::string& text);

RunConfig load_config(const std::string& path);

// Transfer tables for a modality list: an explicit per-name table wins,
// otherwise the default at the same position carries over. An explicit name
// outside the list or a position past the default set is a ConfigError.
std::vector<std::vector<double>> resolve_transfer_tables(
    const std::vector<std::string>& names,
    const std::map<std::string, std::vector<double>>& explicit_tables);

// Renders every key in canonical order; parse_config(render_config(c))
// reproduces c exactly (out_dir/resume inside c.train are not rendered).
std::string render_config(const RunConfig& cfg);

}  // namespace modfuser
