#pragma once

// Synthetic multimodal phantom generation, PNG ingestion, preprocessing, and
// the SlicePack container that carries image sets between the tools.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "modfuser/tensor.hpp"

namespace modfuser {

// Invalid generation specs, degenerate ranges, and bad split requests.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// The background renders at exactly -1; anything strictly above this value
// counts as foreground.
inline constexpr double kForegroundThreshold = -1.0 + 1e-6;

std::uint32_t count_foreground(const std::vector<double>& plane);

struct Slice {
    std::uint32_t subject = 0;
    std::uint32_t slice_index = 0;
    std::uint32_t foreground = 0;             // recount of planes[0] above threshold
    std::vector<std::vector<double>> planes;  // [modality][height*width], in [-1, 1]
};

struct SlicePack {
    std::vector<std::string> modality_names;
    int height = 0;
    int width = 0;
    std::vector<Slice> slices;

    int modalities() const { return static_cast<int>(modality_names.size()); }
};

// Phantom anatomy: nested ellipse shells plus one optional lesion ellipse.
// Tissue classes index the transfer tables: entry 0 is background, entries
// 1..max_ellipses are the shells from outermost in, the last entry is the
// lesion. Each table must start at -1 and be strictly monotone over the
// non-background entries; tables for different modalities may coincide.
struct PhantomSpec {
    std::uint64_t seed = 1;
    int size = 64;  // square images; must be a positive multiple of 16
    int min_ellipses = 3;
    int max_ellipses = 4;
    double lesion_prob = 0.35;
    double noise_sigma = 0.03;
    std::vector<std::string> modality_names = {"m0", "m1", "m2", "m3"};
    std::vector<std::vector<double>> transfer_tables = default_transfer_tables();

    static std::vector<std::vector<double>> default_transfer_tables();
};

void validate(const PhantomSpec& spec);

// Deterministic in (spec.seed, subject, slice); all modality planes of a
// slice share one label map, so the renderings are pixel-aligned.
SlicePack generate_phantom(const PhantomSpec& spec, int n_subjects, int slices_per_subject);

// Affine map sending [lo, hi] to [-1, 1]; values outside the range clamp.
double rescale_value(double v, double lo, double hi);
Tensor rescale_intensities(const Tensor& raw, double lo, double hi);

// Keeps slices whose stored foreground count is at least min_pixels;
// order-preserving and idempotent.
SlicePack filter_slices(const SlicePack& pack, int min_pixels = 2000);

struct SplitPacks {
    SlicePack train;
    SlicePack val;
    SlicePack test;
};

// Splits by subject so no subject contributes slices to two packs. Subject
// counts follow the fractions by largest remainder; a nonzero fraction that
// would receive zero subjects is an error.
SplitPacks split_subjects(const SlicePack& pack, double train_frac, double val_frac,
                          double test_frac, std::uint64_t seed);

void save_slicepack(const std::string& path, const SlicePack& pack);
SlicePack load_slicepack(const std::string& path);

// CSV with header subject,slice,foreground and one row per slice.
void write_manifest_csv(const std::string& path, const SlicePack& pack);

struct ImportOptions {
    // Shared scaling bounds; when unset each (subject, modality) volume is
    // scaled by its own min/max, optionally tightened by percentile clipping.
    std::optional<double> lo;
    std::optional<double> hi;
    double clip_percent = 0.0;  // [0, 50): clip to [p, 100-p] percentiles
};

// Reads <root>/<subject dir>/<slice>_<modality>.png for every modality name,
// where <slice> is a decimal index shared by all modalities of that slice.
SlicePack import_pngs(const std::string& root, const std::vector<std::string>& modality_names,
                      const ImportOptions& options = {});

}  // namespace modfuser
