#include "modfuser/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "modfuser/binio.hpp"
#include "modfuser/png_io.hpp"
#include "modfuser/rng.hpp"

namespace modfuser {
namespace {

constexpr double kPi = 3.141592653589793238462643;

// Stream tags; the per-slice tag is the slice index itself, so these must
// stay far above any plausible slice count.
constexpr std::uint64_t kAnatomyStream = 0x616e61746f6d79ull;
constexpr std::uint64_t kSplitStream = 0x73706c6974ull;

struct Ellipse {
    double cx = 0.0, cy = 0.0, rx = 1.0, ry = 1.0;

    bool contains(double px, double py) const {
        const double dx = (px - cx) / rx;
        const double dy = (py - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
    }
};

}  // namespace

std::uint32_t count_foreground(const std::vector<double>& plane) {
    std::uint32_t n = 0;
    for (const double v : plane)
        if (v > kForegroundThreshold) ++n;
    return n;
}

std::vector<std::vector<double>> PhantomSpec::default_transfer_tables() {
    // Two tissue-brightening and two tissue-darkening maps, spaced so any two
    // modalities differ by well over 0.05 mean absolute difference on slices
    // that pass the foreground filter.
    return {
        {-1.00, -0.55, -0.10, 0.35, 0.70, 0.95},
        {-1.00, 0.90, 0.55, 0.20, -0.15, -0.50},
        {-1.00, -0.80, -0.42, 0.02, 0.40, 0.78},
        {-1.00, 0.55, 0.18, -0.12, -0.42, -0.72},
    };
}

void validate(const PhantomSpec& spec) {
    if (spec.size <= 0 || spec.size % 16 != 0)
        throw DataError("phantom spec: size must be a positive multiple of 16, got " +
                        std::to_string(spec.size));
    if (spec.min_ellipses < 1)
        throw DataError("phantom spec: min_ellipses must be at least 1");
    if (spec.max_ellipses < spec.min_ellipses)
        throw DataError("phantom spec: max_ellipses below min_ellipses");
    if (!(spec.lesion_prob >= 0.0 && spec.lesion_prob <= 1.0))
        throw DataError("phantom spec: lesion_prob must lie in [0, 1]");
    if (!(spec.noise_sigma >= 0.0))
        throw DataError("phantom spec: noise_sigma must be non-negative");
    if (spec.modality_names.empty())
        throw DataError("phantom spec: at least one modality name required");
    std::set<std::string> seen;
    for (const auto& name : spec.modality_names) {
        if (name.empty()) throw DataError("phantom spec: empty modality name");
        if (!seen.insert(name).second)
            throw DataError("phantom spec: duplicate modality name " + name);
    }
    if (spec.transfer_tables.size() != spec.modality_names.size())
        throw DataError("phantom spec: need one transfer table per modality, got " +
                        std::to_string(spec.transfer_tables.size()) + " tables for " +
                        std::to_string(spec.modality_names.size()) + " modalities");
    const std::size_t classes = static_cast<std::size_t>(spec.max_ellipses) + 2;
    for (std::size_t m = 0; m < spec.transfer_tables.size(); ++m) {
        const auto& table = spec.transfer_tables[m];
        const std::string where = "transfer table for " + spec.modality_names[m];
        if (table.size() != classes)
            throw DataError("phantom spec: " + where + " must have " + std::to_string(classes) +
                            " entries (background + shells + lesion), got " +
                            std::to_string(table.size()));
        if (table[0] != -1.0)
            throw DataError("phantom spec: " + where + " must map background to -1");
        for (const double v : table)
            if (!(v >= -1.0 && v <= 1.0))
                throw DataError("phantom spec: " + where + " has an entry outside [-1, 1]");
        const double first = table[2] - table[1];
        if (first == 0.0)
            throw DataError("phantom spec: " + where + " must be strictly monotone over tissue");
        for (std::size_t i = 2; i + 1 < table.size(); ++i)
            if ((table[i + 1] - table[i]) * first <= 0.0)
                throw DataError("phantom spec: " + where + " must be strictly monotone over tissue");
    }
}

SlicePack generate_phantom(const PhantomSpec& spec, int n_subjects, int slices_per_subject) {
    validate(spec);
    if (n_subjects <= 0 || slices_per_subject <= 0)
        throw DataError("generate_phantom: subject and slice counts must be positive");

    const int size = spec.size;
    const int m = static_cast<int>(spec.modality_names.size());
    const int lesion_class = spec.max_ellipses + 1;
    const std::size_t pixels = static_cast<std::size_t>(size) * size;

    SlicePack pack;
    pack.modality_names = spec.modality_names;
    pack.height = size;
    pack.width = size;
    pack.slices.reserve(static_cast<std::size_t>(n_subjects) * slices_per_subject);

    for (int s = 0; s < n_subjects; ++s) {
        Rng anatomy(mix_seed(spec.seed, static_cast<std::uint64_t>(s), kAnatomyStream));
        const int n_shells =
            spec.min_ellipses + anatomy.uniform_int(spec.max_ellipses - spec.min_ellipses + 1);
        const double cx0 = anatomy.uniform(0.46, 0.54) * size;
        const double cy0 = anatomy.uniform(0.46, 0.54) * size;
        const double rx0 = anatomy.uniform(0.43, 0.47) * size;
        const double ry0 = anatomy.uniform(0.43, 0.47) * size;
        // Inner shells wobble off-center; the outermost stays the envelope.
        std::vector<double> wobble_x(static_cast<std::size_t>(n_shells) + 1, 0.0);
        std::vector<double> wobble_y(static_cast<std::size_t>(n_shells) + 1, 0.0);
        for (int k = 2; k <= n_shells; ++k) {
            wobble_x[static_cast<std::size_t>(k)] = anatomy.uniform(-0.015, 0.015) * size;
            wobble_y[static_cast<std::size_t>(k)] = anatomy.uniform(-0.015, 0.015) * size;
        }

        for (int t = 0; t < slices_per_subject; ++t) {
            Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(t)));

            // Through-volume size profile: end slices shrink enough to fall
            // under the default foreground filter, middle slices pass it.
            const double profile = 0.62 + 0.38 * std::sin(kPi * (t + 0.5) / slices_per_subject);
            const double cx = cx0 + rng.uniform(-0.01, 0.01) * size;
            const double cy = cy0 + rng.uniform(-0.01, 0.01) * size;
            const double rx = rx0 * profile * rng.uniform(0.98, 1.02);
            const double ry = ry0 * profile * rng.uniform(0.98, 1.02);

            std::vector<Ellipse> shells(static_cast<std::size_t>(n_shells) + 1);
            for (int k = 1; k <= n_shells; ++k) {
                const double f = 1.0 - 0.72 * (k - 1) / n_shells;
                shells[static_cast<std::size_t>(k)] = {cx + wobble_x[static_cast<std::size_t>(k)],
                                                       cy + wobble_y[static_cast<std::size_t>(k)],
                                                       rx * f, ry * f};
            }

            const bool has_lesion = rng.uniform() < spec.lesion_prob;
            Ellipse lesion;
            if (has_lesion) {
                const double angle = rng.uniform(0.0, 2.0 * kPi);
                const double dist = rng.uniform(0.15, 0.45) * std::min(rx, ry);
                const double radius = rng.uniform(0.10, 0.18) * std::min(rx, ry);
                const double aspect = rng.uniform(0.7, 1.3);
                lesion = {cx + dist * std::cos(angle), cy + dist * std::sin(angle),
                          radius * aspect, radius / aspect};
            }

            // One label map shared by all modalities keeps them pixel-aligned.
            std::vector<int> labels(pixels, 0);
            for (int y = 0; y < size; ++y) {
                const double py = y + 0.5;
                for (int x = 0; x < size; ++x) {
                    const double px = x + 0.5;
                    int label = 0;
                    for (int k = 1; k <= n_shells; ++k)
                        if (shells[static_cast<std::size_t>(k)].contains(px, py)) label = k;
                    if (label > 0 && has_lesion && lesion.contains(px, py)) label = lesion_class;
                    labels[static_cast<std::size_t>(y) * size + x] = label;
                }
            }

            Slice slice;
            slice.subject = static_cast<std::uint32_t>(s);
            slice.slice_index = static_cast<std::uint32_t>(t);
            slice.planes.resize(static_cast<std::size_t>(m));
            for (int mi = 0; mi < m; ++mi) {
                auto& plane = slice.planes[static_cast<std::size_t>(mi)];
                plane.resize(pixels);
                const auto& table = spec.transfer_tables[static_cast<std::size_t>(mi)];
                for (std::size_t i = 0; i < pixels; ++i) {
                    double v = table[static_cast<std::size_t>(labels[i])];
                    if (labels[i] > 0 && spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
                    plane[i] = std::clamp(v, -1.0, 1.0);
                }
            }
            slice.foreground = count_foreground(slice.planes[0]);
            pack.slices.push_back(std::move(slice));
        }
    }
    return pack;
}

double rescale_value(double v, double lo, double hi) {
    const double scaled = (v - lo) / (hi - lo) * 2.0 - 1.0;
    return std::clamp(scaled, -1.0, 1.0);
}

Tensor rescale_intensities(const Tensor& raw, double lo, double hi) {
    if (!raw.defined()) throw DataError("rescale_intensities: undefined tensor");
    if (!(hi > lo))
        throw DataError("rescale_intensities: degenerate range [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
    std::vector<double> out(raw.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rescale_value(raw.data()[i], lo, hi);
    return Tensor::from_data(raw.shape(), std::move(out));
}

SlicePack filter_slices(const SlicePack& pack, int min_pixels) {
    SlicePack out;
    out.modality_names = pack.modality_names;
    out.height = pack.height;
    out.width = pack.width;
    for (const auto& slice : pack.slices)
        if (static_cast<std::int64_t>(slice.foreground) >= min_pixels) out.slices.push_back(slice);
    return out;
}

SplitPacks split_subjects(const SlicePack& pack, double train_frac, double val_frac,
                          double test_frac, std::uint64_t seed) {
    const double fracs[3] = {train_frac, val_frac, test_frac};
    for (const double f : fracs)
        if (!(f >= 0.0)) throw DataError("split_subjects: fractions must be non-negative");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw DataError("split_subjects: fractions must sum to 1");

    std::vector<std::uint32_t> subjects;
    for (const auto& slice : pack.slices)
        if (std::find(subjects.begin(), subjects.end(), slice.subject) == subjects.end())
            subjects.push_back(slice.subject);
    if (subjects.empty()) throw DataError("split_subjects: pack has no slices");

    Rng rng(mix_seed(seed, kSplitStream));
    rng.shuffle(subjects);

    // Largest-remainder apportionment of subjects to the three packs.
    const int n = static_cast<int>(subjects.size());
    int counts[3];
    double remainders[3];
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double target = fracs[i] * n;
        counts[i] = static_cast<int>(std::floor(target));
        remainders[i] = target - counts[i];
        assigned += counts[i];
    }
    for (int left = n - assigned; left > 0; --left) {
        int pick = 0;
        for (int i = 1; i < 3; ++i)
            if (remainders[i] > remainders[pick]) pick = i;
        ++counts[pick];
        remainders[pick] = -1.0;
    }
    for (int i = 0; i < 3; ++i)
        if (fracs[i] > 0.0 && counts[i] == 0)
            throw DataError("split_subjects: too few subjects (" + std::to_string(n) +
                            ") for nonzero fraction " + std::to_string(fracs[i]));

    std::set<std::uint32_t> members[3];
    int offset = 0;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < counts[i]; ++j)
            members[i].insert(subjects[static_cast<std::size_t>(offset + j)]);
        offset += counts[i];
    }

    SplitPacks out;
    SlicePack* packs[3] = {&out.train, &out.val, &out.test};
    for (int i = 0; i < 3; ++i) {
        packs[i]->modality_names = pack.modality_names;
        packs[i]->height = pack.height;
        packs[i]->width = pack.width;
    }
    for (const auto& slice : pack.slices)
        for (int i = 0; i < 3; ++i)
            if (members[i].count(slice.subject)) {
                packs[i]->slices.push_back(slice);
                break;
            }
    return out;
}

namespace {

constexpr char kPackMagic[4] = {'S', 'P', 'K', '1'};

void check_pack(const SlicePack& pack) {
    if (pack.modality_names.empty()) throw FormatError("slice pack has no modalities");
    if (pack.height <= 0 || pack.width <= 0) throw FormatError("slice pack has empty geometry");
    const std::size_t pixels = static_cast<std::size_t>(pack.height) * pack.width;
    for (const auto& slice : pack.slices) {
        if (slice.planes.size() != pack.modality_names.size())
            throw FormatError("slice is missing modality planes");
        for (const auto& plane : slice.planes) {
            if (plane.size() != pixels) throw FormatError("slice plane has wrong pixel count");
            for (const double v : plane)
                if (!(v >= -1.0 && v <= 1.0))
                    throw FormatError("slice intensity outside [-1, 1]");
        }
        if (slice.foreground != count_foreground(slice.planes[0]))
            throw FormatError("stored foreground count does not match plane recount");
    }
}

}  // namespace

void save_slicepack(const std::string& path, const SlicePack& pack) {
    check_pack(pack);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    write_bytes(os, kPackMagic, 4);
    write_u32(os, static_cast<std::uint32_t>(pack.modality_names.size()));
    for (const auto& name : pack.modality_names) write_str(os, name);
    write_u32(os, static_cast<std::uint32_t>(pack.slices.size()));
    write_u32(os, static_cast<std::uint32_t>(pack.height));
    write_u32(os, static_cast<std::uint32_t>(pack.width));
    for (const auto& slice : pack.slices) {
        write_u32(os, slice.subject);
        write_u32(os, slice.slice_index);
        write_u32(os, slice.foreground);
        for (const auto& plane : slice.planes)
            for (const double v : plane) write_f64(os, v);
    }
    os.flush();
    if (!os) throw FormatError("write failed: " + path);
}

SlicePack load_slicepack(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4];
    read_bytes(is, magic, 4);
    if (!std::equal(magic, magic + 4, kPackMagic))
        throw FormatError("not a slice pack file: " + path);

    SlicePack pack;
    const std::uint32_t m = read_u32(is);
    if (m == 0 || m > 256) throw FormatError("implausible modality count in " + path);
    pack.modality_names.reserve(m);
    for (std::uint32_t i = 0; i < m; ++i) pack.modality_names.push_back(read_str(is));
    const std::uint32_t k = read_u32(is);
    const std::uint32_t h = read_u32(is);
    const std::uint32_t w = read_u32(is);
    if (h == 0 || w == 0 || h > 32768 || w > 32768)
        throw FormatError("implausible slice geometry in " + path);
    if (k > 10'000'000) throw FormatError("implausible slice count in " + path);
    pack.height = static_cast<int>(h);
    pack.width = static_cast<int>(w);
    const std::size_t pixels = static_cast<std::size_t>(h) * w;

    pack.slices.resize(k);
    for (auto& slice : pack.slices) {
        slice.subject = read_u32(is);
        slice.slice_index = read_u32(is);
        slice.foreground = read_u32(is);
        slice.planes.assign(m, std::vector<double>(pixels));
        for (auto& plane : slice.planes)
            for (auto& v : plane) v = read_f64(is);
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing data after slice pack payload: " + path);
    check_pack(pack);
    return pack;
}

void write_manifest_csv(const std::string& path, const SlicePack& pack) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "subject,slice,foreground\n";
    for (const auto& slice : pack.slices)
        os << slice.subject << ',' << slice.slice_index << ',' << slice.foreground << '\n';
    os.flush();
    if (!os) throw FormatError("write failed: " + path);
}

namespace {

// Nearest-rank quantile on a sorted volume; q in [0, 1].
double quantile(const std::vector<double>& sorted, double q) {
    const auto last = static_cast<double>(sorted.size() - 1);
    auto idx = static_cast<std::size_t>(std::llround(q * last));
    if (idx >= sorted.size()) idx = sorted.size() - 1;
    return sorted[idx];
}

}  // namespace

SlicePack import_pngs(const std::string& root, const std::vector<std::string>& modality_names,
                      const ImportOptions& options) {
    namespace fs = std::filesystem;
    if (modality_names.empty()) throw DataError("import_pngs: at least one modality name required");
    if (options.lo.has_value() != options.hi.has_value())
        throw DataError("import_pngs: lo and hi must be given together");
    if (options.lo && !(*options.hi > *options.lo))
        throw DataError("import_pngs: degenerate range [" + std::to_string(*options.lo) + ", " +
                        std::to_string(*options.hi) + "]");
    if (!(options.clip_percent >= 0.0 && options.clip_percent < 50.0))
        throw DataError("import_pngs: clip_percent must lie in [0, 50)");
    if (!fs::is_directory(root)) throw DataError("import_pngs: not a directory: " + root);

    std::vector<fs::path> subject_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) subject_dirs.push_back(entry.path());
    std::sort(subject_dirs.begin(), subject_dirs.end());
    if (subject_dirs.empty()) throw DataError("import_pngs: no subject directories under " + root);

    SlicePack pack;
    pack.modality_names = modality_names;
    const std::size_t m = modality_names.size();

    for (std::size_t subj = 0; subj < subject_dirs.size(); ++subj) {
        const fs::path& dir = subject_dirs[subj];

        // Slice keys come from the first modality's files: <digits>_<name>.png.
        const std::string suffix0 = "_" + modality_names[0] + ".png";
        std::map<std::uint32_t, std::string> keys;  // slice index -> digit prefix
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (name.size() <= suffix0.size() || name.substr(name.size() - suffix0.size()) != suffix0)
                continue;
            const std::string prefix = name.substr(0, name.size() - suffix0.size());
            if (prefix.find_first_not_of("0123456789") != std::string::npos) continue;
            const auto index = static_cast<std::uint32_t>(std::stoul(prefix));
            if (!keys.emplace(index, prefix).second)
                throw FormatError("import_pngs: duplicate slice index " + std::to_string(index) +
                                  " in " + dir.string());
        }
        if (keys.empty())
            throw FormatError("import_pngs: no files matching *" + suffix0 + " in " + dir.string());

        // raw[modality][slice position] = raw sample values
        std::vector<std::vector<std::vector<double>>> raw(m);
        std::vector<std::uint32_t> indices;
        for (const auto& [index, prefix] : keys) {
            indices.push_back(index);
            for (std::size_t mi = 0; mi < m; ++mi) {
                const fs::path file = dir / (prefix + "_" + modality_names[mi] + ".png");
                if (!fs::exists(file))
                    throw FormatError("import_pngs: missing modality file " + file.string());
                GrayImage img = read_gray_png(file.string());
                if (pack.height == 0) {
                    pack.height = img.height;
                    pack.width = img.width;
                } else if (img.height != pack.height || img.width != pack.width) {
                    throw FormatError("import_pngs: size mismatch at " + file.string() + " (" +
                                      std::to_string(img.width) + "x" + std::to_string(img.height) +
                                      " vs " + std::to_string(pack.width) + "x" +
                                      std::to_string(pack.height) + ")");
                }
                raw[mi].push_back(std::move(img.pixels));
            }
        }

        // Scaling bounds per (subject, modality) volume unless given.
        std::vector<double> lo(m), hi(m);
        for (std::size_t mi = 0; mi < m; ++mi) {
            if (options.lo) {
                lo[mi] = *options.lo;
                hi[mi] = *options.hi;
                continue;
            }
            std::vector<double> sorted;
            for (const auto& plane : raw[mi]) sorted.insert(sorted.end(), plane.begin(), plane.end());
            std::sort(sorted.begin(), sorted.end());
            lo[mi] = quantile(sorted, options.clip_percent / 100.0);
            hi[mi] = quantile(sorted, 1.0 - options.clip_percent / 100.0);
            if (!(hi[mi] > lo[mi]))
                throw DataError("import_pngs: degenerate intensity range in " + dir.string() +
                                " for modality " + modality_names[mi]);
        }

        for (std::size_t pos = 0; pos < indices.size(); ++pos) {
            Slice slice;
            slice.subject = static_cast<std::uint32_t>(subj);
            slice.slice_index = indices[pos];
            slice.planes.resize(m);
            for (std::size_t mi = 0; mi < m; ++mi) {
                auto& plane = slice.planes[mi];
                plane.resize(raw[mi][pos].size());
                for (std::size_t i = 0; i < plane.size(); ++i)
                    plane[i] = rescale_value(raw[mi][pos][i], lo[mi], hi[mi]);
            }
            slice.foreground = count_foreground(slice.planes[0]);
            pack.slices.push_back(std::move(slice));
        }
    }
    return pack;
}

}  // namespace modfuser
