#pragma once

// Image-quality metrics and whole-pack evaluation across every directed
// modality pair.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "modfuser/data.hpp"
#include "modfuser/model.hpp"
#include "modfuser/tensor.hpp"

namespace modfuser {

class MetricError : public std::runtime_error {
public:
    explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// 10*log10(peak^2 / MSE), in dB. Identical inputs report the 99 dB cap so
// CSVs stay finite. peak is the intensity range width, 2 for [-1, 1] data.
double psnr(const Tensor& a, const Tensor& b, double peak = 2.0);

// Mean local structural similarity over an 11x11 Gaussian window, sigma 1.5,
// on 2D images of at least 11x11 pixels.
double ssim(const Tensor& a, const Tensor& b, double peak = 2.0);

// Multi-scale variant: mean contrast-structure term at every scale raised to
// the scale weight, with the full similarity (luminance included) at the
// coarsest scale; scales are linked by 2x2-mean downsampling with floored
// dimensions. Negative scale terms clamp to zero so the weighted product
// stays defined for anti-correlated inputs.
double ms_ssim(const Tensor& a, const Tensor& b, int scales = 5, double peak = 2.0);

// Standard five-scale weights, truncated to `scales` and renormalized to
// sum 1.
std::vector<double> ms_ssim_weights(int scales);

// Largest scale count (capped at 5) whose coarsest level still fits the
// 11x11 window; 0 when even one level does not fit.
int max_ms_ssim_scales(int height, int width);

struct MetricSample {
    int source = 0;
    int target = 0;
    std::uint32_t subject = 0;
    std::uint32_t slice = 0;
    double l1x1000 = 0.0;
    double psnr_db = 0.0;
    double ssim_v = 0.0;
    double ms_ssim_v = 0.0;
};

struct PairSummary {
    std::string source;  // modality names; "all" on the pooled row
    std::string target;
    int count = 0;
    double l1_mean = 0.0, l1_std = 0.0;
    double psnr_mean = 0.0, psnr_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
    double ms_mean = 0.0, ms_std = 0.0;
};

struct MetricsReport {
    std::vector<MetricSample> samples;  // pair-major, slices in pack order
    std::vector<PairSummary> pairs;     // M(M-1) directed pairs
    PairSummary grand;                  // pooled over every sample
};

using TranslateFn = std::function<Tensor(const Tensor& x, int m_y)>;

// Translates every slice of every directed pair and scores it against the
// stored target plane. L1 is reported x1000 in [-1, 1] space.
MetricsReport evaluate_pack_fn(const TranslateFn& fn, const SlicePack& pack);
MetricsReport evaluate_pack(const Translator& g, const SlicePack& pack);

// One row per directed pair plus the pooled row; values at full precision so
// the report is exactly recomputable from the per-slice CSV.
void write_metrics_csv(const std::string& path, const MetricsReport& report);
void write_slice_metrics_csv(const std::string& path, const MetricsReport& report,
                             const std::vector<std::string>& modality_names);

}  // namespace modfuser
