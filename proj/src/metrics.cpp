#include "modfuser/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace modfuser {
namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

const std::vector<double>& gaussian_taps() {
    static const std::vector<double> taps = [] {
        std::vector<double> t(kWin);
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            t[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += t[i];
        }
        for (auto& v : t) v /= sum;
        return t;
    }();
    return taps;
}

// Valid-mode separable filtering with the shared Gaussian taps; output is
// (h-10) x (w-10).
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
    const auto& taps = gaussian_taps();
    const int ow = w - kWin + 1;
    const int oh = h - kWin + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += taps[k] * img[static_cast<std::size_t>(y) * w + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += taps[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

// Mean similarity and mean contrast-structure term over all windows.
void ssim_core(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
               double peak, double& mean_ssim, double& mean_cs) {
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    const std::size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const std::vector<double> mu_a = filter_valid(a, h, w);
    const std::vector<double> mu_b = filter_valid(b, h, w);
    const std::vector<double> e_aa = filter_valid(aa, h, w);
    const std::vector<double> e_bb = filter_valid(bb, h, w);
    const std::vector<double> e_ab = filter_valid(ab, h, w);

    double sum_ssim = 0.0;
    double sum_cs = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double cs = (2.0 * cov + c2) / (va + vb + c2);
        const double lum = (2.0 * mu_a[i] * mu_b[i] + c1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1);
        sum_ssim += lum * cs;
        sum_cs += cs;
    }
    mean_ssim = sum_ssim / static_cast<double>(mu_a.size());
    mean_cs = sum_cs / static_cast<double>(mu_a.size());
}

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.defined() || !b.defined()) throw MetricError(std::string(op) + ": undefined tensor");
    if (a.shape() != b.shape())
        throw MetricError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

void check_image(const Tensor& a, const char* op, int min_side) {
    if (a.dim() != 2)
        throw MetricError(std::string(op) + ": expected a 2D image, got " + shape_str(a.shape()));
    if (a.shape()[0] < min_side || a.shape()[1] < min_side)
        throw MetricError(std::string(op) + ": image " + shape_str(a.shape()) +
                          " too small, need at least " + std::to_string(min_side) +
                          " pixels per side");
}

std::vector<double> downsample2(const std::vector<double>& img, int h, int w) {
    const int nh = h / 2;
    const int nw = w / 2;
    std::vector<double> out(static_cast<std::size_t>(nh) * nw);
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) {
            const std::size_t base = static_cast<std::size_t>(2 * y) * w + 2 * x;
            out[static_cast<std::size_t>(y) * nw + x] =
                0.25 * (img[base] + img[base + 1] + img[base + w] + img[base + w + 1]);
        }
    return out;
}

}  // namespace

// Pairwise reduction: equal summands over power-of-two counts stay exact, so
// a uniform difference of 0.2 on a 64x64 image reports exactly 20 dB.
double pairwise_sq_diff(const double* a, const double* b, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        return s;
    }
    const std::size_t mid = n / 2;
    return pairwise_sq_diff(a, b, mid) + pairwise_sq_diff(a + mid, b + mid, n - mid);
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
    check_pair(a, b, "psnr");
    if (!(peak > 0.0)) throw MetricError("psnr: peak must be positive");
    const std::size_t n = static_cast<std::size_t>(a.size());
    const double mse = pairwise_sq_diff(a.data().data(), b.data().data(), n) /
                       static_cast<double>(n);
    if (mse == 0.0) return 99.0;
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
    check_pair(a, b, "ssim");
    check_image(a, "ssim", kWin);
    double mean_ssim = 0.0, mean_cs = 0.0;
    ssim_core(a.data(), b.data(), a.shape()[0], a.shape()[1], peak, mean_ssim, mean_cs);
    return mean_ssim;
}

std::vector<double> ms_ssim_weights(int scales) {
    static const std::vector<double> base = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    if (scales < 1 || scales > static_cast<int>(base.size()))
        throw MetricError("ms_ssim: scales must lie in [1, 5], got " + std::to_string(scales));
    std::vector<double> w(base.begin(), base.begin() + scales);
    double sum = 0.0;
    for (const double v : w) sum += v;
    for (auto& v : w) v /= sum;
    return w;
}

int max_ms_ssim_scales(int height, int width) {
    int side = std::min(height, width);
    int scales = 0;
    while (scales < 5 && side >= kWin) {
        ++scales;
        side /= 2;
    }
    return scales;
}

double ms_ssim(const Tensor& a, const Tensor& b, int scales, double peak) {
    check_pair(a, b, "ms_ssim");
    check_image(a, "ms_ssim", kWin);
    const std::vector<double> weights = ms_ssim_weights(scales);
    const int min_side = kWin << (scales - 1);
    if (a.shape()[0] < min_side || a.shape()[1] < min_side)
        throw MetricError("ms_ssim: image " + shape_str(a.shape()) + " too small for " +
                          std::to_string(scales) + " scales, need at least " +
                          std::to_string(min_side) + " pixels per side");

    std::vector<double> ca = a.data();
    std::vector<double> cb = b.data();
    int h = a.shape()[0];
    int w = a.shape()[1];
    double product = 1.0;
    for (int s = 0; s < scales; ++s) {
        double mean_ssim = 0.0, mean_cs = 0.0;
        ssim_core(ca, cb, h, w, peak, mean_ssim, mean_cs);
        // Luminance enters only at the coarsest scale. Negative means clamp
        // to zero so the fractional powers below stay defined.
        const double term = std::max(s + 1 == scales ? mean_ssim : mean_cs, 0.0);
        product *= std::pow(term, weights[static_cast<std::size_t>(s)]);
        if (s + 1 < scales) {
            ca = downsample2(ca, h, w);
            cb = downsample2(cb, h, w);
            h /= 2;
            w /= 2;
        }
    }
    return product;
}

namespace {

PairSummary summarize(const std::vector<MetricSample>& samples, std::size_t begin, std::size_t end,
                      std::string source, std::string target) {
    PairSummary s;
    s.source = std::move(source);
    s.target = std::move(target);
    s.count = static_cast<int>(end - begin);
    const double n = static_cast<double>(s.count);
    double sums[4] = {0, 0, 0, 0};
    double squares[4] = {0, 0, 0, 0};
    for (std::size_t i = begin; i < end; ++i) {
        const double v[4] = {samples[i].l1x1000, samples[i].psnr_db, samples[i].ssim_v,
                             samples[i].ms_ssim_v};
        for (int j = 0; j < 4; ++j) {
            sums[j] += v[j];
            squares[j] += v[j] * v[j];
        }
    }
    double means[4], stds[4];
    for (int j = 0; j < 4; ++j) {
        means[j] = sums[j] / n;
        stds[j] = std::sqrt(std::max(squares[j] / n - means[j] * means[j], 0.0));
    }
    s.l1_mean = means[0];
    s.l1_std = stds[0];
    s.psnr_mean = means[1];
    s.psnr_std = stds[1];
    s.ssim_mean = means[2];
    s.ssim_std = stds[2];
    s.ms_mean = means[3];
    s.ms_std = stds[3];
    return s;
}

}  // namespace

MetricsReport evaluate_pack_fn(const TranslateFn& fn, const SlicePack& pack) {
    if (pack.slices.empty()) throw MetricError("evaluate: empty pack");
    const int m = pack.modalities();
    if (m < 2) throw MetricError("evaluate: need at least two modalities");
    const int h = pack.height;
    const int w = pack.width;
    if (h < kWin || w < kWin)
        throw MetricError("evaluate: images must be at least 11 pixels per side");
    const int scales = max_ms_ssim_scales(h, w);
    const std::size_t pixels = static_cast<std::size_t>(h) * w;

    MetricsReport report;
    for (int source = 0; source < m; ++source)
        for (int target = 0; target < m; ++target) {
            if (source == target) continue;
            const std::size_t begin = report.samples.size();
            for (const auto& slice : pack.slices) {
                const Tensor x =
                    Tensor::from_data({1, h, w}, slice.planes[static_cast<std::size_t>(source)]);
                const Tensor out = fn(x, target);
                if (!out.defined() || static_cast<std::size_t>(out.size()) != pixels)
                    throw MetricError("evaluate: translation output has wrong pixel count");
                const Tensor got = reshape(out, {h, w});
                const Tensor truth =
                    Tensor::from_data({h, w}, slice.planes[static_cast<std::size_t>(target)]);

                MetricSample sample;
                sample.source = source;
                sample.target = target;
                sample.subject = slice.subject;
                sample.slice = slice.slice_index;
                double l1 = 0.0;
                for (std::size_t i = 0; i < pixels; ++i)
                    l1 += std::abs(got.data()[i] - truth.data()[i]);
                sample.l1x1000 = l1 / static_cast<double>(pixels) * 1000.0;
                sample.psnr_db = psnr(got, truth);
                sample.ssim_v = ssim(got, truth);
                sample.ms_ssim_v = ms_ssim(got, truth, scales);
                report.samples.push_back(sample);
            }
            report.pairs.push_back(summarize(report.samples, begin, report.samples.size(),
                                             pack.modality_names[static_cast<std::size_t>(source)],
                                             pack.modality_names[static_cast<std::size_t>(target)]));
        }
    report.grand = summarize(report.samples, 0, report.samples.size(), "all", "all");
    return report;
}

MetricsReport evaluate_pack(const Translator& g, const SlicePack& pack) {
    if (pack.modalities() != g.cfg.modalities)
        throw MetricError("evaluate: pack has " + std::to_string(pack.modalities()) +
                          " modalities but the model expects " + std::to_string(g.cfg.modalities));
    return evaluate_pack_fn([&g](const Tensor& x, int m_y) { return translate(x, m_y, g); }, pack);
}

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw MetricError("cannot open for writing: " + path);
    os << std::setprecision(17);
    return os;
}

void write_summary_row(std::ostream& os, const PairSummary& s) {
    os << s.source << ',' << s.target << ',' << s.count << ',' << s.l1_mean << ',' << s.l1_std
       << ',' << s.psnr_mean << ',' << s.psnr_std << ',' << s.ssim_mean << ',' << s.ssim_std << ','
       << s.ms_mean << ',' << s.ms_std << '\n';
}

}  // namespace

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream os = open_csv(path);
    os << "source,target,count,l1x1000_mean,l1x1000_std,psnr_mean,psnr_std,"
          "ssim_mean,ssim_std,msssim_mean,msssim_std\n";
    for (const auto& pair : report.pairs) write_summary_row(os, pair);
    write_summary_row(os, report.grand);
    os.flush();
    if (!os) throw MetricError("write failed: " + path);
}

void write_slice_metrics_csv(const std::string& path, const MetricsReport& report,
                             const std::vector<std::string>& modality_names) {
    std::ofstream os = open_csv(path);
    os << "source,target,subject,slice,l1x1000,psnr,ssim,msssim\n";
    for (const auto& s : report.samples) {
        os << modality_names[static_cast<std::size_t>(s.source)] << ','
           << modality_names[static_cast<std::size_t>(s.target)] << ',' << s.subject << ','
           << s.slice << ',' << s.l1x1000 << ',' << s.psnr_db << ',' << s.ssim_v << ','
           << s.ms_ssim_v << '\n';
    }
    os.flush();
    if (!os) throw MetricError("write failed: " + path);
}

}  // namespace modfuser
