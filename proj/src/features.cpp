#include "modfuser/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "modfuser/metrics.hpp"
#include "modfuser/rng.hpp"

namespace modfuser {
namespace {

// Cyclic Jacobi eigensolver for small dense symmetric matrices. a is n x n
// row-major and is destroyed; vectors come back as columns of v, pairs sorted
// by descending eigenvalue.
void jacobi_eig(std::vector<double>& a, int n, std::vector<double>& evals,
                std::vector<double>& v) {
    v.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

    auto at = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
    auto vt = [&](int r, int c) -> double& { return v[static_cast<std::size_t>(r) * n + c]; };

    double scale = 0.0;
    for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(at(i, i)));
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(at(p, q)));
        if (off <= 1e-15 * std::max(scale, 1e-300)) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::abs(apq) <= 1e-18 * std::max(scale, 1e-300)) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double app = at(p, p);
                const double aqq = at(q, q);
                at(p, p) = app - t * apq;
                at(q, q) = aqq + t * apq;
                at(p, q) = 0.0;
                at(q, p) = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (i != p && i != q) {
                        const double aip = at(i, p);
                        const double aiq = at(i, q);
                        at(i, p) = c * aip - s * aiq;
                        at(p, i) = at(i, p);
                        at(i, q) = s * aip + c * aiq;
                        at(q, i) = at(i, q);
                    }
                    const double vip = vt(i, p);
                    const double viq = vt(i, q);
                    vt(i, p) = c * vip - s * viq;
                    vt(i, q) = s * vip + c * viq;
                }
                scale = std::max(scale, std::max(std::abs(at(p, p)), std::abs(at(q, q))));
            }
    }

    evals.resize(static_cast<std::size_t>(n));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return at(i, i) > at(j, j); });
    std::vector<double> sorted_v(v.size());
    for (int j = 0; j < n; ++j) {
        evals[static_cast<std::size_t>(j)] = at(order[static_cast<std::size_t>(j)],
                                                order[static_cast<std::size_t>(j)]);
        for (int i = 0; i < n; ++i)
            sorted_v[static_cast<std::size_t>(i) * n + j] =
                vt(i, order[static_cast<std::size_t>(j)]);
    }
    v = std::move(sorted_v);
}

// Modified Gram-Schmidt with one re-orthogonalization pass on the columns of
// q (d x p, row-major). Numerically dead columns are replaced by unit basis
// vectors so the result is always a full orthonormal set.
void orthonormalize(std::vector<double>& q, int d, int p) {
    auto col = [&](int j, int i) -> double& { return q[static_cast<std::size_t>(i) * p + j]; };
    int fallback = 0;
    for (int j = 0; j < p; ++j) {
        for (int pass = 0; pass < 2; ++pass)
            for (int k = 0; k < j; ++k) {
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += col(k, i) * col(j, i);
                for (int i = 0; i < d; ++i) col(j, i) -= dot * col(k, i);
            }
        double norm = 0.0;
        for (int i = 0; i < d; ++i) norm += col(j, i) * col(j, i);
        norm = std::sqrt(norm);
        if (norm < 1e-150) {
            for (int i = 0; i < d; ++i) col(j, i) = 0.0;
            col(j, fallback++ % d) = 1.0;
            --j;  // orthogonalize the replacement against earlier columns
            continue;
        }
        for (int i = 0; i < d; ++i) col(j, i) /= norm;
    }
}

}  // namespace

FeatureCloud pca_project(std::vector<std::string> labels, std::vector<std::vector<double>> rows,
                         int out_dims) {
    const std::size_t n = rows.size();
    if (labels.size() != n) throw MetricError("pca: label and row counts differ");
    if (out_dims < 2) throw MetricError("pca: need at least 2 output dimensions");
    if (n < static_cast<std::size_t>(out_dims))
        throw MetricError("pca: need at least " + std::to_string(out_dims) + " rows, got " +
                          std::to_string(n));
    const std::size_t d = rows[0].size();
    if (d < 2) throw MetricError("pca: feature dimension must be at least 2");
    for (const auto& row : rows)
        if (row.size() != d) throw MetricError("pca: rows have inconsistent dimensions");
    const int k = std::min<int>(out_dims, static_cast<int>(d));

    FeatureCloud cloud;
    cloud.labels = std::move(labels);
    cloud.rows = std::move(rows);

    cloud.mean.assign(d, 0.0);
    for (const auto& row : cloud.rows)
        for (std::size_t i = 0; i < d; ++i) cloud.mean[i] += row[i];
    for (auto& v : cloud.mean) v /= static_cast<double>(n);

    std::vector<std::vector<double>> centered = cloud.rows;
    for (auto& row : centered)
        for (std::size_t i = 0; i < d; ++i) row[i] -= cloud.mean[i];

    for (const auto& row : centered)
        for (const double v : row) cloud.total_variance += v * v;
    cloud.total_variance /= static_cast<double>(n);
    if (cloud.total_variance <= 1e-18)
        throw MetricError("pca: degenerate cloud, all rows are identical");

    // Covariance, full symmetric d x d.
    std::vector<double> cov(d * d, 0.0);
    for (const auto& row : centered)
        for (std::size_t i = 0; i < d; ++i) {
            const double ri = row[i];
            if (ri == 0.0) continue;
            double* out = cov.data() + i * d;
            for (std::size_t j = i; j < d; ++j) out[j] += ri * row[j];
        }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            cov[i * d + j] /= static_cast<double>(n);
            cov[j * d + i] = cov[i * d + j];
        }

    // Orthogonal iteration with Rayleigh-Ritz rotation on a slightly larger
    // subspace than requested; the buffer speeds up separation of the
    // trailing requested components.
    const int p = std::min<int>(k + 8, static_cast<int>(d));
    std::vector<double> q(d * static_cast<std::size_t>(p));
    {
        Rng rng(0x70636170);
        for (auto& v : q) v = rng.normal();
        orthonormalize(q, static_cast<int>(d), p);
    }
    std::vector<double> y(q.size()), b(static_cast<std::size_t>(p) * p);
    std::vector<double> evals, vecs;
    bool converged = false;
    for (int iter = 0; iter < 3000 && !converged; ++iter) {
        // y = cov * q
        for (std::size_t i = 0; i < d; ++i) {
            const double* crow = cov.data() + i * d;
            double* yrow = y.data() + i * p;
            for (int j = 0; j < p; ++j) yrow[j] = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                const double c = crow[l];
                if (c == 0.0) continue;
                const double* qrow = q.data() + l * p;
                for (int j = 0; j < p; ++j) yrow[j] += c * qrow[j];
            }
        }
        // b = q^T y, symmetrized
        for (int r = 0; r < p; ++r)
            for (int c = r; c < p; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < d; ++i) acc += q[i * p + r] * y[i * p + c];
                b[static_cast<std::size_t>(r) * p + c] = acc;
                b[static_cast<std::size_t>(c) * p + r] = acc;
            }
        jacobi_eig(b, p, evals, vecs);

        // Rotate q and y into the Ritz basis.
        std::vector<double> qv(q.size()), yv(y.size());
        for (std::size_t i = 0; i < d; ++i)
            for (int j = 0; j < p; ++j) {
                double accq = 0.0, accy = 0.0;
                for (int l = 0; l < p; ++l) {
                    const double vl = vecs[static_cast<std::size_t>(l) * p + j];
                    accq += q[i * p + l] * vl;
                    accy += y[i * p + l] * vl;
                }
                qv[i * p + j] = accq;
                yv[i * p + j] = accy;
            }

        // Residual of the top-k Ritz pairs: ||cov q_j - lambda_j q_j||.
        double worst = 0.0;
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double r = yv[i * p + j] - evals[static_cast<std::size_t>(j)] * qv[i * p + j];
                acc += r * r;
            }
            worst = std::max(worst, std::sqrt(acc));
        }
        const double tol = 1e-10 * std::max(evals[0], 1e-12);
        if (worst <= tol) {
            q = std::move(qv);
            converged = true;
        } else {
            q = std::move(yv);
            orthonormalize(q, static_cast<int>(d), p);
        }
    }
    if (!converged) throw MetricError("pca: orthogonal iteration did not reach its residual target");

    cloud.components.assign(static_cast<std::size_t>(k), std::vector<double>(d));
    cloud.explained_variance.assign(static_cast<std::size_t>(k), 0.0);
    for (int j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < d; ++i) cloud.components[static_cast<std::size_t>(j)][i] = q[i * p + j];
        cloud.explained_variance[static_cast<std::size_t>(j)] = evals[static_cast<std::size_t>(j)];
    }

    cloud.projected.assign(n, std::vector<double>(static_cast<std::size_t>(k), 0.0));
    cloud.x.resize(n);
    cloud.y.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                acc += centered[r][i] * cloud.components[static_cast<std::size_t>(j)][i];
            cloud.projected[r][static_cast<std::size_t>(j)] = acc;
        }
        cloud.x[r] = cloud.projected[r][0];
        cloud.y[r] = cloud.projected[r][1];
    }
    return cloud;
}

double silhouette(const std::vector<double>& x, const std::vector<double>& y,
                  const std::vector<int>& cluster) {
    const std::size_t n = x.size();
    if (y.size() != n || cluster.size() != n)
        throw MetricError("silhouette: coordinate and cluster sizes differ");
    if (n < 2) throw MetricError("silhouette: need at least two points");
    int max_cluster = 0;
    for (const int c : cluster) {
        if (c < 0) throw MetricError("silhouette: negative cluster id");
        max_cluster = std::max(max_cluster, c);
    }
    const int groups = max_cluster + 1;
    std::vector<std::size_t> counts(static_cast<std::size_t>(groups), 0);
    for (const int c : cluster) ++counts[static_cast<std::size_t>(c)];
    int nonempty = 0;
    for (const auto c : counts) nonempty += c > 0;
    if (nonempty < 2) throw MetricError("silhouette: need at least two clusters");

    double total = 0.0;
    std::vector<double> sums(static_cast<std::size_t>(groups));
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            sums[static_cast<std::size_t>(cluster[j])] += std::sqrt(dx * dx + dy * dy);
        }
        const auto own = static_cast<std::size_t>(cluster[i]);
        if (counts[own] <= 1) continue;  // singleton scores 0
        const double a = sums[own] / static_cast<double>(counts[own] - 1);
        double b = 0.0;
        bool first = true;
        for (std::size_t g = 0; g < sums.size(); ++g) {
            if (g == own || counts[g] == 0) continue;
            const double mean = sums[g] / static_cast<double>(counts[g]);
            if (first || mean < b) b = mean;
            first = false;
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

double linear_probe_accuracy(const std::vector<std::vector<double>>& rows,
                             const std::vector<int>& labels, int classes, std::uint64_t seed) {
    const std::size_t n = rows.size();
    if (labels.size() != n) throw MetricError("probe: label and row counts differ");
    if (n < 4) throw MetricError("probe: need at least four rows");
    if (classes < 2) throw MetricError("probe: need at least two classes");
    for (const int l : labels)
        if (l < 0 || l >= classes) throw MetricError("probe: label outside [0, classes)");
    const std::size_t d = rows[0].size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x70726f62));
    rng.shuffle(order);
    const std::size_t n_train = n / 2;

    // Standardize by training-half statistics.
    std::vector<double> mean(d, 0.0), scale(d, 0.0);
    for (std::size_t t = 0; t < n_train; ++t)
        for (std::size_t i = 0; i < d; ++i) mean[i] += rows[order[t]][i];
    for (auto& v : mean) v /= static_cast<double>(n_train);
    for (std::size_t t = 0; t < n_train; ++t)
        for (std::size_t i = 0; i < d; ++i) {
            const double c = rows[order[t]][i] - mean[i];
            scale[i] += c * c;
        }
    for (auto& v : scale) v = std::max(std::sqrt(v / static_cast<double>(n_train)), 1e-12);

    auto standardized = [&](std::size_t row, std::size_t i) {
        return (rows[row][i] - mean[i]) / scale[i];
    };

    // Full-batch gradient descent on the multinomial logistic loss.
    const std::size_t width = d + 1;  // bias last
    std::vector<double> wmat(static_cast<std::size_t>(classes) * width, 0.0);
    std::vector<double> grad(wmat.size());
    std::vector<double> logits(static_cast<std::size_t>(classes));
    const double lr = 0.2;
    for (int it = 0; it < 500; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t t = 0; t < n_train; ++t) {
            const std::size_t row = order[t];
            double peak = -1e300;
            for (int c = 0; c < classes; ++c) {
                double acc = wmat[static_cast<std::size_t>(c) * width + d];
                for (std::size_t i = 0; i < d; ++i)
                    acc += wmat[static_cast<std::size_t>(c) * width + i] * standardized(row, i);
                logits[static_cast<std::size_t>(c)] = acc;
                peak = std::max(peak, acc);
            }
            double denom = 0.0;
            for (int c = 0; c < classes; ++c) {
                logits[static_cast<std::size_t>(c)] = std::exp(logits[static_cast<std::size_t>(c)] - peak);
                denom += logits[static_cast<std::size_t>(c)];
            }
            for (int c = 0; c < classes; ++c) {
                const double err = logits[static_cast<std::size_t>(c)] / denom -
                                   (labels[row] == c ? 1.0 : 0.0);
                double* grow = grad.data() + static_cast<std::size_t>(c) * width;
                for (std::size_t i = 0; i < d; ++i) grow[i] += err * standardized(row, i);
                grow[d] += err;
            }
        }
        for (std::size_t i = 0; i < wmat.size(); ++i)
            wmat[i] -= lr / static_cast<double>(n_train) * grad[i];
    }

    std::size_t hits = 0;
    const std::size_t n_eval = n - n_train;
    for (std::size_t t = n_train; t < n; ++t) {
        const std::size_t row = order[t];
        int best = 0;
        double best_score = -1e300;
        for (int c = 0; c < classes; ++c) {
            double acc = wmat[static_cast<std::size_t>(c) * width + d];
            for (std::size_t i = 0; i < d; ++i)
                acc += wmat[static_cast<std::size_t>(c) * width + i] * standardized(row, i);
            if (acc > best_score) {
                best_score = acc;
                best = c;
            }
        }
        hits += best == labels[row];
    }
    return static_cast<double>(hits) / static_cast<double>(n_eval);
}

FeatureCloud collect_feature_rows(const Translator& g, const SlicePack& pack,
                                  std::size_t max_slices) {
    if (pack.slices.empty()) throw MetricError("feature collection: empty pack");
    if (pack.modalities() != g.cfg.modalities)
        throw MetricError("feature collection: pack has " + std::to_string(pack.modalities()) +
                          " modalities but the model expects " +
                          std::to_string(g.cfg.modalities));
    const int m = g.cfg.modalities;
    FeatureCloud cloud;
    const std::size_t take = std::min(max_slices, pack.slices.size());
    for (std::size_t s = 0; s < take; ++s) {
        // Source modalities rotate so agnostic rows mix all inputs.
        const auto source = static_cast<std::size_t>(s % static_cast<std::size_t>(m));
        const Tensor x =
            Tensor::from_data({1, pack.height, pack.width}, pack.slices[s].planes[source]);
        const Tensor f = encode(x, g);
        cloud.labels.push_back("agnostic");
        cloud.rows.push_back(f.data());
        for (int target = 0; target < m; ++target) {
            const Tensor z = infuse(f, target, g);
            cloud.labels.push_back(pack.modality_names[static_cast<std::size_t>(target)]);
            cloud.rows.push_back(z.data());
        }
    }
    return cloud;
}

void write_feature_csv(const std::string& path, const FeatureCloud& cloud) {
    if (cloud.x.size() != cloud.labels.size())
        throw MetricError("feature csv: cloud has no projected coordinates");
    std::ofstream os(path);
    if (!os) throw MetricError("cannot open for writing: " + path);
    os << std::setprecision(17);
    os << "label,x,y\n";
    for (std::size_t i = 0; i < cloud.labels.size(); ++i)
        os << cloud.labels[i] << ',' << cloud.x[i] << ',' << cloud.y[i] << '\n';
    os.flush();
    if (!os) throw MetricError("write failed: " + path);
}

}  // namespace modfuser
