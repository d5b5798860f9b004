#pragma once

// Feature-space analysis: PCA projection of encoder/infuser features, cluster
// quality scoring, and a linear probe for modality separability.

#include <cstdint>
#include <string>
#include <vector>

#include "modfuser/data.hpp"
#include "modfuser/model.hpp"

namespace modfuser {

struct FeatureCloud {
    std::vector<std::string> labels;              // one per row
    std::vector<std::vector<double>> rows;        // [N][D] raw feature vectors
    std::vector<std::vector<double>> components;  // [k][D], orthonormal within 1e-9
    std::vector<double> explained_variance;       // descending eigenvalues, length k
    double total_variance = 0.0;                  // trace of the covariance
    std::vector<double> mean;                     // [D] row mean
    std::vector<std::vector<double>> projected;   // [N][k] coordinates
    std::vector<double> x, y;                     // first two projected columns
};

// Principal components of the row cloud via orthogonal iteration on the
// covariance with Rayleigh-Ritz rotation, run to residual 1e-10 relative to
// the leading eigenvalue. Keeps min(out_dims, D) components; requires at
// least out_dims rows and a non-degenerate cloud.
FeatureCloud pca_project(std::vector<std::string> labels, std::vector<std::vector<double>> rows,
                         int out_dims = 50);

// Mean silhouette over 2D points: (b - a) / max(a, b) per point, with a the
// mean in-cluster distance and b the best mean distance to another cluster.
// Singleton clusters score 0.
double silhouette(const std::vector<double>& x, const std::vector<double>& y,
                  const std::vector<int>& cluster);

// Multinomial logistic probe trained on a deterministic half of the rows;
// returns accuracy on the held-out half.
double linear_probe_accuracy(const std::vector<std::vector<double>>& rows,
                             const std::vector<int>& labels, int classes, std::uint64_t seed);

// One agnostic row (encoder output) plus one row per conditioning modality
// (infuser output) for up to max_slices slices of the pack.
FeatureCloud collect_feature_rows(const Translator& g, const SlicePack& pack,
                                  std::size_t max_slices);

// CSV with columns label,x,y; requires a projected cloud.
void write_feature_csv(const std::string& path, const FeatureCloud& cloud);

}  // namespace modfuser
