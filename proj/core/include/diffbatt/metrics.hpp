#pragma once

#include <Eigen/Dense>

#include "diffbatt/pca.hpp"

namespace diffbatt {

/// Principal square root of a symmetric positive semidefinite matrix.
/// Negative eigenvalues from round-off are clamped to zero.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m);

/// ||mu1 - mu2||^2 + tr(C1 + C2 - 2 (C1 C2)^{1/2}). The cross term is
/// evaluated as tr((C1^{1/2} C2 C1^{1/2})^{1/2}), which is symmetric and
/// shares its trace with the principal root of C1 C2.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2);

/// Sample mean and covariance (n - 1 normalization) of the rows.
struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
Gaussian fit_gaussian(const Eigen::MatrixXd& rows);

/// Frechet distance between Gaussians fitted to the PCA projections of both sets (rows are curves).
double fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, const LatentMap& map);

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
};

/// k-NN manifold precision and recall between point sets (rows are points).
/// A point lies inside a ball when its distance is at most the radius.
PrecisionRecall precision_recall_points(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, int k = 3);

/// Same, computed in the latent space of `map`.
PrecisionRecall precision_recall(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, const LatentMap& map,
                                 int k = 3);

}  // namespace diffbatt
