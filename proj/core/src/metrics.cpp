#include "diffbatt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "diffbatt/errors.hpp"

namespace diffbatt {

namespace {

void check_symmetric(const Eigen::MatrixXd& m, const char* what) {
    if (m.rows() != m.cols()) throw ShapeError(std::string(what) + " is not square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
        throw ValidationError(std::string(what) + " is not symmetric");
}

}  // namespace

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed in matrix square root");
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2) {
    if (mu1.size() != mu2.size() || cov1.rows() != mu1.size() || cov2.rows() != mu2.size())
        throw ShapeError("frechet_distance: dimensions disagree");
    check_symmetric(cov1, "first covariance");
    check_symmetric(cov2, "second covariance");
    const Eigen::MatrixXd r1 = sqrt_psd(cov1);
    const Eigen::MatrixXd cross = sqrt_psd(r1 * cov2 * r1);
    const double d = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    return std::max(0.0, d);
}

Gaussian fit_gaussian(const Eigen::MatrixXd& rows) {
    if (rows.rows() < 2) throw ShapeError("fit_gaussian needs at least two rows");
    Gaussian g;
    g.mean = rows.colwise().mean().transpose();
    const Eigen::MatrixXd c = rows.rowwise() - g.mean.transpose();
    g.cov = (c.transpose() * c) / static_cast<double>(rows.rows() - 1);
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    return g;
}

double fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, const LatentMap& map) {
    const auto need = static_cast<Eigen::Index>(map.dim()) + 1;
    if (real.rows() < need || synth.rows() < need)
        throw ShapeError("fid needs at least d + 1 = " + std::to_string(need) + " curves in each set");
    const Gaussian a = fit_gaussian(project(map, real));
    const Gaussian b = fit_gaussian(project(map, synth));
    return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

namespace {

Eigen::MatrixXd pairwise_sq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd d(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    return d;
}

/// Squared distance from each point to its k-th nearest neighbour in the same set (self excluded).
Eigen::VectorXd kth_radius_sq(const Eigen::MatrixXd& pts, int k) {
    const Eigen::MatrixXd d = pairwise_sq(pts, pts);
    Eigen::VectorXd r(pts.rows());
    std::vector<double> row;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        row.clear();
        for (Eigen::Index j = 0; j < pts.rows(); ++j)
            if (j != i) row.push_back(d(i, j));
        std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
        r(i) = row[static_cast<std::size_t>(k - 1)];
    }
    return r;
}

/// Fraction of `query` rows inside at least one ball of the manifold.
double coverage(const Eigen::MatrixXd& query, const Eigen::MatrixXd& centers, const Eigen::VectorXd& radius_sq) {
    const Eigen::MatrixXd d = pairwise_sq(query, centers);
    int inside = 0;
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
        for (Eigen::Index j = 0; j < centers.rows(); ++j) {
            // A zero radius admits only an exact match, which d == 0 already expresses.
            if (d(i, j) <= radius_sq(j)) {
                ++inside;
                break;
            }
        }
    }
    return static_cast<double>(inside) / static_cast<double>(query.rows());
}

}  // namespace

PrecisionRecall precision_recall_points(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, int k) {
    if (k < 1) throw ParameterError("k must be positive");
    if (real.cols() != synth.cols()) throw ShapeError("precision_recall: point dimensions differ");
    if (real.rows() < k + 1 || synth.rows() < k + 1)
        throw ShapeError("precision_recall needs at least k + 1 = " + std::to_string(k + 1) + " points per set");
    PrecisionRecall pr;
    pr.precision = coverage(synth, real, kth_radius_sq(real, k));
    pr.recall = coverage(real, synth, kth_radius_sq(synth, k));
    return pr;
}

PrecisionRecall precision_recall(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, const LatentMap& map,
                                 int k) {
    return precision_recall_points(project(map, real), project(map, synth), k);
}

}  // namespace diffbatt
