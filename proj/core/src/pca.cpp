#include "diffbatt/pca.hpp"

#include <algorithm>

#include "diffbatt/errors.hpp"

namespace diffbatt {

double LatentMap::explained_fraction() const {
    return total_variance > 0.0 ? explained_variance.sum() / total_variance : 1.0;
}

LatentMap fit_pca(const Eigen::MatrixXd& curves, const PcaOptions& options) {
    const auto n = curves.rows();
    const auto L = curves.cols();
    if (n < 2 || L < 1) throw ShapeError("fit_pca needs at least two curves");
    if (options.d && (*options.d < 1 || *options.d > L)) throw ParameterError("PCA dimension must lie in [1, L]");
    if (options.d && *options.d + 1 > n)
        throw ShapeError("fit_pca needs at least d + 1 = " + std::to_string(*options.d + 1) + " curves, got " +
                         std::to_string(n));

    LatentMap map;
    map.mean = curves.colwise().mean().transpose();
    const Eigen::MatrixXd centered = curves.rowwise() - map.mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");

    // Eigen returns ascending eigenvalues.
    Eigen::VectorXd vals = es.eigenvalues().reverse().cwiseMax(0.0);
    Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
    map.total_variance = vals.sum();

    const double tol = std::max(1e-12, 1e-10 * (vals.size() > 0 ? vals(0) : 0.0));
    int rank = 0;
    while (rank < vals.size() && vals(rank) > tol) ++rank;
    rank = std::max(rank, 1);

    int d;
    if (options.d) {
        d = *options.d;
        if (d > rank) {
            map.warning = "requested PCA dimension " + std::to_string(d) + " exceeds data rank " +
                          std::to_string(rank) + "; using " + std::to_string(rank);
            d = rank;
        }
    } else {
        d = 1;
        double acc = vals(0);
        const int cap = std::min<int>({options.max_dim, rank, static_cast<int>(n - 1)});
        while (d < cap && map.total_variance > 0.0 && acc < options.variance_target * map.total_variance) {
            acc += vals(d);
            ++d;
        }
    }
    map.components = vecs.leftCols(d).transpose();
    // Deterministic sign: largest-magnitude coordinate positive.
    for (int i = 0; i < d; ++i) {
        Eigen::Index k;
        map.components.row(i).cwiseAbs().maxCoeff(&k);
        if (map.components(i, k) < 0.0) map.components.row(i) *= -1.0;
    }
    map.explained_variance = vals.head(d);
    return map;
}

Eigen::MatrixXd project(const LatentMap& map, const Eigen::MatrixXd& curves) {
    if (curves.cols() != map.mean.size()) throw ShapeError("project: curve length does not match the PCA map");
    return (curves.rowwise() - map.mean.transpose()) * map.components.transpose();
}

Eigen::MatrixXd reconstruct(const LatentMap& map, const Eigen::MatrixXd& latent) {
    if (latent.cols() != map.dim()) throw ShapeError("reconstruct: latent dimension does not match the PCA map");
    return (latent * map.components).rowwise() + map.mean.transpose();
}

}  // namespace diffbatt
