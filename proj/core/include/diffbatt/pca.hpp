#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>

namespace diffbatt {

/// Principal-component map fitted on real training curves.
struct LatentMap {
    Eigen::VectorXd mean;                // L
    Eigen::MatrixXd components;          // d x L, orthonormal rows
    Eigen::VectorXd explained_variance;  // d, descending
    double total_variance = 0.0;
    /// Set when the requested dimension exceeded the data rank.
    std::optional<std::string> warning;

    int dim() const { return static_cast<int>(components.rows()); }
    double explained_fraction() const;
};

struct PcaOptions {
    /// Fixed dimension; empty selects the smallest d reaching `variance_target`.
    std::optional<int> d;
    double variance_target = 0.95;
    int max_dim = 32;
};

/// Curves are the rows of `curves` (n x L).
LatentMap fit_pca(const Eigen::MatrixXd& curves, const PcaOptions& options = {});

/// Latent coordinates, one row per input row (n x d).
Eigen::MatrixXd project(const LatentMap& map, const Eigen::MatrixXd& curves);
Eigen::MatrixXd reconstruct(const LatentMap& map, const Eigen::MatrixXd& latent);

}  // namespace diffbatt
