#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace diffbatt {

struct ForestConfig {
    int n_trees = 100;
    std::optional<int> max_depth;  // unbounded when empty
    int min_leaf = 1;
    bool bootstrap = true;
    /// Features tried per split; all when empty.
    std::optional<int> max_features;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RegressionTree {
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1, right = -1;
        double value = 0.0;
    };
    std::vector<Node> nodes;

    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

struct Forest {
    std::vector<RegressionTree> trees;
    int n_features = 0;
};

/// Bagged variance-reduction regression trees. Rows are put in lexicographic
/// order before training and tree t draws from Rng(seed).split("tree").split(t),
/// so the fitted forest does not depend on the order of the training rows.
Forest train_forest(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels, const ForestConfig& cfg);

/// Mean over trees, one value per row.
Eigen::VectorXd forest_predict(const Forest& forest, const Eigen::MatrixXd& features);

}  // namespace diffbatt
