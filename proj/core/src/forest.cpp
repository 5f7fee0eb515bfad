#include "diffbatt/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffbatt/errors.hpp"
#include "diffbatt/rng.hpp"

namespace diffbatt {

void ForestConfig::validate() const {
    if (n_trees < 1) throw ConfigError("n_trees must be at least 1");
    if (max_depth && *max_depth < 0) throw ConfigError("max_depth must be non-negative");
    if (min_leaf < 1) throw ConfigError("min_leaf must be at least 1");
    if (max_features && *max_features < 1) throw ConfigError("max_features must be at least 1");
}

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
        const Node& n = nodes[static_cast<std::size_t>(i)];
        i = row(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
}

namespace {

class TreeBuilder {
public:
    TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestConfig& cfg, Rng& rng)
        : X_(X), y_(y), cfg_(cfg), rng_(rng), features_(static_cast<std::size_t>(X.cols())) {
        std::iota(features_.begin(), features_.end(), 0);
    }

    RegressionTree build(std::vector<int> rows) {
        tree_.nodes.clear();
        grow(rows, 0);
        return std::move(tree_);
    }

private:
    int grow(std::vector<int>& rows, int depth) {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        double sum = 0.0;
        for (int r : rows) sum += y_(r);
        const double n = static_cast<double>(rows.size());
        tree_.nodes[static_cast<std::size_t>(id)].value = sum / n;

        const bool pure = std::all_of(rows.begin(), rows.end(), [&](int r) { return y_(r) == y_(rows.front()); });
        if (pure || static_cast<int>(rows.size()) < 2 * cfg_.min_leaf || (cfg_.max_depth && depth >= *cfg_.max_depth))
            return id;

        // Partial Fisher-Yates picks the candidate features for this node.
        const int m = std::min<int>(cfg_.max_features.value_or(static_cast<int>(features_.size())),
                                    static_cast<int>(features_.size()));
        if (m < static_cast<int>(features_.size()))
            for (int i = 0; i < m; ++i) {
                const auto j = static_cast<std::size_t>(i) + rng_.below(features_.size() - static_cast<std::size_t>(i));
                std::swap(features_[static_cast<std::size_t>(i)], features_[j]);
            }
        std::vector<int> cand(features_.begin(), features_.begin() + m);
        std::sort(cand.begin(), cand.end());

        const double parent = sum * sum / n;
        double best_gain = 1e-12 * std::max(1.0, std::abs(parent));
        int best_feature = -1;
        double best_threshold = 0.0;
        std::vector<std::pair<double, double>> col(rows.size());
        for (int f : cand) {
            for (std::size_t i = 0; i < rows.size(); ++i) col[i] = {X_(rows[i], f), y_(rows[i])};
            std::sort(col.begin(), col.end());
            double left = 0.0;
            for (std::size_t i = 0; i + 1 < col.size(); ++i) {
                left += col[i].second;
                const auto nl = static_cast<int>(i + 1);
                const int nr = static_cast<int>(col.size()) - nl;
                if (col[i].first == col[i + 1].first || nl < cfg_.min_leaf || nr < cfg_.min_leaf) continue;
                const double right = sum - left;
                const double gain = left * left / nl + right * right / nr - parent;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = f;
                    double mid = 0.5 * (col[i].first + col[i + 1].first);
                    if (!(mid < col[i + 1].first)) mid = col[i].first;
                    best_threshold = mid;
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<int> lrows, rrows;
        for (int r : rows) (X_(r, best_feature) <= best_threshold ? lrows : rrows).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        const int l = grow(lrows, depth + 1);
        const int r = grow(rrows, depth + 1);
        auto& node = tree_.nodes[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    const Eigen::MatrixXd& X_;
    const Eigen::VectorXd& y_;
    const ForestConfig& cfg_;
    Rng& rng_;
    std::vector<int> features_;
    RegressionTree tree_;
};

}  // namespace

Forest train_forest(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels, const ForestConfig& cfg) {
    cfg.validate();
    const auto n = features.rows();
    if (n != labels.size()) throw ShapeError("train_forest: feature and label counts differ");
    if (n < 2) throw ShapeError("train_forest needs at least two rows");
    if (!features.allFinite() || !labels.allFinite()) throw ValidationError("train_forest: non-finite input");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index j = 0; j < features.cols(); ++j)
            if (features(a, j) != features(b, j)) return features(a, j) < features(b, j);
        return labels(a) < labels(b);
    });
    Eigen::MatrixXd X(n, features.cols());
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X.row(i) = features.row(order[static_cast<std::size_t>(i)]);
        y(i) = labels(order[static_cast<std::size_t>(i)]);
    }

    Forest forest;
    forest.n_features = static_cast<int>(features.cols());
    const Rng base = Rng(cfg.seed).split("tree");
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng = base.split(static_cast<std::uint64_t>(t));
        std::vector<int> rows(static_cast<std::size_t>(n));
        if (cfg.bootstrap)
            for (auto& r : rows) r = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        else
            std::iota(rows.begin(), rows.end(), 0);
        TreeBuilder builder(X, y, cfg, rng);
        forest.trees.push_back(builder.build(std::move(rows)));
    }
    return forest;
}

Eigen::VectorXd forest_predict(const Forest& forest, const Eigen::MatrixXd& features) {
    if (forest.trees.empty()) throw ConfigError("forest has no trees");
    if (features.cols() != forest.n_features)
        throw ShapeError("forest_predict: expected " + std::to_string(forest.n_features) + " features, got " +
                         std::to_string(features.cols()));
    Eigen::VectorXd out(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        double s = 0.0;
        for (const auto& t : forest.trees) s += t.predict(features.row(i));
        out(i) = s / static_cast<double>(forest.trees.size());
    }
    return out;
}

}  // namespace diffbatt
