#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "diffbatt/errors.hpp"
#include "diffbatt/forest.hpp"
#include "diffbatt/metrics.hpp"
#include "diffbatt/pca.hpp"
#include "diffbatt/rng.hpp"
#include "test_util.hpp"

using namespace diffbatt;

namespace {

Eigen::MatrixXd gaussian_rows(int n, int d, Rng& rng) {
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    return m;
}

// Random PSD matrix Q diag(lambda) Q^T with prescribed eigenvalues.
Eigen::MatrixXd psd_from_spectrum(const Eigen::VectorXd& lambda, Rng& rng) {
    const auto d = lambda.size();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_rows(static_cast<int>(d), static_cast<int>(d), rng));
    const Eigen::MatrixXd q = qr.householderQ();
    return q * lambda.asDiagonal() * q.transpose();
}

}  // namespace

TEST(Frechet, HandCases) {
    Rng rng(1);
    const Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(3, -1, 2);
    const Eigen::MatrixXd c = psd_from_spectrum(Eigen::Vector3d(2.0, 0.5, 0.1), rng);
    EXPECT_NEAR(frechet_distance(mu, c, mu, c), 0.0, 1e-12);

    const Eigen::Vector3d delta(0.3, -1.2, 2.0);
    EXPECT_NEAR(frechet_distance(mu, c, mu + delta, c), delta.squaredNorm(), 1e-9);

    const Eigen::Vector2d z = Eigen::Vector2d::Zero();
    EXPECT_NEAR(frechet_distance(z, Eigen::Vector2d(1, 4).asDiagonal().toDenseMatrix(), z,
                                 Eigen::Vector2d(4, 1).asDiagonal().toDenseMatrix()),
                2.0, 1e-12);
}

TEST(Frechet, SymmetricNonNegativeZeroOnlyWhenEqual) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + static_cast<int>(rng.below(5));
        Eigen::VectorXd l1(d), l2(d), m1(d), m2(d);
        for (int j = 0; j < d; ++j) {
            l1(j) = rng.uniform(0.0, 3.0);
            l2(j) = rng.uniform(0.0, 3.0);
            m1(j) = rng.normal();
            m2(j) = rng.normal();
        }
        const Eigen::MatrixXd c1 = psd_from_spectrum(l1, rng), c2 = psd_from_spectrum(l2, rng);
        const double ab = frechet_distance(m1, c1, m2, c2), ba = frechet_distance(m2, c2, m1, c1);
        EXPECT_GE(ab, 0.0);
        EXPECT_NEAR(ab, ba, 1e-9 * std::max(1.0, ab));
        EXPECT_GT(ab, 1e-6);
        EXPECT_NEAR(frechet_distance(m1, c1, m1, c1), 0.0, 1e-9);
    }
}

TEST(Frechet, RejectsAsymmetricCovariance) {
    Eigen::Matrix2d c;
    c << 1.0, 0.5, 0.2, 1.0;
    const Eigen::Vector2d z = Eigen::Vector2d::Zero();
    EXPECT_THROW(frechet_distance(z, c, z, Eigen::Matrix2d::Identity()), ValidationError);
    EXPECT_THROW(frechet_distance(z, Eigen::Matrix2d::Identity(), Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity()),
                 ShapeError);
}

TEST(SqrtPsd, SquaresBack) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        // Commuting pair: shared eigenvectors.
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_rows(4, 4, rng));
        const Eigen::MatrixXd q = qr.householderQ();
        Eigen::Vector4d a, b;
        for (int j = 0; j < 4; ++j) {
            a(j) = rng.uniform(0.1, 3.0);
            b(j) = rng.uniform(0.1, 3.0);
        }
        const Eigen::MatrixXd c1 = q * a.asDiagonal() * q.transpose(), c2 = q * b.asDiagonal() * q.transpose();
        const Eigen::MatrixXd prod = 0.5 * (c1 * c2 + (c1 * c2).transpose());
        const Eigen::MatrixXd r = sqrt_psd(prod);
        EXPECT_LT((r * r - prod).norm() / prod.norm(), 1e-6);
    }
    Eigen::Matrix2d neg;
    neg << 1.0, 0.0, 0.0, -1e-14;
    EXPECT_EQ(sqrt_psd(neg)(1, 1), 0.0);
}

TEST(Pca, RankOneLine) {
    Eigen::MatrixXd curves(6, 5);
    const Eigen::RowVectorXd dir = Eigen::RowVectorXd::LinSpaced(5, 1, 2);
    for (int i = 0; i < 6; ++i) curves.row(i) = 0.5 * Eigen::RowVectorXd::Ones(5) + (i - 2.5) * dir;
    const auto map = fit_pca(curves);
    EXPECT_EQ(map.dim(), 1);
    EXPECT_NEAR(map.explained_fraction(), 1.0, 1e-12);

    PcaOptions three;
    three.d = 3;
    const auto reduced = fit_pca(curves, three);
    EXPECT_EQ(reduced.dim(), 1);
    EXPECT_TRUE(reduced.warning);
}

TEST(Pca, FullRankRoundTripAndOrthonormality) {
    Rng rng(5);
    const Eigen::MatrixXd curves = gaussian_rows(20, 6, rng);
    PcaOptions full;
    full.d = 6;
    const auto map = fit_pca(curves, full);
    ASSERT_EQ(map.dim(), 6);
    EXPECT_LT((reconstruct(map, project(map, curves)) - curves).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((map.components * map.components.transpose() - Eigen::MatrixXd::Identity(6, 6)).norm(), 1e-10);
    for (int j = 1; j < 6; ++j) EXPECT_GE(map.explained_variance(j - 1), map.explained_variance(j));
}

TEST(Pca, RecoversPrescribedSpectrum) {
    Rng rng(6);
    const int n = 4000, L = 12;
    const Eigen::Vector3d sd(3.0, 2.0, 1.0);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_rows(L, 3, rng));
    const Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(L, 3);
    Eigen::MatrixXd curves(n, L);
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
        curves.row(i) = (basis * sd.cwiseProduct(z)).transpose();
    }
    const auto map = fit_pca(curves);
    ASSERT_EQ(map.dim(), 3);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(map.explained_variance(j) / (sd(j) * sd(j)), 1.0, 0.05);
}

TEST(Pca, AutoDimensionIsCapped) {
    Rng rng(7);
    const auto map = fit_pca(gaussian_rows(60, 50, rng));
    EXPECT_LE(map.dim(), 32);
    const auto small = fit_pca(gaussian_rows(5, 50, rng));
    EXPECT_LE(small.dim(), 4);
}

TEST(Fid, IdentitySymmetryAndOrdering) {
    Rng rng(8);
    const Eigen::MatrixXd all = gaussian_rows(400, 8, rng);
    const auto map = fit_pca(all);
    EXPECT_NEAR(fid(all, all, map), 0.0, 1e-9);
    const Eigen::MatrixXd a = all.topRows(200), b = all.bottomRows(200);
    EXPECT_NEAR(fid(a, b, map), fid(b, a, map), 1e-9);
    const Eigen::MatrixXd shifted = a.array() + 1.0;
    EXPECT_GT(fid(a, b, map), 0.0);
    EXPECT_LT(fid(a, b, map), fid(a, shifted, map));
}

TEST(Fid, MeanShiftIsMonotone) {
    Rng rng(9);
    const Eigen::MatrixXd real = gaussian_rows(100, 4, rng);
    PcaOptions full;
    full.d = 4;
    const auto map = fit_pca(real, full);
    double prev = -1.0;
    for (double delta : {0.0, 0.1, 0.5, 1.0, 2.0}) {
        Eigen::MatrixXd moved = real;
        moved.col(0).array() += delta;
        const double v = fid(real, moved, map);
        EXPECT_NEAR(v, delta * delta, 1e-9);
        EXPECT_GT(v, prev);
        prev = v;
    }
}

TEST(PrecisionRecall, HandSetMatchesEnumeration) {
    Eigen::MatrixXd real(5, 2), synth(5, 2);
    real << 0, 0, 1, 0, 0, 1, 1, 1, 3, 3;
    synth << 0.5, 0.5, 1.2, 0.1, 2.0, 2.0, 5.0, 5.0, 0.0, 1.9;
    for (int k : {1, 2, 3}) {
        const auto got = precision_recall_points(real, synth, k);
        const auto want = testutil::brute_precision_recall(real, synth, k);
        EXPECT_DOUBLE_EQ(got.precision, want.first) << k;
        EXPECT_DOUBLE_EQ(got.recall, want.second) << k;
    }
}

TEST(PrecisionRecall, RandomSetsMatchEnumeration) {
    Rng rng(10);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::MatrixXd real = gaussian_rows(12, 3, rng);
        const Eigen::MatrixXd synth = (gaussian_rows(9, 3, rng).array() * 1.5 + 0.3).matrix();
        const int k = 1 + static_cast<int>(rng.below(4));
        const auto got = precision_recall_points(real, synth, k);
        const auto want = testutil::brute_precision_recall(real, synth, k);
        EXPECT_DOUBLE_EQ(got.precision, want.first);
        EXPECT_DOUBLE_EQ(got.recall, want.second);
    }
}

TEST(PrecisionRecall, IdenticalAndDisjoint) {
    Rng rng(11);
    const Eigen::MatrixXd pts = gaussian_rows(10, 2, rng);
    for (int k = 1; k < 10; ++k) {
        const auto same = precision_recall_points(pts, pts, k);
        EXPECT_EQ(same.precision, 1.0);
        EXPECT_EQ(same.recall, 1.0);
    }
    const Eigen::MatrixXd far = pts.array() + 1e3;
    const auto apart = precision_recall_points(pts, far, 3);
    EXPECT_EQ(apart.precision, 0.0);
    EXPECT_EQ(apart.recall, 0.0);

    // Duplicates give zero radii; only exact matches fall inside.
    Eigen::MatrixXd dup(4, 1), probe(4, 1);
    dup << 0, 0, 5, 5;
    probe << 0, 0.1, 5, 7;
    EXPECT_DOUBLE_EQ(precision_recall_points(dup, probe, 1).precision, 0.5);
    EXPECT_THROW(precision_recall_points(pts.topRows(3), pts, 3), ShapeError);
}

TEST(Forest, SingleTreeMemorizes) {
    Rng rng(12);
    const Eigen::MatrixXd x = gaussian_rows(40, 3, rng);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) y(i) = rng.uniform(100, 900);
    ForestConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    const auto f = train_forest(x, y, cfg);
    EXPECT_EQ(forest_predict(f, x), y);
}

TEST(Forest, ConstantLabels) {
    Rng rng(13);
    const Eigen::MatrixXd x = gaussian_rows(25, 4, rng);
    ForestConfig cfg;
    cfg.n_trees = 10;
    const auto f = train_forest(x, Eigen::VectorXd::Constant(25, 321.0), cfg);
    const auto p = forest_predict(f, gaussian_rows(7, 4, rng));
    for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_EQ(p(i), 321.0);
}

TEST(Forest, RowPermutationInvariant) {
    Rng rng(14);
    const Eigen::MatrixXd x = gaussian_rows(30, 3, rng);
    Eigen::VectorXd y = x.col(0) * 10 + x.col(1).cwiseAbs() * 3;
    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 29; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    Eigen::MatrixXd xp(30, 3);
    Eigen::VectorXd yp(30);
    for (int i = 0; i < 30; ++i) {
        xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        yp(i) = y(perm[static_cast<std::size_t>(i)]);
    }
    ForestConfig cfg;
    cfg.n_trees = 15;
    cfg.max_features = 2;
    cfg.seed = 3;
    const Eigen::MatrixXd probe = gaussian_rows(10, 3, rng);
    EXPECT_EQ(forest_predict(train_forest(x, y, cfg), probe), forest_predict(train_forest(xp, yp, cfg), probe));
}

TEST(Forest, BeatsMeanBaselineOnDeterministicTarget) {
    Rng rng(15);
    const Eigen::MatrixXd x = gaussian_rows(200, 4, rng), xt = gaussian_rows(100, 4, rng);
    auto target = [](const Eigen::MatrixXd& m) {
        Eigen::VectorXd y(m.rows());
        for (Eigen::Index i = 0; i < m.rows(); ++i) y(i) = 500 + 100 * m(i, 0) + 40 * std::sin(2 * m(i, 1));
        return y;
    };
    const Eigen::VectorXd y = target(x), yt = target(xt);
    ForestConfig cfg;
    cfg.n_trees = 30;
    const Eigen::VectorXd p = forest_predict(train_forest(x, y, cfg), xt);
    const double rmse = std::sqrt((p - yt).squaredNorm() / 100.0);
    const double base = std::sqrt((yt.array() - y.mean()).square().mean());
    EXPECT_LT(rmse, 0.5 * base);
}

TEST(Forest, DeterministicAndValidated) {
    Rng rng(16);
    const Eigen::MatrixXd x = gaussian_rows(20, 2, rng);
    const Eigen::VectorXd y = x.col(0);
    ForestConfig cfg;
    cfg.n_trees = 5;
    EXPECT_EQ(forest_predict(train_forest(x, y, cfg), x), forest_predict(train_forest(x, y, cfg), x));
    cfg.n_trees = 0;
    EXPECT_THROW(train_forest(x, y, cfg), ConfigError);
    cfg.n_trees = 5;
    EXPECT_THROW(train_forest(x, Eigen::VectorXd::Zero(19), cfg), ShapeError);
    EXPECT_THROW(train_forest(x.topRows(1), y.head(1), cfg), ShapeError);
}
