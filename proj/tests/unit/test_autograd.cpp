#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "diffbatt/autograd.hpp"
#include "diffbatt/errors.hpp"
#include "diffbatt/rng.hpp"

using namespace diffbatt;
using namespace diffbatt::nn;

namespace {

using Op = std::function<Var(Graph&, const std::vector<Var>&)>;

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
    return m;
}

double loss_value(const Op& op, const std::vector<Matrix>& inputs, const Matrix& target) {
    Graph g(false);
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(g.constant(m));
    return g.value(mse(g, op(g, vars), target))(0, 0);
}

// Central differences against backward() for every input entry.
void check_gradients(const Op& op, std::vector<Matrix> inputs, std::uint64_t seed = 1, double tol = 1e-6) {
    Rng rng(seed);
    Matrix target;
    {
        Graph g(false);
        std::vector<Var> vars;
        for (const auto& m : inputs) vars.push_back(g.constant(m));
        const Matrix& out = g.value(op(g, vars));
        target = random_matrix(static_cast<int>(out.rows()), static_cast<int>(out.cols()), rng);
    }
    std::vector<Matrix> grads;
    for (const auto& m : inputs) grads.push_back(Matrix::Zero(m.rows(), m.cols()));
    {
        Graph g;
        std::vector<Var> vars;
        for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(g.parameter(inputs[i], &grads[i]));
        g.backward(mse(g, op(g, vars), target));
    }
    const double h = 1e-6;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
            const double orig = inputs[i](k);
            inputs[i](k) = orig + h;
            const double up = loss_value(op, inputs, target);
            inputs[i](k) = orig - h;
            const double down = loss_value(op, inputs, target);
            inputs[i](k) = orig;
            const double fd = (up - down) / (2 * h);
            const double an = grads[i](k);
            EXPECT_NEAR(an, fd, tol * std::max(1.0, std::abs(fd))) << "input " << i << " entry " << k;
        }
    }
}

}  // namespace

class AutogradOps : public ::testing::Test {
protected:
    Rng rng{42};
    Matrix M(int r, int c, double s = 1.0) { return random_matrix(r, c, rng, s); }
};

TEST_F(AutogradOps, Elementwise) {
    check_gradients([](Graph& g, const auto& v) { return add(g, v[0], v[1]); }, {M(3, 4), M(3, 4)});
    check_gradients([](Graph& g, const auto& v) { return sub(g, v[0], v[1]); }, {M(3, 4), M(3, 4)});
    check_gradients([](Graph& g, const auto& v) { return scale(g, v[0], -2.5); }, {M(2, 5)});
    check_gradients([](Graph& g, const auto& v) { return silu(g, v[0]); }, {M(4, 4, 2.0)});
    check_gradients([](Graph& g, const auto& v) { return gelu(g, v[0]); }, {M(4, 4, 2.0)});
    check_gradients([](Graph& g, const auto& v) { return transpose(g, v[0]); }, {M(3, 2)});
}

TEST_F(AutogradOps, LinearAlgebra) {
    check_gradients([](Graph& g, const auto& v) { return matmul(g, v[0], v[1]); }, {M(3, 4), M(4, 2)});
    check_gradients([](Graph& g, const auto& v) { return linear(g, v[0], v[1], v[2]); }, {M(5, 3), M(4, 3), M(1, 4)});
    check_gradients([](Graph& g, const auto& v) { return add_row_broadcast(g, v[0], v[1]); }, {M(5, 3), M(1, 3)});
    check_gradients([](Graph& g, const auto& v) { return add_col_broadcast(g, v[0], v[1]); }, {M(3, 5), M(3, 1)});
}

TEST_F(AutogradOps, ShapeOps) {
    check_gradients([](Graph& g, const auto& v) { return concat_rows(g, v[0], v[1]); }, {M(2, 3), M(4, 3)});
    check_gradients([](Graph& g, const auto& v) { return concat_cols(g, v[0], v[1]); }, {M(3, 2), M(3, 1)});
    check_gradients([](Graph& g, const auto& v) { return col_block(g, v[0], 1, 3); }, {M(2, 6)});
    check_gradients([](Graph& g, const auto& v) { return row_block(g, v[0], 2, 2); }, {M(5, 3)});
    check_gradients([](Graph& g, const auto& v) { return stack_rows(g, {v[0], v[1], v[0]}); }, {M(1, 4), M(1, 4)});
}

TEST_F(AutogradOps, Conv1d) {
    for (int stride : {1, 2}) {
        ConvGeometry geo{2, 6, 3, stride, 1};
        check_gradients([geo](Graph& g, const auto& v) { return conv1d(g, v[0], v[1], v[2], geo); },
                        {M(3, 12), M(4, 9), M(4, 1)});
    }
    ConvGeometry pointwise{3, 4, 1, 1, 0};
    check_gradients([pointwise](Graph& g, const auto& v) { return conv1d(g, v[0], v[1], v[2], pointwise); },
                    {M(2, 12), M(3, 2), M(3, 1)});
}

TEST_F(AutogradOps, Conv1dMatchesDirectSum) {
    const Matrix x = M(2, 10), w = M(3, 6), b = M(3, 1);
    ConvGeometry geo{2, 5, 3, 2, 1};
    Graph g(false);
    const Matrix& y = g.value(conv1d(g, g.constant(x), g.constant(w), g.constant(b), geo));
    const int lo = geo.out_length();
    ASSERT_EQ(y.cols(), 2 * lo);
    for (int bi = 0; bi < 2; ++bi)
        for (int p = 0; p < lo; ++p)
            for (int co = 0; co < 3; ++co) {
                double s = b(co, 0);
                for (int ci = 0; ci < 2; ++ci)
                    for (int k = 0; k < 3; ++k) {
                        const int src = p * 2 + k - 1;
                        if (src >= 0 && src < 5) s += w(co, ci * 3 + k) * x(ci, bi * 5 + src);
                    }
                EXPECT_NEAR(y(co, bi * lo + p), s, 1e-12);
            }
}

TEST_F(AutogradOps, Normalization) {
    check_gradients([](Graph& g, const auto& v) { return group_norm(g, v[0], v[1], v[2], 2, 2, 5); },
                    {M(4, 10), M(4, 1), M(4, 1)});
    check_gradients([](Graph& g, const auto& v) { return layer_norm(g, v[0], v[1], v[2]); },
                    {M(5, 6), M(1, 6), M(1, 6)});
}

TEST_F(AutogradOps, GroupNormStatistics) {
    Graph g(false);
    const Matrix ones = Matrix::Ones(4, 1), zeros = Matrix::Zero(4, 1);
    const Matrix& y = g.value(group_norm(g, g.constant(M(4, 14, 3.0)), g.constant(ones), g.constant(zeros), 2, 2, 7, 0.0));
    for (int grp = 0; grp < 2; ++grp)
        for (int bi = 0; bi < 2; ++bi) {
            const Matrix block = y.block(grp * 2, bi * 7, 2, 7);
            EXPECT_NEAR(block.mean(), 0.0, 1e-12);
            EXPECT_NEAR(block.array().square().mean(), 1.0, 1e-10);
        }
}

TEST_F(AutogradOps, MapOps) {
    check_gradients([](Graph& g, const auto& v) { return upsample_nearest2(g, v[0], 2, 3); }, {M(3, 6)});
    check_gradients([](Graph& g, const auto& v) { return add_channel_embedding(g, v[0], v[1], 2, 4); },
                    {M(3, 8), M(2, 3)});
}

TEST_F(AutogradOps, Attention) {
    check_gradients([](Graph& g, const auto& v) { return attention(g, v[0], v[1], v[2], 2, 2); },
                    {M(6, 4), M(6, 4), M(6, 4)});
    check_gradients([](Graph& g, const auto& v) { return segment_mean_rows(g, v[0], 3); }, {M(6, 2)});
}

TEST_F(AutogradOps, AttentionIsSegmentLocal) {
    // Changing segment 1 must leave segment 0 untouched.
    Matrix q = M(6, 4), k = M(6, 4), v = M(6, 4);
    auto run = [](const Matrix& q, const Matrix& k, const Matrix& v) {
        Graph g(false);
        return Matrix(g.value(attention(g, g.constant(q), g.constant(k), g.constant(v), 2, 1)));
    };
    const Matrix a = run(q, k, v);
    k.bottomRows(3).setRandom();
    v.bottomRows(3).setRandom();
    const Matrix b = run(q, k, v);
    EXPECT_EQ(a.topRows(3), b.topRows(3));
}

TEST_F(AutogradOps, ComposedGraphWithSharedInput) {
    check_gradients(
        [](Graph& g, const auto& v) {
            Var h = silu(g, linear(g, v[0], v[1], v[2]));
            return add(g, h, matmul(g, v[0], transpose(g, v[1])));
        },
        {M(4, 3), M(5, 3), M(1, 5)});
}

TEST(Autograd, MseValueAndGrad) {
    Matrix p(1, 2), t(1, 2);
    p << 1.0, 3.0;
    t << 0.0, 1.0;
    Matrix grad = Matrix::Zero(1, 2);
    Graph g;
    Var root = mse(g, g.parameter(p, &grad), t);
    EXPECT_DOUBLE_EQ(g.value(root)(0, 0), 2.5);
    g.backward(root);
    EXPECT_DOUBLE_EQ(grad(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(grad(0, 1), 2.0);
}

TEST(Autograd, NormGroups) {
    EXPECT_EQ(norm_groups(32), 8);
    EXPECT_EQ(norm_groups(12), 6);
    EXPECT_EQ(norm_groups(7), 7);
    EXPECT_EQ(norm_groups(1), 1);
}
