#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace diffbatt::nn {

using Matrix = Eigen::MatrixXd;

/// Handle to a node of a Graph.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Tape-based reverse-mode differentiation over dense matrices.
///
/// Feature maps of the 1D U-Net are laid out as C x (B * L) matrices
/// (channels by batch-major positions); token sequences are (S * N) x d
/// (segment-major rows). Every op appends a node; backward() walks the
/// tape in reverse. A graph built with record = false keeps values only.
class Graph {
public:
    explicit Graph(bool record = true) : record_(record) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Matrix value);
    /// Leaf that reads `value` in place. Gradients are added to `*sink`
    /// (which must be pre-sized) during backward; sink may be null.
    Var parameter(const Matrix& value, Matrix* sink);

    const Matrix& value(Var v) const;
    bool recording() const { return record_; }
    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

    /// Seeds d(root)/d(root) = 1 for a 1 x 1 root and propagates.
    void backward(Var root);

    /// Accumulated gradient of a node after backward(); empty if none flowed.
    const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

    std::size_t size() const { return nodes_.size(); }

    // Op plumbing.
    using Backward = std::function<void(Graph&, const Matrix& grad_out)>;
    Var push(Matrix value, std::initializer_list<Var> inputs, Backward back) {
        return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
    }
    Var push(Matrix value, std::span<const Var> inputs, Backward back);
    void accumulate(Var v, const Matrix& g);
    template <class Expr>
    void accumulate_expr(Var v, const Expr& g) {
        auto& n = nodes_[static_cast<std::size_t>(v.id)];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

private:
    struct Node {
        Matrix own;
        const Matrix* external = nullptr;
        Matrix grad;
        Matrix* sink = nullptr;
        bool requires_grad = false;
        Backward back;
    };
    std::vector<Node> nodes_;
    bool record_;
};

struct ConvGeometry {
    int batch = 1;
    int length = 1;  // input positions per batch item
    int kernel = 3;
    int stride = 1;
    int padding = 1;

    int out_length() const { return (length + 2 * padding - kernel) / stride + 1; }
};

// Elementwise and linear algebra.
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var matmul(Graph& g, Var a, Var b);
/// x W^T + b with x (n x in), W (out x in), b (1 x out).
Var linear(Graph& g, Var x, Var w, Var b);
Var add_row_broadcast(Graph& g, Var x, Var row);  // x (n x d) + row (1 x d)
Var add_col_broadcast(Graph& g, Var x, Var col);  // x (c x m) + col (c x 1)
Var transpose(Graph& g, Var a);
Var silu(Graph& g, Var a);
Var gelu(Graph& g, Var a);

// Shape manipulation.
Var concat_rows(Graph& g, Var top, Var bottom);
Var concat_cols(Graph& g, Var left, Var right);
Var col_block(Graph& g, Var x, int start, int count);
Var row_block(Graph& g, Var x, int start, int count);
Var stack_rows(Graph& g, const std::vector<Var>& rows);

// Feature-map ops on C x (B * L).
/// Weight layout: (C_out x C_in * K), column index ci * K + k. Bias: C_out x 1.
Var conv1d(Graph& g, Var x, Var w, Var b, const ConvGeometry& geo);
Var group_norm(Graph& g, Var x, Var gamma, Var beta, int groups, int batch, int length, double eps = 1e-5);
Var upsample_nearest2(Graph& g, Var x, int batch, int length);
/// map (C x B * L) plus emb (B x C) broadcast over positions.
Var add_channel_embedding(Graph& g, Var map, Var emb, int batch, int length);

// Token ops on (S * N) x d.
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5);
/// Scaled dot-product self-attention within each segment of N rows.
Var attention(Graph& g, Var q, Var k, Var v, int segments, int heads);
Var segment_mean_rows(Graph& g, Var x, int segments);

/// mean((pred - target)^2) as a 1 x 1 node; target is constant.
Var mse(Graph& g, Var pred, const Matrix& target);

/// Largest divisor of `channels` that does not exceed `max_groups`.
int norm_groups(int channels, int max_groups = 8);

}  // namespace diffbatt::nn
