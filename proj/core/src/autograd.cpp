#include "diffbatt/autograd.hpp"

#include <cmath>
#include <numbers>

#include "diffbatt/errors.hpp"

namespace diffbatt::nn {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

Var Graph::constant(Matrix value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(const Matrix& value, Matrix* sink) {
    Node n;
    n.external = &value;
    n.sink = sink;
    n.requires_grad = record_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Graph::value(Var v) const {
    const auto& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.external != nullptr ? *n.external : n.own;
}

Var Graph::push(Matrix value, std::span<const Var> inputs, Backward back) {
    Node n;
    n.own = std::move(value);
    if (record_) {
        for (Var in : inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in.id)].requires_grad;
        if (n.requires_grad) n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Matrix& g) { accumulate_expr(v, g); }

void Graph::backward(Var root) {
    if (!record_) throw ConfigError("backward() on a graph built without recording");
    auto& r = nodes_[static_cast<std::size_t>(root.id)];
    require(value(root).size() == 1, "backward", "root must be 1x1");
    if (!r.requires_grad) return;
    r.grad = Matrix::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.size() == 0) continue;
        if (n.back) n.back(*this, n.grad);
        if (n.sink != nullptr) *n.sink += n.grad;
    }
}

// ---------------------------------------------------------------------------

Var add(Graph& g, Var a, Var b) {
    require(g.value(a).rows() == g.value(b).rows() && g.value(a).cols() == g.value(b).cols(), "add",
            dims(g.value(a)) + " vs " + dims(g.value(b)));
    return g.push(g.value(a) + g.value(b), {a, b}, [a, b](Graph& gr, const Matrix& d) {
        gr.accumulate(a, d);
        gr.accumulate(b, d);
    });
}

Var sub(Graph& g, Var a, Var b) {
    require(g.value(a).rows() == g.value(b).rows() && g.value(a).cols() == g.value(b).cols(), "sub",
            dims(g.value(a)) + " vs " + dims(g.value(b)));
    return g.push(g.value(a) - g.value(b), {a, b}, [a, b](Graph& gr, const Matrix& d) {
        gr.accumulate(a, d);
        gr.accumulate_expr(b, -d);
    });
}

Var scale(Graph& g, Var a, double s) {
    return g.push(g.value(a) * s, {a}, [a, s](Graph& gr, const Matrix& d) { gr.accumulate_expr(a, d * s); });
}

Var matmul(Graph& g, Var a, Var b) {
    require(g.value(a).cols() == g.value(b).rows(), "matmul", dims(g.value(a)) + " * " + dims(g.value(b)));
    Matrix out = g.value(a) * g.value(b);
    return g.push(std::move(out), {a, b}, [a, b](Graph& gr, const Matrix& d) {
        if (gr.requires_grad(a)) gr.accumulate_expr(a, d * gr.value(b).transpose());
        if (gr.requires_grad(b)) gr.accumulate_expr(b, gr.value(a).transpose() * d);
    });
}

Var linear(Graph& g, Var x, Var w, Var b) {
    const Matrix& X = g.value(x);
    const Matrix& W = g.value(w);
    const Matrix& B = g.value(b);
    require(X.cols() == W.cols(), "linear", "input " + dims(X) + " weight " + dims(W));
    require(B.rows() == 1 && B.cols() == W.rows(), "linear", "bias " + dims(B));
    Matrix out = X * W.transpose();
    out.rowwise() += B.row(0);
    return g.push(std::move(out), {x, w, b}, [x, w, b](Graph& gr, const Matrix& d) {
        if (gr.requires_grad(x)) gr.accumulate_expr(x, d * gr.value(w));
        if (gr.requires_grad(w)) gr.accumulate_expr(w, d.transpose() * gr.value(x));
        if (gr.requires_grad(b)) gr.accumulate_expr(b, d.colwise().sum());
    });
}

Var add_row_broadcast(Graph& g, Var x, Var row) {
    const Matrix& R = g.value(row);
    require(R.rows() == 1 && R.cols() == g.value(x).cols(), "add_row_broadcast", dims(R));
    Matrix out = g.value(x);
    out.rowwise() += R.row(0);
    return g.push(std::move(out), {x, row}, [x, row](Graph& gr, const Matrix& d) {
        gr.accumulate(x, d);
        if (gr.requires_grad(row)) gr.accumulate_expr(row, d.colwise().sum());
    });
}

Var add_col_broadcast(Graph& g, Var x, Var col) {
    const Matrix& C = g.value(col);
    require(C.cols() == 1 && C.rows() == g.value(x).rows(), "add_col_broadcast", dims(C));
    Matrix out = g.value(x);
    out.colwise() += C.col(0);
    return g.push(std::move(out), {x, col}, [x, col](Graph& gr, const Matrix& d) {
        gr.accumulate(x, d);
        if (gr.requires_grad(col)) gr.accumulate_expr(col, d.rowwise().sum());
    });
}

Var transpose(Graph& g, Var a) {
    return g.push(g.value(a).transpose(), {a},
                  [a](Graph& gr, const Matrix& d) { gr.accumulate_expr(a, d.transpose()); });
}

Var silu(Graph& g, Var a) {
    const Matrix& X = g.value(a);
    Matrix sig = (1.0 + (-X.array()).exp()).inverse().matrix();
    Matrix out = X.cwiseProduct(sig);
    return g.push(std::move(out), {a}, [a, sig = std::move(sig)](Graph& gr, const Matrix& d) {
        const auto& X = gr.value(a).array();
        gr.accumulate_expr(a, (d.array() * sig.array() * (1.0 + X * (1.0 - sig.array()))).matrix());
    });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

Var gelu(Graph& g, Var a) {
    constexpr double c = kGeluC;
    const auto X = g.value(a).array();
    Matrix th = (c * (X + 0.044715 * X.cube())).tanh().matrix();
    Matrix out = (0.5 * X * (1.0 + th.array())).matrix();
    return g.push(std::move(out), {a}, [a, th = std::move(th)](Graph& gr, const Matrix& d) {
        const auto X = gr.value(a).array();
        const auto t = th.array();
        const auto dinner = kGeluC * (1.0 + 3.0 * 0.044715 * X.square());
        const auto deriv = 0.5 * (1.0 + t) + 0.5 * X * (1.0 - t.square()) * dinner;
        gr.accumulate_expr(a, (d.array() * deriv).matrix());
    });
}

Var concat_rows(Graph& g, Var top, Var bottom) {
    const Matrix& A = g.value(top);
    const Matrix& B = g.value(bottom);
    require(A.cols() == B.cols(), "concat_rows", dims(A) + " over " + dims(B));
    Matrix out(A.rows() + B.rows(), A.cols());
    out << A, B;
    const auto ra = A.rows(), rb = B.rows();
    return g.push(std::move(out), {top, bottom}, [top, bottom, ra, rb](Graph& gr, const Matrix& d) {
        if (gr.requires_grad(top)) gr.accumulate_expr(top, d.topRows(ra));
        if (gr.requires_grad(bottom)) gr.accumulate_expr(bottom, d.bottomRows(rb));
    });
}

Var concat_cols(Graph& g, Var left, Var right) {
    const Matrix& A = g.value(left);
    const Matrix& B = g.value(right);
    require(A.rows() == B.rows(), "concat_cols", dims(A) + " beside " + dims(B));
    Matrix out(A.rows(), A.cols() + B.cols());
    out << A, B;
    const auto ca = A.cols(), cb = B.cols();
    return g.push(std::move(out), {left, right}, [left, right, ca, cb](Graph& gr, const Matrix& d) {
        if (gr.requires_grad(left)) gr.accumulate_expr(left, d.leftCols(ca));
        if (gr.requires_grad(right)) gr.accumulate_expr(right, d.rightCols(cb));
    });
}

Var col_block(Graph& g, Var x, int start, int count) {
    const Matrix& X = g.value(x);
    require(start >= 0 && count >= 0 && start + count <= X.cols(), "col_block", "range outside " + dims(X));
    const auto cols = X.cols();
    return g.push(X.middleCols(start, count), {x}, [x, start, count, cols](Graph& gr, const Matrix& d) {
        Matrix full = Matrix::Zero(d.rows(), cols);
        full.middleCols(start, count) = d;
        gr.accumulate(x, full);
    });
}

Var row_block(Graph& g, Var x, int start, int count) {
    const Matrix& X = g.value(x);
    require(start >= 0 && count >= 0 && start + count <= X.rows(), "row_block", "range outside " + dims(X));
    const auto rows = X.rows();
    return g.push(X.middleRows(start, count), {x}, [x, start, count, rows](Graph& gr, const Matrix& d) {
        Matrix full = Matrix::Zero(rows, d.cols());
        full.middleRows(start, count) = d;
        gr.accumulate(x, full);
    });
}

Var stack_rows(Graph& g, const std::vector<Var>& rows) {
    require(!rows.empty(), "stack_rows", "no inputs");
    const auto cols = g.value(rows.front()).cols();
    Matrix out(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Matrix& r = g.value(rows[i]);
        require(r.rows() == 1 && r.cols() == cols, "stack_rows", "row " + std::to_string(i) + " is " + dims(r));
        out.row(static_cast<Eigen::Index>(i)) = r.row(0);
    }
    return g.push(std::move(out), std::span<const Var>(rows), [rows](Graph& gr, const Matrix& d) {
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (gr.requires_grad(rows[i])) gr.accumulate_expr(rows[i], d.row(static_cast<Eigen::Index>(i)));
    });
}

Var conv1d(Graph& g, Var x, Var w, Var b, const ConvGeometry& geo) {
    const Matrix& X = g.value(x);
    const Matrix& W = g.value(w);
    const auto c_in = X.rows();
    const int L = geo.length, K = geo.kernel, Lo = geo.out_length(), B = geo.batch;
    require(X.cols() == static_cast<Eigen::Index>(B) * L, "conv1d", "input " + dims(X) + " for batch " +
                                                                       std::to_string(B) + " x " + std::to_string(L));
    require(W.cols() == c_in * K, "conv1d", "weight " + dims(W) + " for " + std::to_string(c_in) + " channels");
    require(g.value(b).rows() == W.rows() && g.value(b).cols() == 1, "conv1d", "bias " + dims(g.value(b)));

    Matrix col(c_in * K, static_cast<Eigen::Index>(B) * Lo);
    for (int bi = 0; bi < B; ++bi) {
        for (int lo = 0; lo < Lo; ++lo) {
            double* dst = col.col(static_cast<Eigen::Index>(bi) * Lo + lo).data();
            for (int k = 0; k < K; ++k) {
                const int li = lo * geo.stride + k - geo.padding;
                if (li < 0 || li >= L) {
                    for (Eigen::Index ci = 0; ci < c_in; ++ci) dst[ci * K + k] = 0.0;
                    continue;
                }
                const double* src = X.col(static_cast<Eigen::Index>(bi) * L + li).data();
                for (Eigen::Index ci = 0; ci < c_in; ++ci) dst[ci * K + k] = src[ci];
            }
        }
    }
    Matrix out = W * col;
    out.colwise() += g.value(b).col(0);
    return g.push(std::move(out), {x, w, b}, [x, w, b, geo, col = std::move(col)](Graph& gr, const Matrix& d) {
        if (gr.requires_grad(w)) gr.accumulate_expr(w, d * col.transpose());
        if (gr.requires_grad(b)) gr.accumulate_expr(b, d.rowwise().sum());
        if (!gr.requires_grad(x)) return;
        const Matrix dcol = gr.value(w).transpose() * d;
        const auto c_in = gr.value(x).rows();
        const int L = geo.length, K = geo.kernel, Lo = geo.out_length();
        Matrix dx = Matrix::Zero(c_in, static_cast<Eigen::Index>(geo.batch) * L);
        for (int bi = 0; bi < geo.batch; ++bi) {
            for (int lo = 0; lo < Lo; ++lo) {
                const auto oc = static_cast<Eigen::Index>(bi) * Lo + lo;
                for (int k = 0; k < K; ++k) {
                    const int li = lo * geo.stride + k - geo.padding;
                    if (li < 0 || li >= L) continue;
                    const auto ic = static_cast<Eigen::Index>(bi) * L + li;
                    for (Eigen::Index ci = 0; ci < c_in; ++ci) dx(ci, ic) += dcol(ci * K + k, oc);
                }
            }
        }
        gr.accumulate(x, dx);
    });
}

Var group_norm(Graph& g, Var x, Var gamma, Var beta, int groups, int batch, int length, double eps) {
    const Matrix& X = g.value(x);
    const auto C = X.rows();
    require(groups >= 1 && C % groups == 0, "group_norm", std::to_string(C) + " channels, " + std::to_string(groups) + " groups");
    require(X.cols() == static_cast<Eigen::Index>(batch) * length, "group_norm", "input " + dims(X));
    require(g.value(gamma).rows() == C && g.value(beta).rows() == C, "group_norm", "affine parameters");
    const auto cpg = C / groups;
    const double n = static_cast<double>(cpg * length);

    Matrix xhat(C, X.cols());
    Eigen::VectorXd inv_std(static_cast<Eigen::Index>(groups) * batch);
    for (int bi = 0; bi < batch; ++bi) {
        for (int gi = 0; gi < groups; ++gi) {
            auto blk = X.block(gi * cpg, static_cast<Eigen::Index>(bi) * length, cpg, length);
            const double mean = blk.sum() / n;
            const double var = (blk.array() - mean).square().sum() / n;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std(static_cast<Eigen::Index>(bi) * groups + gi) = is;
            xhat.block(gi * cpg, static_cast<Eigen::Index>(bi) * length, cpg, length) = ((blk.array() - mean) * is).matrix();
        }
    }
    Matrix out = xhat;
    out.array().colwise() *= g.value(gamma).col(0).array();
    out.colwise() += g.value(beta).col(0);
    return g.push(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, groups, batch, length, cpg, n, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Graph& gr, const Matrix& d) {
                      if (gr.requires_grad(gamma)) gr.accumulate_expr(gamma, d.cwiseProduct(xhat).rowwise().sum());
                      if (gr.requires_grad(beta)) gr.accumulate_expr(beta, d.rowwise().sum());
                      if (!gr.requires_grad(x)) return;
                      Matrix dxhat = d;
                      dxhat.array().colwise() *= gr.value(gamma).col(0).array();
                      Matrix dx(d.rows(), d.cols());
                      for (int bi = 0; bi < batch; ++bi) {
                          for (int gi = 0; gi < groups; ++gi) {
                              const auto r0 = gi * cpg;
                              const auto c0 = static_cast<Eigen::Index>(bi) * length;
                              auto dh = dxhat.block(r0, c0, cpg, length).array();
                              auto xh = xhat.block(r0, c0, cpg, length).array();
                              const double s1 = dh.sum();
                              const double s2 = (dh * xh).sum();
                              const double is = inv_std(static_cast<Eigen::Index>(bi) * groups + gi);
                              dx.block(r0, c0, cpg, length) = ((dh - s1 / n - xh * (s2 / n)) * is).matrix();
                          }
                      }
                      gr.accumulate(x, dx);
                  });
}

Var upsample_nearest2(Graph& g, Var x, int batch, int length) {
    const Matrix& X = g.value(x);
    require(X.cols() == static_cast<Eigen::Index>(batch) * length, "upsample_nearest2", "input " + dims(X));
    Matrix out(X.rows(), X.cols() * 2);
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        out.col(2 * c) = X.col(c);
        out.col(2 * c + 1) = X.col(c);
    }
    return g.push(std::move(out), {x}, [x](Graph& gr, const Matrix& d) {
        Matrix dx(d.rows(), d.cols() / 2);
        for (Eigen::Index c = 0; c < dx.cols(); ++c) dx.col(c) = d.col(2 * c) + d.col(2 * c + 1);
        gr.accumulate(x, dx);
    });
}

Var add_channel_embedding(Graph& g, Var map, Var emb, int batch, int length) {
    const Matrix& M = g.value(map);
    const Matrix& E = g.value(emb);
    require(E.rows() == batch && E.cols() == M.rows(), "add_channel_embedding", "embedding " + dims(E) + " for map " + dims(M));
    Matrix out = M;
    for (int bi = 0; bi < batch; ++bi)
        out.middleCols(static_cast<Eigen::Index>(bi) * length, length).colwise() += E.row(bi).transpose();
    return g.push(std::move(out), {map, emb}, [map, emb, batch, length](Graph& gr, const Matrix& d) {
        gr.accumulate(map, d);
        if (!gr.requires_grad(emb)) return;
        Matrix de(batch, d.rows());
        for (int bi = 0; bi < batch; ++bi)
            de.row(bi) = d.middleCols(static_cast<Eigen::Index>(bi) * length, length).rowwise().sum().transpose();
        gr.accumulate(emb, de);
    });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
    const Matrix& X = g.value(x);
    const auto D = X.cols();
    require(g.value(gamma).cols() == D && g.value(beta).cols() == D, "layer_norm", "affine parameters");
    const double n = static_cast<double>(D);
    Eigen::VectorXd mean = X.rowwise().mean();
    Matrix centered = X.colwise() - mean;
    Eigen::VectorXd inv_std = ((centered.array().square().rowwise().sum() / n) + eps).rsqrt().matrix();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix out = xhat.array().rowwise() * g.value(gamma).row(0).array();
    out.rowwise() += g.value(beta).row(0);
    return g.push(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, const Matrix& d) {
                      if (gr.requires_grad(gamma)) gr.accumulate_expr(gamma, d.cwiseProduct(xhat).colwise().sum());
                      if (gr.requires_grad(beta)) gr.accumulate_expr(beta, d.colwise().sum());
                      if (!gr.requires_grad(x)) return;
                      Matrix dxhat = d.array().rowwise() * gr.value(gamma).row(0).array();
                      Eigen::VectorXd s1 = dxhat.rowwise().sum() / n;
                      Eigen::VectorXd s2 = dxhat.cwiseProduct(xhat).rowwise().sum() / n;
                      Matrix dx = dxhat.colwise() - s1;
                      dx -= (xhat.array().colwise() * s2.array()).matrix();
                      dx.array().colwise() *= inv_std.array();
                      gr.accumulate(x, dx);
                  });
}

Var attention(Graph& g, Var q, Var k, Var v, int segments, int heads) {
    const Matrix& Q = g.value(q);
    const Matrix& K = g.value(k);
    const Matrix& V = g.value(v);
    require(Q.rows() == K.rows() && Q.rows() == V.rows() && Q.cols() == K.cols() && Q.cols() == V.cols(), "attention",
            "q " + dims(Q) + " k " + dims(K) + " v " + dims(V));
    require(Q.rows() % segments == 0 && Q.cols() % heads == 0, "attention", "segments/heads do not divide " + dims(Q));
    const auto N = Q.rows() / segments;
    const auto dh = Q.cols() / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Matrix> probs(static_cast<std::size_t>(segments) * heads);
    Matrix out(Q.rows(), Q.cols());
    for (int s = 0; s < segments; ++s) {
        for (int h = 0; h < heads; ++h) {
            const auto r0 = s * N, c0 = h * dh;
            Matrix S = (Q.block(r0, c0, N, dh) * K.block(r0, c0, N, dh).transpose()) * sc;
            Eigen::VectorXd mx = S.rowwise().maxCoeff();
            S = (S.colwise() - mx).array().exp().matrix();
            Eigen::VectorXd z = S.rowwise().sum();
            S.array().colwise() /= z.array();
            out.block(r0, c0, N, dh) = S * V.block(r0, c0, N, dh);
            probs[static_cast<std::size_t>(s) * heads + h] = std::move(S);
        }
    }
    return g.push(std::move(out), {q, k, v},
                  [q, k, v, segments, heads, N, dh, sc, probs = std::move(probs)](Graph& gr, const Matrix& d) {
                      const Matrix& Q = gr.value(q);
                      const Matrix& K = gr.value(k);
                      const Matrix& V = gr.value(v);
                      Matrix dq = Matrix::Zero(Q.rows(), Q.cols());
                      Matrix dk = Matrix::Zero(Q.rows(), Q.cols());
                      Matrix dv = Matrix::Zero(Q.rows(), Q.cols());
                      for (int s = 0; s < segments; ++s) {
                          for (int h = 0; h < heads; ++h) {
                              const auto r0 = s * N, c0 = h * dh;
                              const Matrix& P = probs[static_cast<std::size_t>(s) * heads + h];
                              auto dO = d.block(r0, c0, N, dh);
                              dv.block(r0, c0, N, dh) = P.transpose() * dO;
                              Matrix dP = dO * V.block(r0, c0, N, dh).transpose();
                              Eigen::VectorXd rs = dP.cwiseProduct(P).rowwise().sum();
                              Matrix dS = (P.array() * (dP.colwise() - rs).array()).matrix() * sc;
                              dq.block(r0, c0, N, dh) = dS * K.block(r0, c0, N, dh);
                              dk.block(r0, c0, N, dh) = dS.transpose() * Q.block(r0, c0, N, dh);
                          }
                      }
                      if (gr.requires_grad(q)) gr.accumulate(q, dq);
                      if (gr.requires_grad(k)) gr.accumulate(k, dk);
                      if (gr.requires_grad(v)) gr.accumulate(v, dv);
                  });
}

Var segment_mean_rows(Graph& g, Var x, int segments) {
    const Matrix& X = g.value(x);
    require(X.rows() % segments == 0, "segment_mean_rows", dims(X) + " with " + std::to_string(segments) + " segments");
    const auto N = X.rows() / segments;
    Matrix out(segments, X.cols());
    for (int s = 0; s < segments; ++s) out.row(s) = X.middleRows(s * N, N).colwise().mean();
    return g.push(std::move(out), {x}, [x, segments, N](Graph& gr, const Matrix& d) {
        Matrix dx(N * segments, d.cols());
        for (int s = 0; s < segments; ++s)
            dx.middleRows(s * N, N) = d.row(s).replicate(N, 1) / static_cast<double>(N);
        gr.accumulate(x, dx);
    });
}

Var mse(Graph& g, Var pred, const Matrix& target) {
    const Matrix& P = g.value(pred);
    require(P.rows() == target.rows() && P.cols() == target.cols(), "mse", dims(P) + " vs " + dims(target));
    Matrix diff = P - target;
    const double n = static_cast<double>(diff.size());
    Matrix out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    return g.push(std::move(out), {pred}, [pred, n, diff = std::move(diff)](Graph& gr, const Matrix& d) {
        gr.accumulate_expr(pred, diff * (2.0 * d(0, 0) / n));
    });
}

int norm_groups(int channels, int max_groups) {
    for (int gcount = std::min(channels, max_groups); gcount > 1; --gcount)
        if (channels % gcount == 0) return gcount;
    return 1;
}

}  // namespace diffbatt::nn
