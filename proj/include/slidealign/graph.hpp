#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slidealign/mat.hpp"

namespace slidealign {

/// Reverse-mode autodiff over a linear tape of matrix nodes.
///
/// One Graph instance holds one forward pass. Trainable tensors enter via
/// `param(master, name)`, which copies the master value onto the tape and
/// remembers the binding so the optimizer (or a gradient checker) can read
/// the gradient back per named tensor after `backward()`.
///
/// Conventions used throughout the model code:
///   - rows are tokens/queries, columns are feature dimensions;
///   - linear layers apply y = x * W^T (W stored as out_dim x in_dim);
///   - scalars are 1x1 matrices.
template <typename Real>
class Graph {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    struct ParamBind {
        std::string name;
        Mat<Real>* master;
        Var var;
    };

    const Mat<Real>& val(Var v) const { return nodes_[check(v)].val; }
    const Mat<Real>& grad(Var v) const { return nodes_[check(v)].grad; }
    int rows(Var v) const { return val(v).rows; }
    int cols(Var v) const { return val(v).cols; }
    Real scalar(Var v) const {
        const Mat<Real>& m = val(v);
        if (m.rows != 1 || m.cols != 1) throw std::logic_error("Graph::scalar: node is not 1x1");
        return m.a[0];
    }

    const std::vector<ParamBind>& params() const { return binds_; }

    Var constant(Mat<Real> v) { return make(std::move(v), nullptr); }

    /// Tape input whose gradient is of interest but which is not a bound
    /// parameter (used by probes and tests).
    Var input(Mat<Real> v) { return make(std::move(v), nullptr); }

    Var param(Mat<Real>& master, const std::string& name) {
        Var v = make(Mat<Real>(master), nullptr);
        binds_.push_back(ParamBind{name, &master, v});
        return v;
    }

    // -- arithmetic ---------------------------------------------------------

    Var add(Var a, Var b) {
        const Mat<Real>&A = val(a), &B = val(b);
        require(A.same_shape(B), "add: shape mismatch " + shape_str(A.rows, A.cols) + " vs " +
                                     shape_str(B.rows, B.cols));
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] = A.a[i] + B.a[i];
        return make(std::move(out), [a, b](Graph& g, int self) {
            accumulate(g.nodes_[a.id].grad, g.nodes_[self].grad, Real(1));
            accumulate(g.nodes_[b.id].grad, g.nodes_[self].grad, Real(1));
        });
    }

    Var sub(Var a, Var b) {
        const Mat<Real>&A = val(a), &B = val(b);
        require(A.same_shape(B), "sub: shape mismatch");
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] = A.a[i] - B.a[i];
        return make(std::move(out), [a, b](Graph& g, int self) {
            accumulate(g.nodes_[a.id].grad, g.nodes_[self].grad, Real(1));
            accumulate(g.nodes_[b.id].grad, g.nodes_[self].grad, Real(-1));
        });
    }

    /// Broadcast-add a 1xC row vector to every row.
    Var add_rowvec(Var a, Var v) {
        const Mat<Real>&A = val(a), &V = val(v);
        require(V.rows == 1 && V.cols == A.cols, "add_rowvec: need 1x" + std::to_string(A.cols));
        Mat<Real> out(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) out(i, j) = A(i, j) + V(0, j);
        return make(std::move(out), [a, v](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            accumulate(g.nodes_[a.id].grad, go, Real(1));
            Mat<Real>& gv = g.nodes_[v.id].grad;
            for (int i = 0; i < go.rows; ++i)
                for (int j = 0; j < go.cols; ++j) gv(0, j) += go(i, j);
        });
    }

    Var scale(Var a, Real c) {
        Mat<Real> out = val(a);
        for (auto& x : out.a) x *= c;
        return make(std::move(out), [a, c](Graph& g, int self) {
            accumulate(g.nodes_[a.id].grad, g.nodes_[self].grad, c);
        });
    }

    /// Multiply every entry by a 1x1 scalar variable.
    Var scale_var(Var a, Var s) {
        const Mat<Real>& A = val(a);
        const Real sv = scalar(s);
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] = A.a[i] * sv;
        return make(std::move(out), [a, s, sv](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>& A = g.nodes_[a.id].val;
            accumulate(g.nodes_[a.id].grad, go, sv);
            Real acc = 0;
            for (std::size_t i = 0; i < go.size(); ++i) acc += go.a[i] * A.a[i];
            g.nodes_[s.id].grad.a[0] += acc;
        });
    }

    Var hadamard(Var a, Var b) {
        const Mat<Real>&A = val(a), &B = val(b);
        require(A.same_shape(B), "hadamard: shape mismatch");
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] = A.a[i] * B.a[i];
        return make(std::move(out), [a, b](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>&A = g.nodes_[a.id].val, &B = g.nodes_[b.id].val;
            Mat<Real>&ga = g.nodes_[a.id].grad, &gb = g.nodes_[b.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga.a[i] += go.a[i] * B.a[i];
                gb.a[i] += go.a[i] * A.a[i];
            }
        });
    }

    /// Elementwise multiply by a constant matrix (labels, masks).
    Var hadamard_const(Var a, Mat<Real> m) {
        const Mat<Real>& A = val(a);
        require(A.same_shape(m), "hadamard_const: shape mismatch");
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] = A.a[i] * m.a[i];
        auto mm = std::make_shared<Mat<Real>>(std::move(m));
        return make(std::move(out), [a, mm](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) ga.a[i] += go.a[i] * mm->a[i];
        });
    }

    /// Add a constant matrix (additive attention masks).
    Var add_const(Var a, const Mat<Real>& m) {
        const Mat<Real>& A = val(a);
        require(A.same_shape(m), "add_const: shape mismatch");
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.size(); ++i) out.a[i] = A.a[i] + m.a[i];
        return make(std::move(out), [a](Graph& g, int self) {
            accumulate(g.nodes_[a.id].grad, g.nodes_[self].grad, Real(1));
        });
    }

    Var neg(Var a) { return scale(a, Real(-1)); }

    // -- matrix products ----------------------------------------------------

    Var matmul(Var a, Var b) {
        const Mat<Real>&A = val(a), &B = val(b);
        require(A.cols == B.rows, "matmul: inner dim mismatch " + shape_str(A.rows, A.cols) + "*" +
                                      shape_str(B.rows, B.cols));
        Mat<Real> out(A.rows, B.cols);
        mm_nn(A, B, out);
        return make(std::move(out), [a, b](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>&A = g.nodes_[a.id].val, &B = g.nodes_[b.id].val;
            mm_nt_acc(go, B, g.nodes_[a.id].grad);  // dA += dC * B^T
            mm_tn_acc(A, go, g.nodes_[b.id].grad);  // dB += A^T * dC
        });
    }

    /// C = A * B^T. The workhorse for linear layers (y = x * W^T) and
    /// attention logits (Q * K^T).
    Var matmul_nt(Var a, Var b) {
        const Mat<Real>&A = val(a), &B = val(b);
        require(A.cols == B.cols, "matmul_nt: inner dim mismatch " + shape_str(A.rows, A.cols) +
                                      "*" + shape_str(B.rows, B.cols) + "^T");
        Mat<Real> out(A.rows, B.rows);
        mm_nt(A, B, out);
        return make(std::move(out), [a, b](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>&A = g.nodes_[a.id].val, &B = g.nodes_[b.id].val;
            mm_nn_acc(go, B, g.nodes_[a.id].grad);  // dA += dC * B
            mm_tn_acc(go, A, g.nodes_[b.id].grad);  // dB += dC^T * A
        });
    }

    Var transpose(Var a) {
        const Mat<Real>& A = val(a);
        Mat<Real> out(A.cols, A.rows);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) out(j, i) = A(i, j);
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (int i = 0; i < go.rows; ++i)
                for (int j = 0; j < go.cols; ++j) ga(j, i) += go(i, j);
        });
    }

    // -- row-structured ops -------------------------------------------------

    Var row_softmax(Var a) {
        const Mat<Real>& A = val(a);
        Mat<Real> out(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            Real mx = A(i, 0);
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A(i, j));
            Real sum = 0;
            for (int j = 0; j < A.cols; ++j) {
                out(i, j) = std::exp(A(i, j) - mx);
                sum += out(i, j);
            }
            for (int j = 0; j < A.cols; ++j) out(i, j) /= sum;
        }
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>&go = g.nodes_[self].grad, &Y = g.nodes_[self].val;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (int i = 0; i < Y.rows; ++i) {
                Real dot = 0;
                for (int j = 0; j < Y.cols; ++j) dot += go(i, j) * Y(i, j);
                for (int j = 0; j < Y.cols; ++j) ga(i, j) += Y(i, j) * (go(i, j) - dot);
            }
        });
    }

    Var row_log_softmax(Var a) {
        const Mat<Real>& A = val(a);
        Mat<Real> out(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            Real mx = A(i, 0);
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A(i, j));
            Real sum = 0;
            for (int j = 0; j < A.cols; ++j) sum += std::exp(A(i, j) - mx);
            const Real lse = mx + std::log(sum);
            for (int j = 0; j < A.cols; ++j) out(i, j) = A(i, j) - lse;
        }
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>&go = g.nodes_[self].grad, &Y = g.nodes_[self].val;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (int i = 0; i < Y.rows; ++i) {
                Real rowsum = 0;
                for (int j = 0; j < Y.cols; ++j) rowsum += go(i, j);
                for (int j = 0; j < Y.cols; ++j)
                    ga(i, j) += go(i, j) - std::exp(Y(i, j)) * rowsum;
            }
        });
    }

    /// Per-row layer normalization with scale/shift (gamma, beta are 1xC).
    Var layer_norm(Var a, Var gamma, Var beta, Real eps = Real(1e-5)) {
        const Mat<Real>&A = val(a), &G = val(gamma), &Bv = val(beta);
        require(G.rows == 1 && G.cols == A.cols && Bv.rows == 1 && Bv.cols == A.cols,
                "layer_norm: gamma/beta must be 1x" + std::to_string(A.cols));
        const int R = A.rows, C = A.cols;
        Mat<Real> xhat(R, C), out(R, C);
        std::vector<Real> inv_std(R);
        for (int i = 0; i < R; ++i) {
            Real mean = 0;
            for (int j = 0; j < C; ++j) mean += A(i, j);
            mean /= C;
            Real var = 0;
            for (int j = 0; j < C; ++j) {
                const Real d = A(i, j) - mean;
                var += d * d;
            }
            var /= C;
            inv_std[i] = Real(1) / std::sqrt(var + eps);
            for (int j = 0; j < C; ++j) {
                xhat(i, j) = (A(i, j) - mean) * inv_std[i];
                out(i, j) = xhat(i, j) * G(0, j) + Bv(0, j);
            }
        }
        auto xh = std::make_shared<Mat<Real>>(std::move(xhat));
        auto is = std::make_shared<std::vector<Real>>(std::move(inv_std));
        return make(std::move(out), [a, gamma, beta, xh, is](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>& G = g.nodes_[gamma.id].val;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            Mat<Real>& gg = g.nodes_[gamma.id].grad;
            Mat<Real>& gb = g.nodes_[beta.id].grad;
            const int R = go.rows, C = go.cols;
            for (int i = 0; i < R; ++i) {
                Real sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int j = 0; j < C; ++j) {
                    gg(0, j) += go(i, j) * (*xh)(i, j);
                    gb(0, j) += go(i, j);
                    const Real dxh = go(i, j) * G(0, j);
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * (*xh)(i, j);
                }
                for (int j = 0; j < C; ++j) {
                    const Real dxh = go(i, j) * G(0, j);
                    ga(i, j) += ((*is)[i] / C) * (C * dxh - sum_dxhat - (*xh)(i, j) * sum_dxhat_xhat);
                }
            }
        });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        require(!parts.empty(), "concat_rows: empty input");
        const int C = val(parts[0]).cols;
        int R = 0;
        for (Var p : parts) {
            require(val(p).cols == C, "concat_rows: column mismatch");
            R += val(p).rows;
        }
        Mat<Real> out(R, C);
        int r = 0;
        for (Var p : parts) {
            const Mat<Real>& P = val(p);
            for (int i = 0; i < P.rows; ++i)
                for (int j = 0; j < C; ++j) out(r + i, j) = P(i, j);
            r += P.rows;
        }
        auto ps = std::make_shared<std::vector<Var>>(parts);
        return make(std::move(out), [ps](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            int r = 0;
            for (Var p : *ps) {
                Mat<Real>& gp = g.nodes_[p.id].grad;
                for (int i = 0; i < gp.rows; ++i)
                    for (int j = 0; j < gp.cols; ++j) gp(i, j) += go(r + i, j);
                r += gp.rows;
            }
        });
    }

    Var slice_rows(Var a, int r0, int r1) {
        const Mat<Real>& A = val(a);
        require(0 <= r0 && r0 < r1 && r1 <= A.rows, "slice_rows: bad range");
        Mat<Real> out(r1 - r0, A.cols);
        for (int i = r0; i < r1; ++i)
            for (int j = 0; j < A.cols; ++j) out(i - r0, j) = A(i, j);
        return make(std::move(out), [a, r0](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (int i = 0; i < go.rows; ++i)
                for (int j = 0; j < go.cols; ++j) ga(r0 + i, j) += go(i, j);
        });
    }

    Var mean_rows(Var a) {
        const Mat<Real>& A = val(a);
        require(A.rows >= 1, "mean_rows: empty matrix");
        Mat<Real> out(1, A.cols);
        for (int j = 0; j < A.cols; ++j) {
            Real s = 0;
            for (int i = 0; i < A.rows; ++i) s += A(i, j);
            out(0, j) = s / A.rows;
        }
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            const Real inv = Real(1) / ga.rows;
            for (int i = 0; i < ga.rows; ++i)
                for (int j = 0; j < ga.cols; ++j) ga(i, j) += go(0, j) * inv;
        });
    }

    Var mean_all(Var a) {
        const Mat<Real>& A = val(a);
        require(!A.empty(), "mean_all: empty matrix");
        Real s = 0;
        for (Real v : A.a) s += v;
        Mat<Real> out = Mat<Real>::scalar(s / static_cast<Real>(A.size()));
        return make(std::move(out), [a](Graph& g, int self) {
            const Real go = g.nodes_[self].grad.a[0];
            Mat<Real>& ga = g.nodes_[a.id].grad;
            const Real inv = go / static_cast<Real>(ga.size());
            for (auto& x : ga.a) x += inv;
        });
    }

    Var sum_all(Var a) {
        const Mat<Real>& A = val(a);
        Real s = 0;
        for (Real v : A.a) s += v;
        Mat<Real> out = Mat<Real>::scalar(s);
        return make(std::move(out), [a](Graph& g, int self) {
            const Real go = g.nodes_[self].grad.a[0];
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (auto& x : ga.a) x += go;
        });
    }

    /// Row-wise dot products of two equal-shape matrices -> Nx1.
    Var rowwise_dot(Var a, Var b) {
        const Mat<Real>&A = val(a), &B = val(b);
        require(A.same_shape(B), "rowwise_dot: shape mismatch");
        Mat<Real> out(A.rows, 1);
        for (int i = 0; i < A.rows; ++i) {
            Real s = 0;
            for (int j = 0; j < A.cols; ++j) s += A(i, j) * B(i, j);
            out(i, 0) = s;
        }
        return make(std::move(out), [a, b](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>&A = g.nodes_[a.id].val, &B = g.nodes_[b.id].val;
            Mat<Real>&ga = g.nodes_[a.id].grad, &gb = g.nodes_[b.id].grad;
            for (int i = 0; i < A.rows; ++i)
                for (int j = 0; j < A.cols; ++j) {
                    ga(i, j) += go(i, 0) * B(i, j);
                    gb(i, j) += go(i, 0) * A(i, j);
                }
        });
    }

    /// L2-normalize each row. Throws naming the row index when a row has zero
    /// norm (the global contrastive loss contract).
    Var row_l2_normalize(Var a, const char* what = "embedding") {
        const Mat<Real>& A = val(a);
        Mat<Real> out(A.rows, A.cols);
        std::vector<Real> norms(A.rows);
        for (int i = 0; i < A.rows; ++i) {
            Real s = 0;
            for (int j = 0; j < A.cols; ++j) s += A(i, j) * A(i, j);
            norms[i] = std::sqrt(s);
            if (!(norms[i] > Real(0)))
                throw std::invalid_argument(std::string("row_l2_normalize: zero-norm ") + what +
                                            " at index " + std::to_string(i));
            for (int j = 0; j < A.cols; ++j) out(i, j) = A(i, j) / norms[i];
        }
        auto ns = std::make_shared<std::vector<Real>>(std::move(norms));
        return make(std::move(out), [a, ns](Graph& g, int self) {
            const Mat<Real>&go = g.nodes_[self].grad, &Y = g.nodes_[self].val;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (int i = 0; i < Y.rows; ++i) {
                Real dot = 0;
                for (int j = 0; j < Y.cols; ++j) dot += go(i, j) * Y(i, j);
                for (int j = 0; j < Y.cols; ++j)
                    ga(i, j) += (go(i, j) - dot * Y(i, j)) / (*ns)[i];
            }
        });
    }

    // -- elementwise nonlinearities ------------------------------------------

    Var tanh_op(Var a) {
        Mat<Real> out = val(a);
        for (auto& x : out.a) x = std::tanh(x);
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>&go = g.nodes_[self].grad, &Y = g.nodes_[self].val;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i)
                ga.a[i] += go.a[i] * (Real(1) - Y.a[i] * Y.a[i]);
        });
    }

    /// Exact GELU: x * Phi(x). Smooth, so finite-difference checks behave.
    Var gelu(Var a) {
        const Mat<Real>& A = val(a);
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) {
            const Real x = A.a[i];
            out.a[i] = Real(0.5) * x * (Real(1) + std::erf(x * Real(0.7071067811865475)));
        }
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>& A = g.nodes_[a.id].val;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) {
                const Real x = A.a[i];
                const Real phi = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
                const Real Phi = Real(0.5) * (Real(1) + std::erf(x * Real(0.7071067811865475)));
                ga.a[i] += go.a[i] * (Phi + x * phi);
            }
        });
    }

    /// Numerically stable softplus; -log(sigmoid(x)) == softplus(-x).
    Var softplus(Var a) {
        const Mat<Real>& A = val(a);
        Mat<Real> out(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) {
            const Real x = A.a[i];
            out.a[i] = x > Real(30) ? x : std::log1p(std::exp(std::min(x, Real(30))));
        }
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            const Mat<Real>& A = g.nodes_[a.id].val;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (std::size_t i = 0; i < go.size(); ++i) {
                const Real x = A.a[i];
                const Real sig = x >= 0 ? Real(1) / (Real(1) + std::exp(-x))
                                        : std::exp(x) / (Real(1) + std::exp(x));
                ga.a[i] += go.a[i] * sig;
            }
        });
    }

    // -- gathers -------------------------------------------------------------

    /// Y row i = table row idx[i]. Backward scatter-adds (duplicates sum).
    Var gather_rows(Var table, std::vector<int> idx) {
        const Mat<Real>& T = val(table);
        for (int k : idx)
            require(0 <= k && k < T.rows,
                    "gather_rows: index " + std::to_string(k) + " out of range");
        Mat<Real> out(static_cast<int>(idx.size()), T.cols);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < T.cols; ++j) out(static_cast<int>(i), j) = T(idx[i], j);
        auto ix = std::make_shared<std::vector<int>>(std::move(idx));
        return make(std::move(out), [table, ix](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            Mat<Real>& gt = g.nodes_[table.id].grad;
            for (std::size_t i = 0; i < ix->size(); ++i)
                for (int j = 0; j < go.cols; ++j) gt((*ix)[i], j) += go(static_cast<int>(i), j);
        });
    }

    /// c_i = A(i, cols[i]) -> Nx1 (label-logit selection).
    Var select_per_row(Var a, std::vector<int> cols) {
        const Mat<Real>& A = val(a);
        require(static_cast<int>(cols.size()) == A.rows, "select_per_row: need one column per row");
        for (int c : cols) require(0 <= c && c < A.cols, "select_per_row: column out of range");
        Mat<Real> out(A.rows, 1);
        for (int i = 0; i < A.rows; ++i) out(i, 0) = A(i, cols[i]);
        auto cs = std::make_shared<std::vector<int>>(std::move(cols));
        return make(std::move(out), [a, cs](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (int i = 0; i < go.rows; ++i) ga(i, (*cs)[i]) += go(i, 0);
        });
    }

    /// Diagonal of a square matrix -> Nx1.
    Var diag(Var a) {
        const Mat<Real>& A = val(a);
        require(A.rows == A.cols, "diag: matrix not square");
        Mat<Real> out(A.rows, 1);
        for (int i = 0; i < A.rows; ++i) out(i, 0) = A(i, i);
        return make(std::move(out), [a](Graph& g, int self) {
            const Mat<Real>& go = g.nodes_[self].grad;
            Mat<Real>& ga = g.nodes_[a.id].grad;
            for (int i = 0; i < go.rows; ++i) ga(i, i) += go(i, 0);
        });
    }

    // -- backward ------------------------------------------------------------

    /// Seeds d(loss)=1 and propagates through the tape in reverse order.
    /// Gradients of bound parameters are then available via grad().
    void backward(Var loss) {
        const Mat<Real>& L = val(loss);
        require(L.rows == 1 && L.cols == 1, "backward: loss must be 1x1");
        for (auto& n : nodes_) {
            n.grad = Mat<Real>(n.val.rows, n.val.cols, Real(0));
        }
        nodes_[loss.id].grad.a[0] = Real(1);
        for (int i = loss.id; i >= 0; --i) {
            if (nodes_[i].back) nodes_[i].back(*this, i);
        }
    }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    using BackFn = std::function<void(Graph&, int)>;

    struct Node {
        Mat<Real> val;
        Mat<Real> grad;
        BackFn back;
    };

    std::vector<Node> nodes_;
    std::vector<ParamBind> binds_;

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw std::logic_error("Graph: invalid Var");
        return v.id;
    }

    static void require(bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument("Graph: " + msg);
    }

    Var make(Mat<Real> v, BackFn back) {
        nodes_.push_back(Node{std::move(v), Mat<Real>(), std::move(back)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    static void accumulate(Mat<Real>& dst, const Mat<Real>& src, Real scale) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.a[i] += src.a[i] * scale;
    }

    // i-k-j loops keep the inner stride unit-length on row-major storage.
    static void mm_nn(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
        for (int i = 0; i < A.rows; ++i) {
            Real* c = C.row(i);
            for (int k = 0; k < A.cols; ++k) {
                const Real aik = A(i, k);
                const Real* b = B.row(k);
                for (int j = 0; j < B.cols; ++j) c[j] += aik * b[j];
            }
        }
    }

    static void mm_nn_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) { mm_nn(A, B, C); }

    static void mm_nt(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
        for (int i = 0; i < A.rows; ++i) {
            const Real* arow = A.row(i);
            Real* c = C.row(i);
            for (int j = 0; j < B.rows; ++j) {
                const Real* brow = B.row(j);
                Real s = 0;
                for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
                c[j] += s;
            }
        }
    }

    static void mm_nt_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) { mm_nt(A, B, C); }

    // C += A^T * B
    static void mm_tn_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
        for (int k = 0; k < A.rows; ++k) {
            const Real* arow = A.row(k);
            const Real* brow = B.row(k);
            for (int i = 0; i < A.cols; ++i) {
                Real* c = C.row(i);
                const Real aki = arow[i];
                for (int j = 0; j < B.cols; ++j) c[j] += aki * brow[j];
            }
        }
    }
};

template <typename Real>
using Var = typename Graph<Real>::Var;

}  // namespace slidealign
