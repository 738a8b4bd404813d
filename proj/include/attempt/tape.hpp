#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "attempt/rng.hpp"
#include "attempt/tensor.hpp"
#include "attempt/util.hpp"

namespace attempt {

struct Var {
    int id = -1;
};

namespace tapedetail {

// C(m,n) = A(m,k) * B(k,n), row-major. The inner loop runs over columns, so
// each output element accumulates its k terms in strictly increasing order.
// That makes results bit-identical regardless of how many rows the matrices
// have, which is what keeps encoder outputs independent of batch packing.
// (Library GEMMs split the reduction differently near row tails.)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    for (int r = 0; r < m; ++r) {
        T* crow = c + static_cast<size_t>(r) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + static_cast<size_t>(r) * k;
        for (int p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& x) {
    Tensor<T> t({x.cols(), x.rows()});
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) t.at(j, i) = x.at(i, j);
    return t;
}

}  // namespace tapedetail

// Reverse-mode tape over dense tensors. Every op computes its forward value
// eagerly and records a closure that propagates gradients to its inputs.
// All reductions run in a fixed order, so results are bit-reproducible and
// independent of padding, batch packing and buffer placement.
template <typename T>
class Tape {
public:
    explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

    const Tensor<T>& val(Var v) const { return nodes_[idx(v)].value; }
    const Tensor<T>& grad(Var v) const { return nodes_[idx(v)].grad; }
    T scalar(Var v) const {
        if (nodes_[idx(v)].value.numel() != 1) fail("tape: scalar() on non-scalar");
        return nodes_[idx(v)].value.data[0];
    }

    Var constant(Tensor<T> value) { return push("constant", std::move(value), {}, nullptr); }

    // Leaf bound to external parameter storage; gradients accumulate into
    // *ext_grad after backward().
    Var param(Tensor<T>* value, Tensor<T>* ext_grad) {
        Tensor<T> copy = *value;
        Var v = push("param", std::move(copy), {}, nullptr);
        nodes_[idx(v)].ext_grad = ext_grad;
        return v;
    }

    Var add(Var a, Var b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        if (av.shape != bv.shape)
            fail("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
        Tensor<T> out = av;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
        return push("add", std::move(out), {a, b}, [a, b](Tape& t, int self) {
            t.axpy(a, T(1), t.nodes_[self].grad);
            t.axpy(b, T(1), t.nodes_[self].grad);
        });
    }

    Var scale(Var a, T c) {
        Tensor<T> out = val(a);
        for (auto& x : out.data) x *= c;
        return push("scale", std::move(out), {a}, [a, c](Tape& t, int self) {
            t.axpy(a, c, t.nodes_[self].grad);
        });
    }

    // (m,n) + (n,) broadcast over rows.
    Var add_row(Var x, Var b) {
        const auto& xv = val(x);
        const auto& bv = val(b);
        if (xv.rank() != 2 || bv.numel() != xv.cols())
            fail("add_row: shape mismatch " + xv.shape_str() + " vs " + bv.shape_str());
        Tensor<T> out = xv;
        const int n = xv.cols();
        for (int i = 0; i < xv.rows(); ++i)
            for (int j = 0; j < n; ++j) out.at(i, j) += bv.data[static_cast<size_t>(j)];
        return push("add_row", std::move(out), {x, b}, [x, b](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad;
            t.axpy(x, T(1), g);
            auto& gb = t.grad_of(b);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) gb.data[static_cast<size_t>(j)] += g.at(i, j);
        });
    }

    Var matmul(Var a, Var b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
            fail("matmul: shape mismatch " + av.shape_str() + " x " + bv.shape_str());
        Tensor<T> out({av.rows(), bv.cols()});
        tapedetail::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), av.rows(), av.cols(),
                            bv.cols(), false);
        return push("matmul", std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad;
            const auto& av = t.val(a);
            const auto& bv = t.val(b);
            Tensor<T> bt = tapedetail::transposed(bv);
            tapedetail::gemm_nn(g.data.data(), bt.data.data(), t.grad_of(a).data.data(), g.rows(),
                                g.cols(), bt.cols(), true);
            Tensor<T> at = tapedetail::transposed(av);
            tapedetail::gemm_nn(at.data.data(), g.data.data(), t.grad_of(b).data.data(), at.rows(),
                                at.cols(), g.cols(), true);
        });
    }

    // A (m,k) times B^T where B is (n,k).
    Var matmul_nt(Var a, Var b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols())
            fail("matmul_nt: shape mismatch " + av.shape_str() + " x " + bv.shape_str() + "^T");
        Tensor<T> out({av.rows(), bv.rows()});
        Tensor<T> bt = tapedetail::transposed(bv);
        tapedetail::gemm_nn(av.data.data(), bt.data.data(), out.data.data(), av.rows(), av.cols(),
                            bt.cols(), false);
        return push("matmul_nt", std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad;
            const auto& av = t.val(a);
            const auto& bv = t.val(b);
            tapedetail::gemm_nn(g.data.data(), bv.data.data(), t.grad_of(a).data.data(), g.rows(),
                                g.cols(), bv.cols(), true);
            Tensor<T> gt = tapedetail::transposed(g);
            tapedetail::gemm_nn(gt.data.data(), av.data.data(), t.grad_of(b).data.data(),
                                gt.rows(), gt.cols(), av.cols(), true);
        });
    }

    // Row gather; shared by embedding lookup, CLS pooling and masked-position
    // selection. Backward scatter-adds.
    Var gather_rows(Var x, std::vector<int> rows) {
        const auto& xv = val(x);
        if (xv.rank() != 2) fail("gather_rows: input must be rank 2, got " + xv.shape_str());
        const int n = xv.cols();
        Tensor<T> out({static_cast<int>(rows.size()), n});
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= xv.rows())
                fail("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                     xv.shape_str());
            std::copy_n(&xv.at(rows[i], 0), n, &out.at(static_cast<int>(i), 0));
        }
        auto rows_p = std::make_shared<std::vector<int>>(std::move(rows));
        return push("gather_rows", std::move(out), {x}, [x, rows_p](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.grad_of(x);
            const int n = g.cols();
            for (size_t i = 0; i < rows_p->size(); ++i)
                for (int j = 0; j < n; ++j)
                    gx.at((*rows_p)[i], j) += g.at(static_cast<int>(i), j);
        });
    }

    // Per-row layer normalization with learned gain/bias over the last dim.
    Var layer_norm(Var x, Var gain, Var bias, T eps) {
        const auto& xv = val(x);
        const auto& gv = val(gain);
        const auto& bv = val(bias);
        if (xv.rank() != 2 || gv.numel() != xv.cols() || bv.numel() != xv.cols())
            fail("layer_norm: shape mismatch " + xv.shape_str());
        const int m = xv.rows(), n = xv.cols();
        Tensor<T> out({m, n});
        auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{m, n});
        auto inv_std = std::make_shared<Tensor<T>>(std::vector<int>{m});
        for (int i = 0; i < m; ++i) {
            T mean = 0;
            for (int j = 0; j < n; ++j) mean += xv.at(i, j);
            mean /= static_cast<T>(n);
            T var = 0;
            for (int j = 0; j < n; ++j) {
                T d = xv.at(i, j) - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            T is = T(1) / std::sqrt(var + eps);
            inv_std->data[static_cast<size_t>(i)] = is;
            for (int j = 0; j < n; ++j) {
                T xh = (xv.at(i, j) - mean) * is;
                xhat->at(i, j) = xh;
                out.at(i, j) =
                    xh * gv.data[static_cast<size_t>(j)] + bv.data[static_cast<size_t>(j)];
            }
        }
        return push("layer_norm", std::move(out), {x, gain, bias},
                    [x, gain, bias, xhat, inv_std](Tape& t, int self) {
                        const auto& g = t.nodes_[self].grad;
                        const auto& gv = t.val(gain);
                        auto& gx = t.grad_of(x);
                        auto& gg = t.grad_of(gain);
                        auto& gb = t.grad_of(bias);
                        const int m = g.rows(), n = g.cols();
                        for (int i = 0; i < m; ++i) {
                            T sum_dxhat = 0, sum_dxhat_xhat = 0;
                            for (int j = 0; j < n; ++j) {
                                T dy = g.at(i, j);
                                T xh = xhat->at(i, j);
                                gg.data[static_cast<size_t>(j)] += dy * xh;
                                gb.data[static_cast<size_t>(j)] += dy;
                                T dxh = dy * gv.data[static_cast<size_t>(j)];
                                sum_dxhat += dxh;
                                sum_dxhat_xhat += dxh * xh;
                            }
                            T is = inv_std->data[static_cast<size_t>(i)];
                            for (int j = 0; j < n; ++j) {
                                T dxh = g.at(i, j) * gv.data[static_cast<size_t>(j)];
                                gx.at(i, j) += is * (dxh - (sum_dxhat +
                                                            xhat->at(i, j) * sum_dxhat_xhat) /
                                                               static_cast<T>(n));
                            }
                        }
                    });
    }

    // Exact (erf) GELU.
    Var gelu(Var x) {
        const auto& xv = val(x);
        Tensor<T> out = xv;
        for (auto& v : out.data) {
            v = T(0.5) * v * (T(1) + std::erf(v * T(0.7071067811865475)));
        }
        return push("gelu", std::move(out), {x}, [x](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad;
            const auto& xv = t.val(x);
            auto& gx = t.grad_of(x);
            constexpr T inv_sqrt2 = T(0.7071067811865475);
            constexpr T inv_sqrt2pi = T(0.3989422804014327);
            for (size_t i = 0; i < xv.data.size(); ++i) {
                T v = xv.data[i];
                T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
                gx.data[i] += g.data[i] * (cdf + v * pdf);
            }
        });
    }

    Var softmax_rows(Var x) {
        const auto& xv = val(x);
        if (xv.rank() != 2) fail("softmax_rows: input must be rank 2, got " + xv.shape_str());
        Tensor<T> out = xv;
        softmax_rows_inplace(out.data.data(), out.rows(), out.cols());
        auto probs = std::make_shared<Tensor<T>>(out);
        return push("softmax_rows", std::move(out), {x}, [x, probs](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.grad_of(x);
            const int m = g.rows(), n = g.cols();
            for (int i = 0; i < m; ++i) {
                T dot = 0;
                for (int j = 0; j < n; ++j) dot += g.at(i, j) * probs->at(i, j);
                for (int j = 0; j < n; ++j)
                    gx.at(i, j) += probs->at(i, j) * (g.at(i, j) - dot);
            }
        });
    }

    struct AttnSpec {
        int batch = 1;
        int seq = 0;
        int heads = 1;
        std::vector<uint8_t> mask;  // batch*seq; 0 marks padding keys
    };

    // Fused masked multi-head scaled-dot-product attention over row-packed
    // (batch*seq, d) projections. Padding keys get -1e30 before the softmax,
    // which underflows to an exact zero weight, so padded batches reproduce
    // unpadded results bit for bit.
    Var attention(Var q, Var k, Var v, AttnSpec spec) {
        const auto& qv = val(q);
        const auto& kv = val(k);
        const auto& vv = val(v);
        if (qv.shape != kv.shape || qv.shape != vv.shape)
            fail("attention: q/k/v shapes differ " + qv.shape_str());
        const int rows = qv.rows(), d = qv.cols();
        if (rows != spec.batch * spec.seq) fail("attention: rows != batch*seq");
        if (d % spec.heads != 0) fail("attention: hidden dim not divisible by heads");
        if (static_cast<int>(spec.mask.size()) != rows) fail("attention: bad mask length");
        const int H = spec.heads, S = spec.seq, dh = d / H;
        const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

        Tensor<T> out({rows, d});
        auto probs = std::make_shared<Tensor<T>>(
            std::vector<int>{spec.batch * H * S, S});  // row (b*H+h)*S+i
        for (int b = 0; b < spec.batch; ++b) {
            const uint8_t* msk = spec.mask.data() + static_cast<size_t>(b) * S;
            for (int h = 0; h < H; ++h) {
                T* P = &probs->data[static_cast<size_t>((b * H + h)) * S * S];
                for (int i = 0; i < S; ++i) {
                    const T* qrow = &qv.at(b * S + i, h * dh);
                    for (int j = 0; j < S; ++j) {
                        if (!msk[j]) {
                            P[i * S + j] = T(-1e30);
                            continue;
                        }
                        const T* krow = &kv.at(b * S + j, h * dh);
                        T dot = 0;
                        for (int c = 0; c < dh; ++c) dot += qrow[c] * krow[c];
                        P[i * S + j] = dot * inv_sqrt_dh;
                    }
                }
                softmax_rows_inplace(P, S, S);
                for (int i = 0; i < S; ++i) {
                    T* orow = &out.at(b * S + i, h * dh);
                    for (int c = 0; c < dh; ++c) orow[c] = T(0);
                    for (int j = 0; j < S; ++j) {
                        T w = P[i * S + j];
                        const T* vrow = &vv.at(b * S + j, h * dh);
                        for (int c = 0; c < dh; ++c) orow[c] += w * vrow[c];
                    }
                }
            }
        }
        auto spec_p = std::make_shared<AttnSpec>(std::move(spec));
        return push(
            "attention", std::move(out), {q, k, v}, [q, k, v, probs, spec_p](Tape& t, int self) {
                const auto& g = t.nodes_[self].grad;
                const int H = spec_p->heads, S = spec_p->seq;
                const int d = g.cols(), dh = d / H;
                const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
                const auto& qv = t.val(q);
                const auto& kv = t.val(k);
                const auto& vv = t.val(v);
                auto& gq = t.grad_of(q);
                auto& gk = t.grad_of(k);
                auto& gv = t.grad_of(v);
                std::vector<T> dP(static_cast<size_t>(S) * S), dS(static_cast<size_t>(S) * S);
                for (int b = 0; b < spec_p->batch; ++b) {
                    for (int h = 0; h < H; ++h) {
                        const T* P = &probs->data[static_cast<size_t>((b * H + h)) * S * S];
                        // dP = dO V^T
                        for (int i = 0; i < S; ++i) {
                            const T* grow = &g.at(b * S + i, h * dh);
                            for (int j = 0; j < S; ++j) {
                                const T* vrow = &vv.at(b * S + j, h * dh);
                                T dot = 0;
                                for (int c = 0; c < dh; ++c) dot += grow[c] * vrow[c];
                                dP[static_cast<size_t>(i) * S + j] = dot;
                            }
                        }
                        // dS = P o (dP - rowsum(dP o P))
                        for (int i = 0; i < S; ++i) {
                            T dot = 0;
                            for (int j = 0; j < S; ++j)
                                dot += P[i * S + j] * dP[static_cast<size_t>(i) * S + j];
                            for (int j = 0; j < S; ++j)
                                dS[static_cast<size_t>(i) * S + j] =
                                    P[i * S + j] * (dP[static_cast<size_t>(i) * S + j] - dot);
                        }
                        // dV += P^T dO; dQ += dS K / sqrt(dh); dK += dS^T Q / sqrt(dh)
                        for (int i = 0; i < S; ++i)
                            for (int c = 0; c < dh; ++c) {
                                T acc_v = 0, acc_q = 0, acc_k = 0;
                                for (int s = 0; s < S; ++s) {
                                    acc_v += P[s * S + i] * g.at(b * S + s, h * dh + c);
                                    acc_q += dS[static_cast<size_t>(i) * S + s] *
                                             kv.at(b * S + s, h * dh + c);
                                    acc_k += dS[static_cast<size_t>(s) * S + i] *
                                             qv.at(b * S + s, h * dh + c);
                                }
                                gv.at(b * S + i, h * dh + c) += acc_v;
                                gq.at(b * S + i, h * dh + c) += acc_q * inv_sqrt_dh;
                                gk.at(b * S + i, h * dh + c) += acc_k * inv_sqrt_dh;
                            }
                    }
                }
            });
    }

    // Per-row negative log-likelihood of the target class; returns (n,1).
    Var softmax_xent(Var logits, std::vector<int> targets) {
        const auto& lv = val(logits);
        if (lv.rank() != 2 || static_cast<int>(targets.size()) != lv.rows())
            fail("softmax_xent: logits " + lv.shape_str() + " vs " +
                 std::to_string(targets.size()) + " targets");
        const int m = lv.rows(), n = lv.cols();
        auto probs = std::make_shared<Tensor<T>>(lv);
        softmax_rows_inplace(probs->data.data(), m, n);
        Tensor<T> out({m, 1});
        for (int i = 0; i < m; ++i) {
            int tgt = targets[static_cast<size_t>(i)];
            if (tgt < 0 || tgt >= n) fail("softmax_xent: target out of range");
            T mx = lv.at(i, 0);
            for (int j = 1; j < n; ++j) mx = std::max(mx, lv.at(i, j));
            T lse = 0;
            for (int j = 0; j < n; ++j) lse += std::exp(lv.at(i, j) - mx);
            out.at(i, 0) = mx + std::log(lse) - lv.at(i, tgt);
        }
        auto tgt_p = std::make_shared<std::vector<int>>(std::move(targets));
        return push("softmax_xent", std::move(out), {logits},
                    [logits, probs, tgt_p](Tape& t, int self) {
                        const auto& g = t.nodes_[self].grad;
                        auto& gl = t.grad_of(logits);
                        const int m = gl.rows(), n = gl.cols();
                        for (int i = 0; i < m; ++i) {
                            T go = g.at(i, 0);
                            for (int j = 0; j < n; ++j) gl.at(i, j) += go * probs->at(i, j);
                            gl.at(i, (*tgt_p)[static_cast<size_t>(i)]) -= go;
                        }
                    });
    }

    // Scalar dot(w, flatten(x)).
    Var weighted_sum(Var x, std::vector<T> weights) {
        const auto& xv = val(x);
        if (static_cast<int64_t>(weights.size()) != xv.numel())
            fail("weighted_sum: weight length mismatch");
        Tensor<T> out({1});
        T acc = 0;
        for (size_t i = 0; i < weights.size(); ++i) acc += weights[i] * xv.data[i];
        out.data[0] = acc;
        auto w_p = std::make_shared<std::vector<T>>(std::move(weights));
        return push("weighted_sum", std::move(out), {x}, [x, w_p](Tape& t, int self) {
            T go = t.nodes_[self].grad.data[0];
            auto& gx = t.grad_of(x);
            for (size_t i = 0; i < w_p->size(); ++i) gx.data[i] += go * (*w_p)[i];
        });
    }

    // Inverted dropout; identity when p == 0.
    Var dropout(Var x, T p, Rng& rng) {
        if (p < T(0) || p >= T(1)) fail("dropout: p must be in [0, 1)");
        if (p == T(0)) return x;
        const auto& xv = val(x);
        Tensor<T> out = xv;
        auto keep = std::make_shared<std::vector<T>>(xv.data.size());
        const T inv_keep = T(1) / (T(1) - p);
        for (size_t i = 0; i < out.data.size(); ++i) {
            T m = rng.uniform() < static_cast<double>(p) ? T(0) : inv_keep;
            (*keep)[i] = m;
            out.data[i] *= m;
        }
        return push("dropout", std::move(out), {x}, [x, keep](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.grad_of(x);
            for (size_t i = 0; i < keep->size(); ++i) gx.data[i] += g.data[i] * (*keep)[i];
        });
    }

    // Seeds d(loss)/d(loss)=1 and sweeps the reachable subgraph in reverse.
    // Parameter leaves accumulate into their bound external grad tensors.
    void backward(Var loss) {
        if (nodes_[idx(loss)].value.numel() != 1) fail("backward: loss must be scalar");
        std::vector<uint8_t> reachable(nodes_.size(), 0);
        mark_reachable(idx(loss), reachable);
        for (size_t i = 0; i < nodes_.size(); ++i)
            if (reachable[i]) nodes_[i].grad = Tensor<T>(nodes_[i].value.shape);
        nodes_[idx(loss)].grad.data[0] = T(1);
        for (int i = idx(loss); i >= 0; --i) {
            if (!reachable[static_cast<size_t>(i)]) continue;
            auto& node = nodes_[static_cast<size_t>(i)];
            if (node.backward_fn) node.backward_fn(*this, i);
            if (node.ext_grad) {
                for (size_t j = 0; j < node.grad.data.size(); ++j)
                    node.ext_grad->data[j] += node.grad.data[j];
            }
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::string op;
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<int> inputs;
        std::function<void(Tape&, int)> backward_fn;
        Tensor<T>* ext_grad = nullptr;
    };

    static int idx(Var v) {
        if (v.id < 0) fail("tape: invalid var");
        return v.id;
    }

    Tensor<T>& grad_of(Var v) { return nodes_[idx(v)].grad; }

    // grad(target) += coeff * g, elementwise.
    void axpy(Var target, T coeff, const Tensor<T>& g) {
        auto& dst = grad_of(target);
        if (dst.data.size() != g.data.size()) fail("tape: gradient shape mismatch in axpy");
        for (size_t i = 0; i < g.data.size(); ++i) dst.data[i] += coeff * g.data[i];
    }

    // Scalar max/exp/sum on purpose: vectorized transcendentals and tree
    // reductions round differently depending on length and alignment.
    static void softmax_rows_inplace(T* m, int rows, int cols) {
        for (int i = 0; i < rows; ++i) {
            T* row = m + static_cast<size_t>(i) * cols;
            T mx = row[0];
            for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
            T sum = 0;
            for (int j = 0; j < cols; ++j) {
                T e = std::exp(row[j] - mx);
                row[j] = e;
                sum += e;
            }
            for (int j = 0; j < cols; ++j) row[j] /= sum;
        }
    }

    void mark_reachable(int root, std::vector<uint8_t>& reachable) const {
        std::vector<int> stack{root};
        while (!stack.empty()) {
            int i = stack.back();
            stack.pop_back();
            if (reachable[static_cast<size_t>(i)]) continue;
            reachable[static_cast<size_t>(i)] = 1;
            for (int in : nodes_[static_cast<size_t>(i)].inputs) stack.push_back(in);
        }
    }

    Var push(const char* op, Tensor<T> value, std::vector<Var> inputs,
             std::function<void(Tape&, int)> backward_fn) {
        if (check_finite_) {
            for (T v : value.data)
                if (!std::isfinite(static_cast<double>(v)))
                    fail(std::string("tape: non-finite value produced by ") + op);
        }
        Node node;
        node.op = op;
        node.value = std::move(value);
        for (Var v : inputs) node.inputs.push_back(idx(v));
        node.backward_fn = std::move(backward_fn);
        nodes_.push_back(std::move(node));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    bool check_finite_;
    std::vector<Node> nodes_;
};

}  // namespace attempt
