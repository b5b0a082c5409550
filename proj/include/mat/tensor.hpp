#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mat/errors.hpp"
#include "mat/rng.hpp"

namespace mat {

/// Dense row-major array of 64-bit floats. Rank is 1 or 2 everywhere in this
/// project; the gradient buffer is allocated lazily by the optimizer/tape.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty, or same length as data

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel(), 0.0);
    }
    Tensor(std::size_t r, std::size_t c) : Tensor(std::vector<std::size_t>{r, c}) {}

    static Tensor vector_of(std::vector<double> v) {
        Tensor t;
        t.shape = {v.size()};
        t.data = std::move(v);
        return t;
    }
    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        Tensor t;
        t.shape = {r, c};
        t.data = std::move(v);
        return t;
    }
    static Tensor scalar(double v) {
        Tensor t;
        t.shape = {1};
        t.data = {v};
        return t;
    }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

/// Handle into a Tape. Cheap to copy; only valid for the tape that issued it.
struct ValueId {
    std::size_t idx = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape. Forward calls append operation records in order; a
/// backward pass walks the records once in reverse, accumulating adjoints.
/// Leaves created with `param` push their adjoint into the bound Tensor's
/// grad buffer, which is how the optimizer sees gradients.
///
/// The tape is single-threaded by construction: one forward/backward pass
/// owns it. Separate passes on separate tapes may run concurrently as long
/// as they do not share parameter Tensors with a concurrent writer.
class Tape {
public:
    struct Node {
        Tensor value;
        std::vector<double> adj;  // allocated during backward
        std::function<void(Tape&, Node&)> backward;  // null for constants
        Tensor* external = nullptr;  // parameter leaf: accumulate grad here
    };

    /// Parameter leaf; gradients accumulate into p.grad on backward().
    ValueId param(Tensor& p) {
        Node n;
        n.value = p;  // copy: the tape owns its forward values
        n.external = &p;
        return push(std::move(n));
    }

    /// Constant input; no gradient flows into it.
    ValueId constant(Tensor v) {
        Node n;
        n.value = std::move(v);
        return push(std::move(n));
    }

    const Tensor& val(ValueId id) const { return nodes_[id.idx].value; }
    std::size_t size() const { return nodes_.size(); }

    /// Low-level escape hatch: append a node with an explicit backward rule.
    /// `backward(tape, node)` must scatter node.adj into the parents' adj
    /// buffers via tape.adj(parent). Used by ops below and by tests that
    /// need a deliberately wrong rule.
    ValueId raw_op(Tensor value, std::function<void(Tape&, Node&)> backward) {
        Node n;
        n.value = std::move(value);
        n.backward = std::move(backward);
        return push(std::move(n));
    }

    std::vector<double>& adj(ValueId id) {
        Node& n = nodes_[id.idx];
        if (n.adj.size() != n.value.data.size()) n.adj.assign(n.value.data.size(), 0.0);
        return n.adj;
    }

    /// Seeds d(root)/d(root) = 1 and replays the tape in reverse. root must
    /// be scalar. Parameter leaves add their adjoints into Tensor::grad.
    void backward(ValueId root) {
        if (val(root).numel() != 1) throw ConfigError("backward: root must be a scalar");
        adj(root)[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.adj.empty()) continue;  // nothing flowed here
            if (n.backward) n.backward(*this, n);
            if (n.external) {
                n.external->ensure_grad();
                for (std::size_t k = 0; k < n.adj.size(); ++k) n.external->grad[k] += n.adj[k];
            }
        }
    }

    // ---- operations ----------------------------------------------------

    ValueId matmul(ValueId a, ValueId b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows())
            throw ConfigError("matmul: shape mismatch " + shape_str(A) + " x " + shape_str(B));
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        Tensor C(m, n);
        gemm(A.data.data(), B.data.data(), C.data.data(), m, k, n);
        return raw_op(std::move(C), [a, b, m, k, n](Tape& t, Node& node) {
            const Tensor& Av = t.val(a);
            const Tensor& Bv = t.val(b);
            // dA += dC * B^T ; dB += A^T * dC
            auto& da = t.adj(a);
            auto& db = t.adj(b);
            const double* dc = node.adj.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = dc[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) {
                        da[i * k + p] += g * Bv.data[p * n + j];
                        db[p * n + j] += g * Av.data[i * k + p];
                    }
                }
        });
    }

    ValueId add(ValueId a, ValueId b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!same_shape(A, B)) throw ConfigError("add: shape mismatch");
        Tensor C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
        return raw_op(std::move(C), [a, b](Tape& t, Node& node) {
            auto& da = t.adj(a);
            auto& db = t.adj(b);
            for (std::size_t i = 0; i < node.adj.size(); ++i) {
                da[i] += node.adj[i];
                db[i] += node.adj[i];
            }
        });
    }

    /// Broadcast a length-c bias over every row of an [r x c] matrix.
    ValueId add_bias(ValueId a, ValueId bias) {
        const Tensor& A = val(a);
        const Tensor& B = val(bias);
        if (B.numel() != A.cols()) throw ConfigError("add_bias: width mismatch");
        Tensor C = A;
        const std::size_t r = A.rows(), c = A.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) C.data[i * c + j] += B.data[j];
        return raw_op(std::move(C), [a, bias, r, c](Tape& t, Node& node) {
            auto& da = t.adj(a);
            auto& db = t.adj(bias);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    da[i * c + j] += node.adj[i * c + j];
                    db[j] += node.adj[i * c + j];
                }
        });
    }

    /// Elementwise product with a constant tensor (no gradient into it).
    ValueId mul_const(ValueId a, const Tensor& m) {
        const Tensor& A = val(a);
        if (!same_shape(A, m)) throw ConfigError("mul_const: shape mismatch");
        Tensor C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= m.data[i];
        return raw_op(std::move(C), [a, m](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i) da[i] += m.data[i] * node.adj[i];
        });
    }

    /// Adds a constant tensor (no gradient into the constant).
    ValueId add_const(ValueId a, const Tensor& m) {
        const Tensor& A = val(a);
        if (!same_shape(A, m)) throw ConfigError("add_const: shape mismatch");
        Tensor C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += m.data[i];
        return raw_op(std::move(C), [a](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i) da[i] += node.adj[i];
        });
    }

    ValueId scale(ValueId a, double s) {
        Tensor C = val(a);
        for (double& v : C.data) v *= s;
        return raw_op(std::move(C), [a, s](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i) da[i] += s * node.adj[i];
        });
    }

    ValueId relu(ValueId a) {
        Tensor C = val(a);
        for (double& v : C.data) v = v > 0.0 ? v : 0.0;
        return raw_op(std::move(C), [a](Tape& t, Node& node) {
            const Tensor& Av = t.val(a);
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i)
                if (Av.data[i] > 0.0) da[i] += node.adj[i];
        });
    }

    ValueId tanh_act(ValueId a) {
        Tensor C = val(a);
        for (double& v : C.data) v = std::tanh(v);
        return raw_op(std::move(C), [a](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i) {
                const double y = node.value.data[i];
                da[i] += (1.0 - y * y) * node.adj[i];
            }
        });
    }

    ValueId sigmoid(ValueId a) {
        Tensor C = val(a);
        for (double& v : C.data) v = sigmoid_scalar(v);
        return raw_op(std::move(C), [a](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i) {
                const double y = node.value.data[i];
                da[i] += y * (1.0 - y) * node.adj[i];
            }
        });
    }

    /// Row softmax restricted to unmasked columns; masked columns are 0.
    /// A row with no unmasked column comes out all-zero (sentinel, not fatal).
    ValueId masked_softmax_rows(ValueId a, const std::vector<std::uint8_t>& col_mask) {
        const Tensor& A = val(a);
        const std::size_t r = A.rows(), c = A.cols();
        if (col_mask.size() != c) throw ConfigError("masked_softmax_rows: mask width mismatch");
        Tensor C(r, c);
        for (std::size_t i = 0; i < r; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < c; ++j)
                if (col_mask[j]) mx = std::max(mx, A.data[i * c + j]);
            if (!std::isfinite(mx)) continue;  // fully masked row -> zeros
            double z = 0.0;
            for (std::size_t j = 0; j < c; ++j)
                if (col_mask[j]) {
                    const double e = std::exp(A.data[i * c + j] - mx);
                    C.data[i * c + j] = e;
                    z += e;
                }
            for (std::size_t j = 0; j < c; ++j)
                if (col_mask[j]) C.data[i * c + j] /= z;
        }
        return raw_op(std::move(C), [a, col_mask, r, c](Tape& t, Node& node) {
            // dx_j = y_j * (dy_j - sum_k y_k dy_k) over unmasked columns
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    if (col_mask[j]) dot += node.value.data[i * c + j] * node.adj[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    if (col_mask[j]) {
                        const double y = node.value.data[i * c + j];
                        da[i * c + j] += y * (node.adj[i * c + j] - dot);
                    }
            }
        });
    }

    /// Per-row standardization with learned gain/offset. Variance is biased
    /// (divide by d).
    ValueId layer_norm(ValueId x, ValueId gamma, ValueId beta, double eps) {
        const Tensor& X = val(x);
        const std::size_t r = X.rows(), d = X.cols();
        if (val(gamma).numel() != d || val(beta).numel() != d)
            throw ConfigError("layer_norm: gamma/beta width mismatch");
        Tensor C(r, d);
        std::vector<double> inv_std(r), xhat(r * d);
        for (std::size_t i = 0; i < r; ++i) {
            double mu = 0.0;
            for (std::size_t j = 0; j < d; ++j) mu += X.data[i * d + j];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double dv = X.data[i * d + j] - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(d);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[i] = is;
            for (std::size_t j = 0; j < d; ++j) {
                const double xh = (X.data[i * d + j] - mu) * is;
                xhat[i * d + j] = xh;
                C.data[i * d + j] = xh * val(gamma).data[j] + val(beta).data[j];
            }
        }
        return raw_op(std::move(C), [x, gamma, beta, r, d, inv_std = std::move(inv_std),
                                     xhat = std::move(xhat)](Tape& t, Node& node) {
            auto& dx = t.adj(x);
            auto& dg = t.adj(gamma);
            auto& db = t.adj(beta);
            const Tensor& G = t.val(gamma);
            for (std::size_t i = 0; i < r; ++i) {
                double mean_gdy = 0.0, mean_gdy_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gdy = G.data[j] * node.adj[i * d + j];
                    mean_gdy += gdy;
                    mean_gdy_xhat += gdy * xhat[i * d + j];
                    dg[j] += node.adj[i * d + j] * xhat[i * d + j];
                    db[j] += node.adj[i * d + j];
                }
                mean_gdy /= static_cast<double>(d);
                mean_gdy_xhat /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double gdy = G.data[j] * node.adj[i * d + j];
                    dx[i * d + j] +=
                        (gdy - mean_gdy - xhat[i * d + j] * mean_gdy_xhat) * inv_std[i];
                }
            }
        });
    }

    /// Inverted dropout: keep with probability 1-rate and scale kept entries
    /// by 1/(1-rate) so eval mode is the identity.
    ValueId dropout(ValueId a, double rate, Rng* rng, bool train) {
        if (!train || rate <= 0.0) return a;  // no node; identity
        if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
        if (!rng) throw ConfigError("dropout: train mode requires an rng");
        const Tensor& A = val(a);
        const double keep = 1.0 - rate;
        std::vector<std::uint8_t> kept(A.data.size());
        Tensor C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) {
            kept[i] = rng->bernoulli(keep) ? 1 : 0;
            C.data[i] = kept[i] ? C.data[i] / keep : 0.0;
        }
        return raw_op(std::move(C), [a, keep, kept = std::move(kept)](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i)
                if (kept[i]) da[i] += node.adj[i] / keep;
        });
    }

    /// Horizontal concat of matrices sharing a row count.
    ValueId concat_cols(std::span<const ValueId> parts) {
        if (parts.empty()) throw ConfigError("concat_cols: empty");
        const std::size_t r = val(parts[0]).rows();
        std::size_t total = 0;
        for (ValueId p : parts) {
            if (val(p).rows() != r) throw ConfigError("concat_cols: row mismatch");
            total += val(p).cols();
        }
        Tensor C(r, total);
        std::size_t off = 0;
        for (ValueId p : parts) {
            const Tensor& P = val(p);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < P.cols(); ++j)
                    C.data[i * total + off + j] = P.data[i * P.cols() + j];
            off += P.cols();
        }
        std::vector<ValueId> owned(parts.begin(), parts.end());
        return raw_op(std::move(C), [owned = std::move(owned), r, total](Tape& t, Node& node) {
            std::size_t off = 0;
            for (ValueId p : owned) {
                auto& dp = t.adj(p);
                const std::size_t c = t.val(p).cols();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        dp[i * c + j] += node.adj[i * total + off + j];
                off += c;
            }
        });
    }

    /// Mean over unmasked rows -> [1 x c]. Exact arithmetic mean.
    ValueId mean_pool_rows(ValueId a, const std::vector<std::uint8_t>& row_mask) {
        const Tensor& A = val(a);
        const std::size_t r = A.rows(), c = A.cols();
        if (row_mask.size() != r) throw ConfigError("mean_pool_rows: mask length mismatch");
        std::size_t m = 0;
        for (auto b : row_mask) m += b ? 1 : 0;
        if (m == 0) throw ConfigError("mean_pool_rows: no unmasked rows");
        Tensor C(1, c);
        for (std::size_t i = 0; i < r; ++i)
            if (row_mask[i])
                for (std::size_t j = 0; j < c; ++j) C.data[j] += A.data[i * c + j];
        for (double& v : C.data) v /= static_cast<double>(m);
        return raw_op(std::move(C), [a, row_mask, r, c, m](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < r; ++i)
                if (row_mask[i])
                    for (std::size_t j = 0; j < c; ++j)
                        da[i * c + j] += node.adj[j] / static_cast<double>(m);
        });
    }

    /// Gather rows by index; backward scatter-adds.
    ValueId select_rows(ValueId a, std::vector<std::size_t> idx) {
        const Tensor& A = val(a);
        const std::size_t c = A.cols();
        Tensor C(idx.size(), c);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= A.rows()) throw ConfigError("select_rows: index out of range");
            for (std::size_t j = 0; j < c; ++j) C.data[i * c + j] = A.data[idx[i] * c + j];
        }
        return raw_op(std::move(C), [a, idx = std::move(idx), c](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j)
                    da[idx[i] * c + j] += node.adj[i * c + j];
        });
    }

    /// Same data, new shape. Free in both directions.
    ValueId reshape(ValueId a, std::vector<std::size_t> shape) {
        Tensor C = val(a);
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        if (n != C.numel()) throw ConfigError("reshape: element count mismatch");
        C.shape = std::move(shape);
        return raw_op(std::move(C), [a](Tape& t, Node& node) {
            auto& da = t.adj(a);
            for (std::size_t i = 0; i < node.adj.size(); ++i) da[i] += node.adj[i];
        });
    }

    /// Mean squared error against a constant target -> scalar.
    ValueId mse_loss(ValueId pred, const Tensor& target) {
        const Tensor& P = val(pred);
        if (P.data.size() != target.data.size()) throw ConfigError("mse_loss: size mismatch");
        const std::size_t n = P.data.size();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = P.data[i] - target.data[i];
            acc += d * d;
        }
        Tensor C = Tensor::scalar(acc / static_cast<double>(n));
        return raw_op(std::move(C), [pred, target, n](Tape& t, Node& node) {
            auto& dp = t.adj(pred);
            const Tensor& Pv = t.val(pred);
            const double g = node.adj[0] * 2.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) dp[i] += g * (Pv.data[i] - target.data[i]);
        });
    }

    /// Mean binary cross-entropy from logits, the overflow-safe form
    /// max(z,0) - z*t + log1p(exp(-|z|)).
    ValueId bce_with_logits(ValueId logits, const Tensor& target) {
        const Tensor& Z = val(logits);
        if (Z.data.size() != target.data.size())
            throw ConfigError("bce_with_logits: size mismatch");
        const std::size_t n = Z.data.size();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = Z.data[i];
            acc += std::max(z, 0.0) - z * target.data[i] + std::log1p(std::exp(-std::abs(z)));
        }
        Tensor C = Tensor::scalar(acc / static_cast<double>(n));
        return raw_op(std::move(C), [logits, target, n](Tape& t, Node& node) {
            auto& dz = t.adj(logits);
            const Tensor& Zv = t.val(logits);
            const double g = node.adj[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                dz[i] += g * (sigmoid_scalar(Zv.data[i]) - target.data[i]);
        });
    }

    /// Mean of a list of scalars -> scalar. Used to average per-molecule
    /// losses over a batch.
    ValueId mean_scalars(std::span<const ValueId> xs) {
        if (xs.empty()) throw ConfigError("mean_scalars: empty");
        double acc = 0.0;
        for (ValueId x : xs) {
            if (val(x).numel() != 1) throw ConfigError("mean_scalars: non-scalar input");
            acc += val(x).data[0];
        }
        Tensor C = Tensor::scalar(acc / static_cast<double>(xs.size()));
        std::vector<ValueId> owned(xs.begin(), xs.end());
        return raw_op(std::move(C), [owned = std::move(owned)](Tape& t, Node& node) {
            const double g = node.adj[0] / static_cast<double>(owned.size());
            for (ValueId x : owned) t.adj(x)[0] += g;
        });
    }

    static double sigmoid_scalar(double z) {
        return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }

private:
    ValueId push(Node n) {
        nodes_.push_back(std::move(n));
        return ValueId{nodes_.size() - 1};
    }

    static std::string shape_str(const Tensor& t) {
        std::string s = "[";
        for (std::size_t i = 0; i < t.shape.size(); ++i)
            s += (i ? "x" : "") + std::to_string(t.shape[i]);
        return s + "]";
    }

    // ikj loop order keeps B's rows streaming; plenty for desk-scale shapes
    static void gemm(const double* A, const double* B, double* C, std::size_t m,
                     std::size_t k, std::size_t n) {
        for (std::size_t i = 0; i < m; ++i) {
            double* ci = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double a = A[i * k + p];
                if (a == 0.0) continue;
                const double* bp = B + p * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
            }
        }
    }

    std::vector<Node> nodes_;
};

/// y = x W + b as a single helper; b may be omitted by passing an invalid id.
inline ValueId linear(Tape& tape, ValueId x, ValueId w, ValueId b) {
    ValueId y = tape.matmul(x, w);
    return tape.add_bias(y, b);
}

}  // namespace mat
