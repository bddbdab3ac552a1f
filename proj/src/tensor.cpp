#include "asu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace asu {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace {

void check_finite(std::span<const double> v, const char* op_name) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite output in op '") + op_name + "'");
        }
    }
}

std::vector<double>& grad_buf(const std::shared_ptr<TensorNode>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
    return n->grad;
}

bool wants_grad(const Tensor& t) { return t.node()->requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    }
}

void require_2d(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw ContractError(std::string(op) + ": expected 2-D, got " + shape_str(a.shape()));
}

}  // namespace

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ContractError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                            std::to_string(data.size()) + " values");
    }
    for (auto e : shape) {
        if (e == 0) throw ContractError("Tensor::from: zero extent in shape " + shape_str(shape));
    }
    check_finite(data, "Tensor::from");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return from(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), v);
    return from(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

double Tensor::at2(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw ContractError("at2: tensor is not 2-D");
    return node_->value[r * node_->shape[1] + c];
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
}

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

Tensor Tape::emit(Shape shape, std::vector<double> value, bool grads_flow,
                  Adjoint adjoint, const char* op_name) {
    check_finite(value, op_name);
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = grads_flow && recording();
    Tensor out(n);
    if (n->requires_grad) records_.push_back({n, std::move(adjoint)});
    return out;
}

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    auto an = a.node(), bn = b.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a) || wants_grad(b),
        [an, bn](std::span<const double> g) {
            if (an->requires_grad) {
                auto& ga = grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
    auto an = a.node(), bn = b.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a) || wants_grad(b),
        [an, bn](std::span<const double> g) {
            if (an->requires_grad) {
                auto& ga = grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
    auto an = a.node(), bn = b.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a) || wants_grad(b),
        [an, bn](std::span<const double> g) {
            if (an->requires_grad) {
                auto& ga = grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
            }
        },
        "mul");
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * c;
    auto an = a.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a),
        [an, c](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        },
        "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + c;
    auto an = a.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a),
        [an](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        },
        "add_scalar");
}

Tensor exp_op(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a[i]);
    auto an = a.node();
    auto vcopy = v;
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a),
        [an, vcopy = std::move(vcopy)](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vcopy[i];
        },
        "exp");
}

Tensor log_op(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(a[i]);
    auto an = a.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a),
        [an](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / an->value[i];
        },
        "log");
}

Tensor tanh_op(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a[i]);
    auto an = a.node();
    auto vcopy = v;
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a),
        [an, vcopy = std::move(vcopy)](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - vcopy[i] * vcopy[i]);
        },
        "tanh");
}

Tensor gelu(const Tensor& a) {
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c3 = 0.044715;
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = a[i];
        v[i] = 0.5 * x * (1.0 + std::tanh(k * (x + c3 * x * x * x)));
    }
    auto an = a.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a),
        [an](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = an->value[i];
                double u = k * (x + c3 * x * x * x);
                double t = std::tanh(u);
                double du = k * (1.0 + 3.0 * c3 * x * x);
                double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                ga[i] += g[i] * d;
            }
        },
        "gelu");
}

Tensor log_sigmoid(const Tensor& a) {
    // log sigma(x) = -softplus(-x), stable in both tails
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = a[i];
        v[i] = x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
    }
    auto an = a.node();
    return Tape::active().emit(
        a.shape(), std::move(v), wants_grad(a),
        [an](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = an->value[i];
                double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                ga[i] += g[i] * (1.0 - s);
            }
        },
        "log_sigmoid");
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    auto an = a.node();
    return Tape::active().emit(
        {1}, {s}, wants_grad(a),
        [an](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
        },
        "sum");
}

// ---- structure ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ContractError("matmul: inner dims disagree " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    }
    std::vector<double> v(m * n, 0.0);
    {
        auto av = a.data();
        auto bv = b.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double aip = av[i * k + p];
                const double* brow = &bv[p * n];
                double* vrow = &v[i * n];
                for (std::size_t j = 0; j < n; ++j) vrow[j] += aip * brow[j];
            }
    }
    auto an = a.node(), bn = b.node();
    return Tape::active().emit(
        {m, n}, std::move(v), wants_grad(a) || wants_grad(b),
        [an, bn, m, k, n](std::span<const double> g) {
            if (an->requires_grad) {
                auto& ga = grad_buf(an);  // dA = dC B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double gij = g[i * n + j];
                        const double* brow = &bn->value[0];
                        for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * brow[p * n + j];
                    }
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);  // dB = A^T dC
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double aip = an->value[i * k + p];
                        const double* grow = &g[i * n];
                        double* gbrow = &gb[p * n];
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                    }
            }
        },
        "matmul");
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a[i * n + j];
    auto an = a.node();
    return Tape::active().emit(
        {n, m}, std::move(v), wants_grad(a),
        [an, m, n](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        },
        "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size()) {
        throw ContractError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> v(a.data().begin(), a.data().end());
    auto an = a.node();
    return Tape::active().emit(
        std::move(shape), std::move(v), wants_grad(a),
        [an](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        },
        "reshape");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t m = parts[0].dim(0);
    std::size_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.dim(0) != m) throw ContractError("concat_cols: row counts disagree");
        total += p.dim(1);
        rg = rg || wants_grad(p);
    }
    std::vector<double> v(m * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) v[i * total + off + j] = p[i * w + j];
        off += w;
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    return Tape::active().emit(
        {m, total}, std::move(v), rg,
        [nodes, m, total](std::span<const double> g) {
            std::size_t off2 = 0;
            for (const auto& n : nodes) {
                const std::size_t w = n->shape[1];
                if (n->requires_grad) {
                    auto& gn = grad_buf(n);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) gn[i * w + j] += g[i * total + off2 + j];
                }
                off2 += w;
            }
        },
        "concat_cols");
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t n) {
    require_2d(a, "slice_cols");
    const std::size_t m = a.dim(0), w = a.dim(1);
    if (start + n > w) throw ContractError("slice_cols: range out of bounds");
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[i * n + j] = a[i * w + start + j];
    auto an = a.node();
    return Tape::active().emit(
        {m, n}, std::move(v), wants_grad(a),
        [an, m, w, start, n](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * w + start + j] += g[i * n + j];
        },
        "slice_cols");
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t n) {
    require_2d(a, "slice_rows");
    const std::size_t m = a.dim(0), w = a.dim(1);
    if (start + n > m) throw ContractError("slice_rows: range out of bounds");
    std::vector<double> v(a.data().begin() + start * w, a.data().begin() + (start + n) * w);
    auto an = a.node();
    return Tape::active().emit(
        {n, w}, std::move(v), wants_grad(a),
        [an, w, start](std::span<const double> g) {
            auto& ga = grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[start * w + i] += g[i];
        },
        "slice_rows");
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
    require_2d(table, "gather_rows");
    const std::size_t rows = table.dim(0), w = table.dim(1);
    for (auto ix : indices) {
        if (ix >= rows) throw ContractError("gather_rows: index " + std::to_string(ix) + " out of range");
    }
    std::vector<double> v(indices.size() * w);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = &table.data()[indices[i] * w];
        std::copy(src, src + w, &v[i * w]);
    }
    auto tn = table.node();
    auto idx = indices;
    return Tape::active().emit(
        {indices.size(), w}, std::move(v), wants_grad(table),
        [tn, idx = std::move(idx), w](std::span<const double> g) {
            auto& gt = grad_buf(tn);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < w; ++j) gt[idx[i] * w + j] += g[i * w + j];
        },
        "gather_rows");
}

Tensor gather_entries(const Tensor& mat, const std::vector<std::size_t>& rows,
                      const std::vector<std::size_t>& cols) {
    require_2d(mat, "gather_entries");
    if (rows.size() != cols.size()) throw ContractError("gather_entries: index lists differ in length");
    const std::size_t m = mat.dim(0), w = mat.dim(1);
    std::vector<double> v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m || cols[i] >= w) throw ContractError("gather_entries: index out of range");
        v[i] = mat[rows[i] * w + cols[i]];
    }
    auto mn = mat.node();
    auto r = rows;
    auto c = cols;
    return Tape::active().emit(
        {rows.size()}, std::move(v), wants_grad(mat),
        [mn, r = std::move(r), c = std::move(c), w](std::span<const double> g) {
            auto& gm = grad_buf(mn);
            for (std::size_t i = 0; i < g.size(); ++i) gm[r[i] * w + c[i]] += g[i];
        },
        "gather_entries");
}

Tensor add_rowvec(const Tensor& mat, const Tensor& vec) {
    require_2d(mat, "add_rowvec");
    const std::size_t m = mat.dim(0), w = mat.dim(1);
    if (vec.size() != w) throw ContractError("add_rowvec: vector length " + std::to_string(vec.size()) +
                                             " vs row width " + std::to_string(w));
    std::vector<double> v(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) v[i * w + j] = mat[i * w + j] + vec[j];
    auto mn = mat.node(), vn = vec.node();
    return Tape::active().emit(
        {m, w}, std::move(v), wants_grad(mat) || wants_grad(vec),
        [mn, vn, m, w](std::span<const double> g) {
            if (mn->requires_grad) {
                auto& gm = grad_buf(mn);
                for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
            }
            if (vn->requires_grad) {
                auto& gv = grad_buf(vn);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) gv[j] += g[i * w + j];
            }
        },
        "add_rowvec");
}

// ---- softmax family -----------------------------------------------------

namespace {

// Softmax of one row with max subtraction; writes probabilities to out.
void softmax_row(const double* in, double* out, std::size_t n, double tau) {
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp((in[i] - mx) / tau);
        z += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

void check_softmax_args(const Tensor& logits, double tau, std::size_t axis, const char* op) {
    if (tau <= 0.0) throw ContractError(std::string(op) + ": tau must be positive, got " + std::to_string(tau));
    if (axis != logits.rank() - 1) {
        throw ContractError(std::string(op) + ": only last-axis softmax is supported");
    }
}

}  // namespace

Tensor softmax_tau(const Tensor& logits, double tau, std::size_t axis) {
    check_softmax_args(logits, tau, axis, "softmax_tau");
    const std::size_t n = logits.shape().back();
    const std::size_t rows = logits.size() / n;
    std::vector<double> v(logits.size());
    for (std::size_t r = 0; r < rows; ++r) softmax_row(&logits.data()[r * n], &v[r * n], n, tau);
    auto ln = logits.node();
    auto probs = v;
    return Tape::active().emit(
        logits.shape(), std::move(v), wants_grad(logits),
        [ln, probs = std::move(probs), rows, n, tau](std::span<const double> g) {
            auto& gl = grad_buf(ln);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* p = &probs[r * n];
                const double* gr = &g[r * n];
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += gr[i] * p[i];
                for (std::size_t i = 0; i < n; ++i) gl[r * n + i] += p[i] * (gr[i] - dot) / tau;
            }
        },
        "softmax_tau");
}

Tensor log_softmax(const Tensor& logits, std::size_t axis) {
    check_softmax_args(logits, 1.0, axis, "log_softmax");
    const std::size_t n = logits.shape().back();
    const std::size_t rows = logits.size() / n;
    std::vector<double> v(logits.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &logits.data()[r * n];
        double mx = in[0];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) z += std::exp(in[i] - mx);
        double lse = mx + std::log(z);
        for (std::size_t i = 0; i < n; ++i) v[r * n + i] = in[i] - lse;
    }
    auto ln = logits.node();
    auto logp = v;
    return Tape::active().emit(
        logits.shape(), std::move(v), wants_grad(logits),
        [ln, logp = std::move(logp), rows, n](std::span<const double> g) {
            auto& gl = grad_buf(ln);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = &g[r * n];
                double gsum = 0.0;
                for (std::size_t i = 0; i < n; ++i) gsum += gr[i];
                for (std::size_t i = 0; i < n; ++i)
                    gl[r * n + i] += gr[i] - std::exp(logp[r * n + i]) * gsum;
            }
        },
        "log_softmax");
}

Tensor causal_softmax_tau(const Tensor& scores, double tau) {
    require_2d(scores, "causal_softmax_tau");
    if (tau <= 0.0) throw ContractError("causal_softmax_tau: tau must be positive");
    const std::size_t t = scores.dim(0);
    if (scores.dim(1) != t) throw ContractError("causal_softmax_tau: matrix must be square");
    std::vector<double> v(t * t, 0.0);
    for (std::size_t r = 0; r < t; ++r) softmax_row(&scores.data()[r * t], &v[r * t], r + 1, tau);
    auto sn = scores.node();
    auto probs = v;
    return Tape::active().emit(
        {t, t}, std::move(v), wants_grad(scores),
        [sn, probs = std::move(probs), t, tau](std::span<const double> g) {
            auto& gs = grad_buf(sn);
            for (std::size_t r = 0; r < t; ++r) {
                const std::size_t vis = r + 1;
                const double* p = &probs[r * t];
                const double* gr = &g[r * t];
                double dot = 0.0;
                for (std::size_t i = 0; i < vis; ++i) dot += gr[i] * p[i];
                for (std::size_t i = 0; i < vis; ++i) gs[r * t + i] += p[i] * (gr[i] - dot) / tau;
            }
        },
        "causal_softmax_tau");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layer_norm");
    const std::size_t t = x.dim(0), d = x.dim(1);
    if (gain.size() != d || bias.size() != d) throw ContractError("layer_norm: gain/bias width mismatch");
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    std::vector<double> v(t * d);
    std::vector<double> xhat(t * d);
    std::vector<double> inv_std(t);
    for (std::size_t r = 0; r < t; ++r) {
        const double* xr = &x.data()[r * d];
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (xr[j] - mean) * is;
            v[r * d + j] = gain[j] * xhat[r * d + j] + bias[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return Tape::active().emit(
        {t, d}, std::move(v), wants_grad(x) || wants_grad(gain) || wants_grad(bias),
        [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), t, d](std::span<const double> g) {
            for (std::size_t r = 0; r < t; ++r) {
                const double* gr = &g[r * d];
                const double* xh = &xhat[r * d];
                if (gn->requires_grad) {
                    auto& gg = grad_buf(gn);
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
                }
                if (bn->requires_grad) {
                    auto& gb = grad_buf(bn);
                    for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                }
                if (xn->requires_grad) {
                    auto& gx = grad_buf(xn);
                    // dL/dxhat_j = g_j * gain_j; standard layer-norm backward
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        double dxh = gr[j] * gn->value[j];
                        s1 += dxh;
                        s2 += dxh * xh[j];
                    }
                    const double dn = static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        double dxh = gr[j] * gn->value[j];
                        gx[r * d + j] += inv_std[r] * (dxh - s1 / dn - xh[j] * s2 / dn);
                    }
                }
            }
        },
        "layer_norm");
}

// ---- backward & grad check ----------------------------------------------

void backward(const Tensor& root) {
    if (root.size() != 1) throw ContractError("backward: root must be scalar");
    auto& tape = Tape::active();
    auto rn = root.node();
    if (!rn->requires_grad) return;  // nothing reachable requires grad
    // Locate the root's record; everything after it cannot influence it.
    std::ptrdiff_t pos = -1;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(tape.records_.size()) - 1; i >= 0; --i) {
        if (tape.records_[i].out == rn) {
            pos = i;
            break;
        }
    }
    if (pos < 0) throw ContractError("backward: root is not on the active tape");
    grad_buf(rn)[0] = 1.0;
    for (std::ptrdiff_t i = pos; i >= 0; --i) {
        auto& rec = tape.records_[i];
        if (rec.out->grad.empty()) continue;  // does not feed the root
        rec.adjoint(rec.out->grad);
    }
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double step) {
    if (step <= 0.0) throw ContractError("grad_check: step must be positive");
    auto& tape = Tape::active();
    tape.clear();
    for (auto& l : leaves) l.zero_grad();
    Tensor out = f();
    backward(out);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& l : leaves) {
        if (l.grad().empty())
            analytic.emplace_back(l.size(), 0.0);
        else
            analytic.emplace_back(l.grad().begin(), l.grad().end());
    }
    tape.clear();

    double worst = 0.0;
    NoGradGuard ng;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto d = leaves[li].data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double saved = d[i];
            d[i] = saved + step;
            double fp = f().item();
            d[i] = saved - step;
            double fm = f().item();
            d[i] = saved;
            double numeric = (fp - fm) / (2.0 * step);
            double a = analytic[li][i];
            double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

double grad_check(const std::function<Tensor()>& f, Tensor point, double step) {
    std::array<Tensor, 1> leaves{point};
    return grad_check(f, leaves, step);
}

}  // namespace asu
