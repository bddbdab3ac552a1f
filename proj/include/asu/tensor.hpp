#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace asu {

// Contract violations (bad shapes, bad arguments, broken preconditions).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric failures (overflow, NaN/Inf surfacing mid-computation).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
};

// Value-semantics handle to a node on (or off) the active tape. Tensors are
// immutable once produced by an op; leaves may be rewritten through data()
// between tape resets (optimizer steps, finite-difference probes).
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }

    std::span<double> data() { return node_->value; }
    std::span<const double> data() const { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at2(std::size_t r, std::size_t c) const;

    // Scalar extraction; contract error if not a one-element tensor.
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Gradient buffer, allocated by backward(); empty span before that.
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;
    friend class Tape;
};

// Thread-local recording of primitive ops in execution order. Backward walks
// the records in reverse from the root, so accumulation order is fixed and
// runs are deterministic for a given seed.
class Tape {
public:
    // Adjoint receives d(root)/d(out) and must accumulate into input grads.
    using Adjoint = std::function<void(std::span<const double> out_grad)>;

    struct Record {
        std::shared_ptr<TensorNode> out;
        Adjoint adjoint;
    };

    static Tape& active();

    void clear() { records_.clear(); }
    std::size_t size() const { return records_.size(); }

    bool recording() const { return pause_depth_ == 0; }

    Tensor emit(Shape shape, std::vector<double> value, bool grads_flow,
                Adjoint adjoint, const char* op_name);

private:
    std::vector<Record> records_;
    int pause_depth_ = 0;
    friend class NoGradGuard;
    friend void backward(const Tensor& root);
};

// Suspends tape recording for the enclosing scope (teacher/base forwards,
// pure evaluation).
class NoGradGuard {
public:
    NoGradGuard() { ++Tape::active().pause_depth_; }
    ~NoGradGuard() { --Tape::active().pause_depth_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---- primitive ops ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t n);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t n);
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices);
// Picks mat[rows[i], cols[i]] into a 1-D tensor.
Tensor gather_entries(const Tensor& mat, const std::vector<std::size_t>& rows,
                      const std::vector<std::size_t>& cols);
Tensor add_rowvec(const Tensor& mat, const Tensor& vec);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor gelu(const Tensor& a);       // tanh approximation
Tensor log_sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);

// Row softmax over the last axis with attention temperature tau.
Tensor softmax_tau(const Tensor& logits, double tau, std::size_t axis);
Tensor log_softmax(const Tensor& logits, std::size_t axis);
// Softmax over the visible prefix of each row of a T x T score matrix;
// masked entries are exactly zero.
Tensor causal_softmax_tau(const Tensor& scores, double tau);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Reverse-mode sweep from a scalar root; accumulates into every
// requires_grad leaf reachable from it.
void backward(const Tensor& root);

// Central finite differences around the current values of `leaves` against
// the analytic gradients of f(); returns the max relative error
// |analytic - numeric| / max(1, |analytic|) over all coordinates.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double step);
double grad_check(const std::function<Tensor()>& f, Tensor point, double step);

}  // namespace asu
