#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace disdis::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Thrown when the operands of a primitive have incompatible shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A named trainable array. The tape writes gradients into `grad`
/// (accumulating) whenever a leaf bound to it receives an adjoint.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is always topologically sorted.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Non-differentiable input.
    Var constant(Matrix value);
    /// Differentiable input whose adjoint can be read back with `adjoint()`.
    Var variable(Matrix value);
    /// Leaf bound to a parameter; its adjoint is added into `p.grad` by backward().
    Var param(Parameter& p);

    /// Records a node. `inputs` are used only to decide whether the node needs
    /// a backward pass; `fn` must push adjoints into those inputs.
    Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);

    /// Seeds the scalar root with 1 and propagates adjoints to every reachable leaf.
    void backward(Var root);

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    /// Adjoint of a node after backward(); empty matrix if nothing reached it.
    const Matrix& adjoint(Var v) const { return nodes_[v.id].adjoint; }
    const Matrix& adjoint(std::size_t id) const { return nodes_[id].adjoint; }
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    /// Adds `g` into the adjoint of node `id` (no-op for nodes that need no gradient).
    template <typename Derived>
    void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.adjoint.size() == 0) {
            n.adjoint = g;
        } else {
            n.adjoint += g;
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix adjoint;
        Backward backward;
        Parameter* param = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

// Primitive operations. Every one records its forward value and an exact
// adjoint rule. Shape violations raise ShapeError naming the op and shapes.

Var matmul(Var a, Var b);
/// Elementwise a + b. `b` may also be a 1 x cols row that is broadcast over rows.
Var add(Var a, Var b);
/// Elementwise a - b, with the same row broadcast rule as add().
Var sub(Var a, Var b);
/// Elementwise (Hadamard) product.
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, Index begin, Index count);
Var transpose(Var a);
/// out.row(i) = a.row(indices[i]); indices may repeat.
Var gather_rows(Var a, std::span<const Index> indices);
/// Row-major reinterpretation to rows x cols.
Var reshape(Var a, Index rows, Index cols);
/// Sum of each row, giving rows x 1.
Var row_sum(Var a);
/// Sum of all entries, giving 1 x 1.
Var sum(Var a);
Var mean(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

/// Evaluates a scalar loss on a fresh tape built from the bound parameters.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst;  // "<param>[row,col]"
    std::size_t checked = 0;
    bool pass = false;
};

/// Compares the tape gradient of every scalar in `params` against the central
/// difference (f(p+h) - f(p-h)) / 2h. The relative error of one entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor). The floor
/// keeps rounding noise in f (about eps * |f| / step) from dominating entries
/// whose true gradient is close to zero.
/// Non-finite values anywhere count as failure. With max_entries_per_param > 0
/// only that many evenly strided entries of each larger parameter are probed.
GradCheckReport finite_diff_check(const LossFn& loss, std::span<Parameter* const> params,
                                  double step = 1e-5, double tolerance = 1e-6,
                                  double abs_floor = 1e-4, std::size_t max_entries_per_param = 0);

}  // namespace disdis::ad
