#include "disdis/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace disdis::ad {

namespace {

std::string shape(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape(a) + " and " + shape(b));
}

void require_same_tape(const char* op, Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw std::logic_error(std::string(op) + ": operands live on different tapes");
    }
}

// True when b is a 1 x cols row broadcast over a's rows.
bool broadcast_row(const char* op, const Matrix& a, const Matrix& b) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return false;
    if (b.rows() == 1 && b.cols() == a.cols()) return true;
    shape_error(op, a, b);
}

Matrix softmax_of(const Matrix& x) {
    Matrix y = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
    y.array().colwise() /= y.rowwise().sum().array();
    return y;
}

}  // namespace

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw ShapeError("scalar: expected 1x1, got " + shape(v));
    }
    return v(0, 0);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true});
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
    nodes_.push_back(Node{p.value, {}, {}, &p, true});
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    for (Var in : inputs) {
        if (in.tape != this) throw std::logic_error("record: input from another tape");
        needs = needs || nodes_[in.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : Backward{}, nullptr, needs});
    return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
    if (root.tape != this) throw std::logic_error("backward: root from another tape");
    const Matrix& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ShapeError("backward: root must be 1x1, got " + shape(rv));
    }
    for (Node& n : nodes_) n.adjoint.resize(0, 0);
    if (!nodes_[root.id].needs_grad) return;
    nodes_[root.id].adjoint = Matrix::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.adjoint.size() == 0) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param != nullptr) {
            if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols()) {
                n.param->grad.setZero(n.value.rows(), n.value.cols());
            }
            n.param->grad += n.adjoint;
        }
    }
}

Var matmul(Var a, Var b) {
    require_same_tape("matmul", a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
    Matrix out = av * bv;
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        if (t.needs_grad(a)) t.accumulate(a.id, g * t.value(b).transpose());
        if (t.needs_grad(b)) t.accumulate(b.id, t.value(a).transpose() * g);
    });
}

Var add(Var a, Var b) {
    require_same_tape("add", a, b);
    const bool bc = broadcast_row("add", a.value(), b.value());
    Matrix out = bc ? Matrix(a.value().rowwise() + b.value().row(0)) : Matrix(a.value() + b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b, bc](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        t.accumulate(a.id, g);
        if (bc) {
            t.accumulate(b.id, g.colwise().sum());
        } else {
            t.accumulate(b.id, g);
        }
    });
}

Var sub(Var a, Var b) {
    require_same_tape("sub", a, b);
    const bool bc = broadcast_row("sub", a.value(), b.value());
    Matrix out = bc ? Matrix(a.value().rowwise() - b.value().row(0)) : Matrix(a.value() - b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b, bc](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        t.accumulate(a.id, g);
        if (bc) {
            t.accumulate(b.id, -g.colwise().sum());
        } else {
            t.accumulate(b.id, -g);
        }
    });
}

Var mul(Var a, Var b) {
    require_same_tape("mul", a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("mul", av, bv);
    Matrix out = av.cwiseProduct(bv);
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        if (t.needs_grad(a)) t.accumulate(a.id, g.cwiseProduct(t.value(b)));
        if (t.needs_grad(b)) t.accumulate(b.id, g.cwiseProduct(t.value(a)));
    });
}

Var scale(Var a, double c) {
    Matrix out = c * a.value();
    return a.tape->record(std::move(out), {a}, [a, c](Tape& t, std::size_t self) {
        t.accumulate(a.id, c * t.adjoint(self));
    });
}

Var tanh(Var a) {
    Matrix out = a.value().array().tanh().matrix();
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.accumulate(a.id, (t.adjoint(self).array() * (1.0 - y.array().square())).matrix());
    });
}

Var sigmoid(Var a) {
    Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.accumulate(a.id, (t.adjoint(self).array() * y.array() * (1.0 - y.array())).matrix());
    });
}

Var relu(Var a) {
    Matrix out = a.value().cwiseMax(0.0);
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a);
        t.accumulate(a.id, (x.array() > 0.0).select(t.adjoint(self).array(), 0.0).matrix());
    });
}

Var exp(Var a) {
    Matrix out = a.value().array().exp().matrix();
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.adjoint(self).cwiseProduct(t.value(self)));
    });
}

Var log(Var a) {
    Matrix out = a.value().array().log().matrix();
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.adjoint(self).cwiseQuotient(t.value(a)));
    });
}

Var square(Var a) {
    Matrix out = a.value().array().square().matrix();
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        t.accumulate(a.id, 2.0 * t.adjoint(self).cwiseProduct(t.value(a)));
    });
}

Var softmax_rows(Var a) {
    Matrix out = softmax_of(a.value());
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        const Matrix& g = t.adjoint(self);
        Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        t.accumulate(a.id, y.cwiseProduct(Matrix(g.colwise() - dot)));
    });
}

Var log_softmax_rows(Var a) {
    const Matrix& x = a.value();
    Eigen::VectorXd mx = x.rowwise().maxCoeff();
    Matrix shifted = x.colwise() - mx;
    Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
    Matrix out = shifted.colwise() - lse;
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        const Matrix& g = t.adjoint(self);
        Eigen::VectorXd gsum = g.rowwise().sum();
        Matrix p = y.array().exp().matrix();
        t.accumulate(a.id, g - Matrix(p.array().colwise() * gsum.array()));
    });
}

Var concat_cols(Var a, Var b) {
    require_same_tape("concat_cols", a, b);
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows()) shape_error("concat_cols", av, bv);
    Matrix out(av.rows(), av.cols() + bv.cols());
    out << av, bv;
    const Index ac = av.cols();
    const Index bcols = bv.cols();
    return a.tape->record(std::move(out), {a, b}, [a, b, ac, bcols](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        t.accumulate(a.id, g.leftCols(ac));
        t.accumulate(b.id, g.rightCols(bcols));
    });
}

Var slice_cols(Var a, Index begin, Index count) {
    const Matrix& av = a.value();
    if (begin < 0 || count < 0 || begin + count > av.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of bounds for " + shape(av));
    }
    Matrix out = av.middleCols(begin, count);
    const Index rows = av.rows();
    const Index cols = av.cols();
    return a.tape->record(std::move(out), {a}, [a, begin, count, rows, cols](Tape& t, std::size_t self) {
        Matrix g = Matrix::Zero(rows, cols);
        g.middleCols(begin, count) = t.adjoint(self);
        t.accumulate(a.id, g);
    });
}

Var transpose(Var a) {
    Matrix out = a.value().transpose();
    return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.adjoint(self).transpose());
    });
}

Var gather_rows(Var a, std::span<const Index> indices) {
    const Matrix& av = a.value();
    std::vector<Index> idx(indices.begin(), indices.end());
    for (Index i : idx) {
        if (i < 0 || i >= av.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " + shape(av));
        }
    }
    const Index n = static_cast<Index>(idx.size());
    Matrix out(n, av.cols());
    for (Index c = 0; c < av.cols(); ++c) {
        for (Index i = 0; i < n; ++i) out(i, c) = av(idx[i], c);
    }
    const Index rows = av.rows();
    return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx), rows](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        Matrix ga = Matrix::Zero(rows, g.cols());
        const Index n = static_cast<Index>(idx.size());
        for (Index c = 0; c < g.cols(); ++c) {
            for (Index i = 0; i < n; ++i) ga(idx[i], c) += g(i, c);
        }
        t.accumulate(a.id, ga);
    });
}

namespace {
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix reshape_row_major(const Matrix& m, Index rows, Index cols) {
    RowMajor rm = m;
    return Eigen::Map<const RowMajor>(rm.data(), rows, cols);
}
}  // namespace

Var reshape(Var a, Index rows, Index cols) {
    const Matrix& av = a.value();
    if (rows < 0 || cols < 0 || rows * cols != av.size()) {
        throw ShapeError("reshape: cannot view " + shape(av) + " as " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    const Index r0 = av.rows();
    const Index c0 = av.cols();
    return a.tape->record(reshape_row_major(av, rows, cols), {a}, [a, r0, c0](Tape& t, std::size_t self) {
        t.accumulate(a.id, reshape_row_major(t.adjoint(self), r0, c0));
    });
}

Var row_sum(Var a) {
    Matrix out = a.value().rowwise().sum();
    const Index cols = a.cols();
    return a.tape->record(std::move(out), {a}, [a, cols](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.adjoint(self).replicate(1, cols));
    });
}

Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    const Index rows = a.rows();
    const Index cols = a.cols();
    return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape& t, std::size_t self) {
        t.accumulate(a.id, Matrix::Constant(rows, cols, t.adjoint(self)(0, 0)));
    });
}

Var mean(Var a) {
    const Index n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty operand");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

GradCheckReport finite_diff_check(const LossFn& loss, std::span<Parameter* const> params, double step,
                                  double tolerance, double abs_floor, std::size_t max_entries_per_param) {
    GradCheckReport report;
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        Var root = loss(tape);
        if (!std::isfinite(root.scalar())) {
            report.max_rel_err = std::numeric_limits<double>::infinity();
            report.worst = "loss";
            return report;
        }
        tape.backward(root);
    }
    auto eval = [&]() {
        Tape tape;
        return loss(tape).scalar();
    };
    bool finite = true;
    for (Parameter* p : params) {
        const Matrix analytic = p->grad;
        const auto n = static_cast<std::size_t>(p->value.size());
        const std::size_t probes = max_entries_per_param == 0 ? n : std::min(n, max_entries_per_param);
        for (std::size_t i = 0; i < probes; ++i) {
            const auto flat = static_cast<Index>(i * n / probes);
            const Index r = flat / p->value.cols();
            const Index c = flat % p->value.cols();
            const double orig = p->value(r, c);
            // divide by the representable spacing, not the nominal 2h
            const double xp = orig + step;
            const double xm = orig - step;
            p->value(r, c) = xp;
            const double fp = eval();
            p->value(r, c) = xm;
            const double fm = eval();
            p->value(r, c) = orig;
            const double numeric = (fp - fm) / (xp - xm);
            const double a = analytic(r, c);
            ++report.checked;
            const std::string where = p->name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                if (finite) report.worst = where;
                finite = false;
                continue;
            }
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                if (finite) report.worst = where;
            }
        }
    }
    if (!finite) report.max_rel_err = std::numeric_limits<double>::infinity();
    report.pass = finite && report.max_rel_err <= tolerance;
    return report;
}

}  // namespace disdis::ad
